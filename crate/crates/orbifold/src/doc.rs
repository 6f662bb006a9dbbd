//! The JSON document format consumed and emitted by the CLI.
//!
//! A document describes an orbifold presentation in plain data: groups by
//! multiplication table, charts with their domains and linear actions,
//! affine injections, and optionally a bundle cocycle, candidate sections,
//! a metric connection, a partition of unity, and complex structures.
//! [`compile`] turns a parsed [`InputDoc`] into the crate's domain types
//! (a [`Model`]); [`document`] goes the other way so that built-in examples
//! can be exported, edited, and re-ingested.
//!
//! Numbers appear in two interchangeable spellings: a JSON number (read as
//! the exact `f64` it denotes) or a string `"a/b"` holding an exact rational.
//! Exactness matters: chart bounds and group tables feed checks with zero
//! tolerance, so the format never forces a decimal approximation.
//! Scalar fields that vary over a chart (transitions, sections, partition
//! weights) are expression strings in the chart coordinates `x1, x2, ...`;
//! connection entries are 1-form strings such as `"x2*dx1 - x1*dx2"`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atlas::{
    AffineMap, Atlas, Chart, Composition, Domain, Embedding, Injection, PartitionOfUnity,
};
use crate::bundles::{Bundle, Section};
use crate::chernweil::Connection;
use crate::expr::{factor_string, parse, Expr, FormExpr, MatrixForm, ParseError, Scalar};
use crate::groups::{trivial_group, FiniteGroup, Hom, Representation};
use crate::linalg::RMat;
use crate::sectors::ComplexStructure;

/// Everything a document can describe, compiled into domain types.
///
/// The atlas is always present; the remaining pieces are optional layers
/// that individual subcommands require or ignore.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub atlas: Atlas,
    pub bundle: Option<Bundle>,
    /// Named candidate sections, in document order.
    pub sections: Vec<(String, Section)>,
    pub connection: Option<Connection>,
    pub partition: Option<PartitionOfUnity>,
    /// Complex structure on the base charts (used for sector gradings).
    pub complex: Option<ComplexStructure>,
}

impl Model {
    /// The declared partition of unity, or the uniform one when the
    /// document left it out.
    pub fn partition_or_uniform(&self) -> PartitionOfUnity {
        self.partition.clone().unwrap_or_else(|| PartitionOfUnity::uniform(&self.atlas))
    }
}

/// A number literal: either a JSON number or an exact rational string
/// (`"2/3"`, `"-5"`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RatNum {
    Number(f64),
    Text(String),
}

type MatrixDoc = Vec<Vec<RatNum>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDoc {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<GroupDoc>,
    pub charts: Vec<ChartDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub injections: Vec<InjectionDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compositions: Vec<CompositionDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<BundleDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sections: Vec<SectionDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connection: Option<ConnectionDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionDoc>,
    /// Complex structure on the base: one `dim x dim` matrix per chart.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complex_structure: Option<Vec<MatrixDoc>>,
}

/// A finite group given by its full multiplication table:
/// `table[i][j]` is the index of the product of elements `i` and `j`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupDoc {
    pub name: String,
    /// Redundant with `table.len()`; checked when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    pub table: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainDoc {
    Ball { dim: usize },
    Box { bounds: Vec<(RatNum, RatNum)> },
}

/// A chart: a domain plus a linear action of a named group. Charts with no
/// `group` (and no `action`) get the trivial group.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartDoc {
    pub name: String,
    pub domain: DomainDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// One `dim x dim` matrix per group element, aligned with the table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Vec<MatrixDoc>>,
}

/// An affine embedding of chart `src` into chart `dst`, together with the
/// injective homomorphism `lambda` of the source group into the target
/// group (as a map of element indices).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub src: usize,
    pub dst: usize,
    pub matrix: MatrixDoc,
    pub translation: Vec<RatNum>,
    pub lambda: Vec<usize>,
}

/// A declared composition law: `second . first = element * composite`,
/// where `element` is an index in the target chart's group (identity when
/// omitted). Indices refer to the `injections` array.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionDoc {
    pub first: usize,
    pub second: usize,
    pub composite: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleDoc {
    pub rank: usize,
    /// Whether the cocycle claims orthogonal transitions and actions.
    #[serde(default = "default_true")]
    pub orthogonal: bool,
    /// Per chart, one `rank x rank` fiber matrix per group element.
    pub fiber_actions: Vec<Vec<MatrixDoc>>,
    /// Per injection, a `rank x rank` matrix of expression strings in the
    /// source chart's coordinates.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transitions: Vec<Vec<Vec<String>>>,
    /// Optional fiberwise complex structure: one constant `rank x rank`
    /// matrix per chart.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complex: Option<Vec<MatrixDoc>>,
}

/// A candidate section: per chart, a fiber-valued expression vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionDoc {
    pub name: String,
    pub per_chart: Vec<Vec<String>>,
}

/// A connection: per chart, a `rank x rank` matrix of 1-form strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionDoc {
    /// Whether the connection claims to be metric (skew in an orthogonal
    /// frame); checked structurally during validation.
    #[serde(default = "default_true")]
    pub metric: bool,
    pub per_chart: Vec<Vec<Vec<String>>>,
}

/// A partition of unity: one weight expression per chart, plus the overlap
/// groups (sets of injection indices sharing a source chart) over which the
/// weights are required to sum to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionDoc {
    pub weights: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overlaps: Vec<Vec<usize>>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Error)]
pub enum DocError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{context}: {source}")]
    Expr {
        context: String,
        #[source]
        source: ParseError,
    },
    #[error("{context}: {detail}")]
    OneForm { context: String, detail: String },
    #[error("{context}: `{text}` is not a rational number")]
    Number { context: String, text: String },
    #[error("{0}")]
    Shape(String),
    #[error("chart `{chart}` references unknown group `{group}`")]
    UnknownGroup { chart: String, group: String },
    #[error("group `{name}` failed validation:\n{details}")]
    Group { name: String, details: String },
}

fn shape(msg: impl Into<String>) -> DocError {
    DocError::Shape(msg.into())
}

impl RatNum {
    fn to_rational(&self, context: &str) -> Result<BigRational, DocError> {
        let fail = || DocError::Number {
            context: context.to_string(),
            text: match self {
                RatNum::Number(f) => f.to_string(),
                RatNum::Text(s) => s.clone(),
            },
        };
        match self {
            RatNum::Number(f) => BigRational::from_float(*f).ok_or_else(fail),
            RatNum::Text(s) => {
                let (numer, denom) = match s.split_once('/') {
                    Some((n, d)) => (n.trim(), d.trim()),
                    None => (s.trim(), "1"),
                };
                let n: BigInt = numer.parse().map_err(|_| fail())?;
                let d: BigInt = denom.parse().map_err(|_| fail())?;
                if d == BigInt::from(0) {
                    return Err(fail());
                }
                Ok(BigRational::new(n, d))
            }
        }
    }

    fn to_f64(&self, context: &str) -> Result<f64, DocError> {
        match self {
            RatNum::Number(f) => Ok(*f),
            RatNum::Text(_) => {
                let r = self.to_rational(context)?;
                num_traits::ToPrimitive::to_f64(&r).ok_or_else(|| DocError::Number {
                    context: context.to_string(),
                    text: format!("{r}"),
                })
            }
        }
    }

    /// Exact rationals become exact [`Scalar::Rational`]s; JSON numbers
    /// stay floats (so an intentionally irrational entry is not coerced).
    fn to_scalar(&self, context: &str) -> Result<Scalar, DocError> {
        match self {
            RatNum::Number(f) => Ok(Scalar::Float(*f)),
            RatNum::Text(_) => Ok(Scalar::Rational(self.to_rational(context)?)),
        }
    }

    fn from_scalar(s: &Scalar) -> RatNum {
        match s {
            Scalar::Rational(r) => RatNum::from_rational(r),
            Scalar::Float(f) => RatNum::Number(*f),
        }
    }

    fn from_rational(r: &BigRational) -> RatNum {
        if r.denom().is_one() {
            RatNum::Text(r.numer().to_string())
        } else {
            RatNum::Text(format!("{}/{}", r.numer(), r.denom()))
        }
    }
}

/// Parse a document from JSON text.
pub fn from_json(text: &str) -> Result<InputDoc, DocError> {
    Ok(serde_json::from_str(text)?)
}

/// Serialize a document as pretty-printed JSON with a trailing newline.
pub fn to_json(doc: &InputDoc) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("document serialization cannot fail");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Compilation: documents -> domain types
// ---------------------------------------------------------------------------

/// Compile a parsed document into domain types, resolving group names,
/// parsing expression strings, and checking the declared shapes.
///
/// Compilation checks only what is needed to build well-formed values;
/// the mathematical laws (homomorphism properties, cocycle conditions,
/// equivariance) are the business of the `validate` reports downstream.
pub fn compile(doc: &InputDoc) -> Result<Model, DocError> {
    let mut group_docs: BTreeMap<&str, &GroupDoc> = BTreeMap::new();
    for g in &doc.groups {
        if group_docs.insert(g.name.as_str(), g).is_some() {
            return Err(shape(format!("duplicate group name `{}`", g.name)));
        }
        if g.table.len() != g.table.first().map_or(0, Vec::len) {
            return Err(shape(format!("group `{}` has a non-square table", g.name)));
        }
        if let Some(order) = g.order {
            if order != g.table.len() {
                return Err(shape(format!(
                    "group `{}` declares order {order} but its table has {} rows",
                    g.name,
                    g.table.len()
                )));
            }
        }
    }

    let mut charts = Vec::with_capacity(doc.charts.len());
    for c in &doc.charts {
        let domain = compile_domain(&c.domain, &c.name)?;
        let dim = domain.dim();
        let group = match (&c.group, &c.action) {
            (None, None) => trivial_group(dim),
            (Some(gname), Some(action)) => {
                let gdoc = group_docs.get(gname.as_str()).ok_or_else(|| {
                    DocError::UnknownGroup { chart: c.name.clone(), group: gname.clone() }
                })?;
                if action.len() != gdoc.table.len() {
                    return Err(shape(format!(
                        "chart `{}` gives {} action matrices for the order-{} group `{gname}`",
                        c.name,
                        action.len(),
                        gdoc.table.len()
                    )));
                }
                let base = action
                    .iter()
                    .enumerate()
                    .map(|(k, m)| {
                        to_rmat(m, dim, dim, &format!("chart `{}` action[{k}]", c.name))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let (report, group) = FiniteGroup::analyze(base, Some(gdoc.table.clone()));
                group.ok_or_else(|| DocError::Group {
                    name: gname.clone(),
                    details: report.to_string(),
                })?
            }
            (Some(_), None) => {
                return Err(shape(format!(
                    "chart `{}` names a group but gives no action matrices",
                    c.name
                )))
            }
            (None, Some(_)) => {
                return Err(shape(format!(
                    "chart `{}` gives action matrices but names no group",
                    c.name
                )))
            }
        };
        charts.push(Chart { name: c.name.clone(), domain, group });
    }

    let mut injections = Vec::with_capacity(doc.injections.len());
    for (k, inj) in doc.injections.iter().enumerate() {
        let name = inj.name.clone().unwrap_or_else(|| format!("inj{k}"));
        if inj.src >= charts.len() || inj.dst >= charts.len() {
            return Err(shape(format!("injection `{name}` references a chart out of range")));
        }
        let context = format!("injection `{name}`");
        let mat = inj
            .matrix
            .iter()
            .map(|row| row.iter().map(|e| e.to_scalar(&context)).collect())
            .collect::<Result<Vec<Vec<Scalar>>, _>>()?;
        let trans = inj
            .translation
            .iter()
            .map(|e| e.to_scalar(&context))
            .collect::<Result<Vec<Scalar>, _>>()?;
        if mat.len() != trans.len() || mat.iter().any(|row| row.len() != mat[0].len()) {
            return Err(shape(format!("{context} has inconsistent matrix/translation shapes")));
        }
        injections.push(Injection {
            name,
            src: inj.src,
            dst: inj.dst,
            embedding: Embedding::Affine(AffineMap { mat, trans }),
            hom: Hom { map: inj.lambda.clone() },
        });
    }

    let mut compositions = Vec::with_capacity(doc.compositions.len());
    for comp in &doc.compositions {
        if [comp.first, comp.second, comp.composite].iter().any(|&i| i >= injections.len()) {
            return Err(shape("composition references an injection out of range".to_string()));
        }
        let element = match comp.element {
            Some(e) => e,
            None => charts[injections[comp.composite].dst].group.identity(),
        };
        compositions.push(Composition {
            first: comp.first,
            second: comp.second,
            composite: comp.composite,
            element,
        });
    }

    let atlas = Atlas { name: doc.name.clone(), charts, injections, compositions };

    let bundle = match &doc.bundle {
        None => None,
        Some(b) => {
            if b.fiber_actions.len() != atlas.charts.len() {
                return Err(shape("bundle.fiber_actions needs one entry per chart".to_string()));
            }
            let mut fiber_reps = Vec::with_capacity(b.fiber_actions.len());
            for (i, per_element) in b.fiber_actions.iter().enumerate() {
                let order = atlas.charts[i].group.order();
                if per_element.len() != order {
                    return Err(shape(format!(
                        "bundle.fiber_actions[{i}] has {} matrices for an order-{order} group",
                        per_element.len()
                    )));
                }
                let mats = per_element
                    .iter()
                    .enumerate()
                    .map(|(k, m)| {
                        to_rmat(m, b.rank, b.rank, &format!("bundle.fiber_actions[{i}][{k}]"))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                fiber_reps.push(Representation { mats });
            }
            if !b.transitions.is_empty() && b.transitions.len() != atlas.injections.len() {
                return Err(shape(
                    "bundle.transitions needs one matrix per injection".to_string(),
                ));
            }
            let mut transitions = Vec::with_capacity(b.transitions.len());
            for (k, rows) in b.transitions.iter().enumerate() {
                transitions.push(parse_expr_matrix(
                    rows,
                    b.rank,
                    &format!("bundle.transitions[{k}]"),
                )?);
            }
            if transitions.is_empty() && !atlas.injections.is_empty() {
                return Err(shape(
                    "bundle.transitions needs one matrix per injection".to_string(),
                ));
            }
            let complex = match &b.complex {
                None => None,
                Some(per_chart) => {
                    if per_chart.len() != atlas.charts.len() {
                        return Err(shape(
                            "bundle.complex needs one matrix per chart".to_string(),
                        ));
                    }
                    Some(
                        per_chart
                            .iter()
                            .enumerate()
                            .map(|(i, m)| {
                                to_rmat(m, b.rank, b.rank, &format!("bundle.complex[{i}]"))
                            })
                            .collect::<Result<Vec<_>, _>>()?,
                    )
                }
            };
            Some(Bundle { rank: b.rank, fiber_reps, transitions, orthogonal: b.orthogonal, complex })
        }
    };

    let mut sections = Vec::with_capacity(doc.sections.len());
    for s in &doc.sections {
        let rank = bundle
            .as_ref()
            .ok_or_else(|| shape(format!("section `{}` requires a bundle", s.name)))?
            .rank;
        if s.per_chart.len() != atlas.charts.len() {
            return Err(shape(format!(
                "section `{}` needs one expression vector per chart",
                s.name
            )));
        }
        let mut per_chart = Vec::with_capacity(s.per_chart.len());
        for (i, comps) in s.per_chart.iter().enumerate() {
            if comps.len() != rank {
                return Err(shape(format!(
                    "section `{}` chart {i}: expected {rank} components, got {}",
                    s.name,
                    comps.len()
                )));
            }
            per_chart.push(parse_exprs(comps, &format!("section `{}` chart {i}", s.name))?);
        }
        sections.push((s.name.clone(), Section { per_chart }));
    }

    let connection = match &doc.connection {
        None => None,
        Some(c) => {
            let rank = bundle
                .as_ref()
                .ok_or_else(|| shape("a connection requires a bundle".to_string()))?
                .rank;
            if c.per_chart.len() != atlas.charts.len() {
                return Err(shape("connection needs one matrix per chart".to_string()));
            }
            let mut omega = Vec::with_capacity(c.per_chart.len());
            for (i, rows) in c.per_chart.iter().enumerate() {
                let dim = atlas.charts[i].domain.dim();
                if rows.len() != rank || rows.iter().any(|r| r.len() != rank) {
                    return Err(shape(format!(
                        "connection chart {i}: expected a {rank} x {rank} matrix"
                    )));
                }
                let mut parsed = Vec::with_capacity(rank);
                for (r, row) in rows.iter().enumerate() {
                    let mut prow = Vec::with_capacity(rank);
                    for (col, src) in row.iter().enumerate() {
                        prow.push(parse_one_form(
                            src,
                            dim,
                            &format!("connection chart {i} entry ({r},{col})"),
                        )?);
                    }
                    parsed.push(prow);
                }
                omega.push(MatrixForm::from_fn(rank, dim, 1, |r, col| parsed[r][col].clone()));
            }
            Some(Connection { omega, metric: c.metric })
        }
    };

    let partition = match &doc.partition {
        None => None,
        Some(p) => {
            if p.weights.len() != atlas.charts.len() {
                return Err(shape("partition needs one weight per chart".to_string()));
            }
            let weights = parse_exprs(&p.weights, "partition.weights")?;
            for (g, group) in p.overlaps.iter().enumerate() {
                if group.iter().any(|&k| k >= atlas.injections.len()) {
                    return Err(shape(format!(
                        "partition.overlaps[{g}] references an injection out of range"
                    )));
                }
            }
            Some(PartitionOfUnity { weights, overlaps: p.overlaps.clone() })
        }
    };

    let complex = match &doc.complex_structure {
        None => None,
        Some(per_chart) => {
            if per_chart.len() != atlas.charts.len() {
                return Err(shape("complex_structure needs one matrix per chart".to_string()));
            }
            let mats = per_chart
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let dim = atlas.charts[i].domain.dim();
                    to_rmat(m, dim, dim, &format!("complex_structure[{i}]"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(ComplexStructure { per_chart: mats })
        }
    };

    Ok(Model { name: doc.name.clone(), atlas, bundle, sections, connection, partition, complex })
}

fn compile_domain(d: &DomainDoc, chart: &str) -> Result<Domain, DocError> {
    match d {
        DomainDoc::Ball { dim } => Ok(Domain::Ball { dim: *dim }),
        DomainDoc::Box { bounds } => {
            let context = format!("chart `{chart}` bounds");
            let bounds = bounds
                .iter()
                .map(|(lo, hi)| Ok((lo.to_rational(&context)?, hi.to_rational(&context)?)))
                .collect::<Result<Vec<_>, DocError>>()?;
            Ok(Domain::Box { bounds })
        }
    }
}

fn to_rmat(m: &MatrixDoc, rows: usize, cols: usize, context: &str) -> Result<RMat, DocError> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(shape(format!("{context}: expected a {rows} x {cols} matrix")));
    }
    let data = m
        .iter()
        .map(|row| row.iter().map(|e| e.to_f64(context)).collect())
        .collect::<Result<Vec<Vec<f64>>, _>>()?;
    Ok(RMat::from_rows(data))
}

fn parse_exprs(sources: &[String], context: &str) -> Result<Vec<Expr>, DocError> {
    sources
        .iter()
        .map(|src| {
            parse(src).map_err(|source| DocError::Expr { context: context.to_string(), source })
        })
        .collect()
}

fn parse_expr_matrix(
    rows: &[Vec<String>],
    size: usize,
    context: &str,
) -> Result<crate::expr::ExprMatrix, DocError> {
    if rows.len() != size || rows.iter().any(|r| r.len() != size) {
        return Err(shape(format!("{context}: expected a {size} x {size} matrix")));
    }
    let parsed = rows
        .iter()
        .map(|row| parse_exprs(row, context))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(crate::expr::ExprMatrix::from_rows(parsed))
}

// ---------------------------------------------------------------------------
// 1-form strings
// ---------------------------------------------------------------------------

/// Parse a 1-form string like `"x2*dx1 - exp(-x1)*dx2"` on an
/// `dim`-dimensional chart. Each term is `coeff*dxN` or a bare `dxN`
/// (optionally negated); `"0"` denotes the zero form.
pub fn parse_one_form(src: &str, dim: usize, context: &str) -> Result<FormExpr, DocError> {
    let fail = |detail: String| DocError::OneForm { context: context.to_string(), detail };
    let mut coeffs: Vec<Expr> = vec![Expr::zero(); dim];
    let mut seen = vec![false; dim];
    for (sign, chunk) in split_signed_terms(src) {
        let chunk = chunk.trim();
        if chunk.is_empty() {
            return Err(fail("empty term".to_string()));
        }
        let Some((head, index)) = split_differential(chunk) else {
            // A term without a differential is only allowed if it is a
            // structural zero (so `"0"` can denote an absent entry).
            let expr = parse(chunk)
                .map_err(|e| fail(format!("term `{chunk}` has no `dxN` differential ({e})")))?;
            if expr.is_zero() {
                continue;
            }
            return Err(fail(format!("term `{chunk}` has no `dxN` differential")));
        };
        if index < 1 || index > dim {
            return Err(fail(format!(
                "differential `dx{index}` out of range for dimension {dim}"
            )));
        }
        let coeff = match head {
            "" | "+" => Expr::one(),
            "-" => Expr::neg(Expr::one()),
            _ => {
                let Some(expr_src) = head.strip_suffix('*') else {
                    return Err(fail(format!(
                        "coefficient in `{chunk}` must be separated from dx{index} by `*`"
                    )));
                };
                parse(expr_src).map_err(|source| DocError::Expr {
                    context: format!("{context}, coefficient of dx{index}"),
                    source,
                })?
            }
        };
        let coeff = if sign < 0 { Expr::neg(coeff) } else { coeff };
        let slot = &mut coeffs[index - 1];
        *slot = if seen[index - 1] { Expr::add(slot.clone(), coeff) } else { coeff };
        seen[index - 1] = true;
    }
    Ok(FormExpr::one_form(dim, &coeffs))
}

/// Split an expression string into top-level signed terms: `+`/`-` at paren
/// depth zero separate terms unless unary (start of a term) or part of a
/// float exponent (`1e-3`).
fn split_signed_terms(src: &str) -> Vec<(i32, &str)> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut sign = 1;
    let mut prev_meaningful: Option<char> = None;
    for (pos, ch) in src.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            '+' | '-' if depth == 0 => {
                let unary = src[start..pos].trim().is_empty();
                let exponent = matches!(prev_meaningful, Some('e' | 'E'))
                    && src[start..pos].trim_end().len() > 1;
                if !unary && !exponent {
                    out.push((sign, &src[start..pos]));
                    sign = if ch == '-' { -1 } else { 1 };
                    start = pos + 1;
                }
            }
            _ => {}
        }
        if !ch.is_whitespace() {
            prev_meaningful = Some(ch);
        }
    }
    out.push((sign, &src[start..]));
    out
}

/// If the chunk ends in `dxN`, return the text before it and `N`.
fn split_differential(chunk: &str) -> Option<(&str, usize)> {
    let at = chunk.rfind("dx")?;
    let digits = &chunk[at + 2..];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let index: usize = digits.parse().ok()?;
    Some((chunk[..at].trim_end(), index))
}

/// Render a 1-form as a string [`parse_one_form`] reads back identically.
pub fn one_form_string(form: &FormExpr) -> Result<String, DocError> {
    if form.degree() != 1 {
        return Err(shape(format!("expected a 1-form, got degree {}", form.degree())));
    }
    if form.terms().is_empty() {
        return Ok("0".to_string());
    }
    let parts: Vec<String> = form
        .terms()
        .iter()
        .map(|(coeff, idx)| {
            let i = idx[0];
            if coeff.is_one() {
                format!("dx{i}")
            } else {
                format!("{}*dx{i}", factor_string(coeff))
            }
        })
        .collect();
    Ok(parts.join(" + "))
}

// ---------------------------------------------------------------------------
// Emission: domain types -> documents
// ---------------------------------------------------------------------------

/// Express a model as a document. Fails on structures the format does not
/// cover: total-space charts (`Fibered` domains, bundle embeddings) are
/// generated from base data, never serialized.
pub fn document(model: &Model) -> Result<InputDoc, DocError> {
    let atlas = &model.atlas;
    let mut groups = Vec::new();
    let mut charts = Vec::with_capacity(atlas.charts.len());
    for (i, ch) in atlas.charts.iter().enumerate() {
        let domain = emit_domain(&ch.domain, &ch.name)?;
        let (group, action) = if ch.group.order() > 1 {
            let name = format!("g{i}");
            let order = ch.group.order();
            let table =
                (0..order).map(|a| (0..order).map(|b| ch.group.mul(a, b)).collect()).collect();
            groups.push(GroupDoc { name: name.clone(), order: Some(order), table });
            let action = ch.group.matrices().iter().map(emit_rmat).collect();
            (Some(name), Some(action))
        } else {
            (None, None)
        };
        charts.push(ChartDoc { name: ch.name.clone(), domain, group, action });
    }

    let injections = atlas
        .injections
        .iter()
        .map(|inj| {
            let Embedding::Affine(map) = &inj.embedding else {
                return Err(shape(format!(
                    "injection `{}` embeds a total-space chart; total spaces are generated, \
                     not serialized",
                    inj.name
                )));
            };
            Ok(InjectionDoc {
                name: Some(inj.name.clone()),
                src: inj.src,
                dst: inj.dst,
                matrix: map
                    .mat
                    .iter()
                    .map(|row| row.iter().map(RatNum::from_scalar).collect())
                    .collect(),
                translation: map.trans.iter().map(RatNum::from_scalar).collect(),
                lambda: inj.hom.map.clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let compositions = atlas
        .compositions
        .iter()
        .map(|c| CompositionDoc {
            first: c.first,
            second: c.second,
            composite: c.composite,
            element: Some(c.element),
        })
        .collect();

    let bundle = model
        .bundle
        .as_ref()
        .map(|b| BundleDoc {
            rank: b.rank,
            orthogonal: b.orthogonal,
            fiber_actions: b
                .fiber_reps
                .iter()
                .map(|rep| rep.mats.iter().map(emit_rmat).collect())
                .collect(),
            transitions: b.transitions.iter().map(emit_expr_matrix).collect(),
            complex: b.complex.as_ref().map(|per| per.iter().map(emit_rmat).collect()),
        });

    let sections = model
        .sections
        .iter()
        .map(|(name, s)| SectionDoc {
            name: name.clone(),
            per_chart: s
                .per_chart
                .iter()
                .map(|comps| comps.iter().map(|e| e.to_string()).collect())
                .collect(),
        })
        .collect();

    let connection = match &model.connection {
        None => None,
        Some(conn) => {
            let mut per_chart = Vec::with_capacity(conn.omega.len());
            for m in &conn.omega {
                let mut rows = Vec::with_capacity(m.size);
                for i in 0..m.size {
                    let mut row = Vec::with_capacity(m.size);
                    for j in 0..m.size {
                        row.push(one_form_string(m.at(i, j))?);
                    }
                    rows.push(row);
                }
                per_chart.push(rows);
            }
            Some(ConnectionDoc { metric: conn.metric, per_chart })
        }
    };

    let partition = model.partition.as_ref().map(|p| PartitionDoc {
        weights: p.weights.iter().map(|e| e.to_string()).collect(),
        overlaps: p.overlaps.clone(),
    });

    let complex_structure =
        model.complex.as_ref().map(|c| c.per_chart.iter().map(emit_rmat).collect());

    Ok(InputDoc {
        name: model.name.clone(),
        groups,
        charts,
        injections,
        compositions,
        bundle,
        sections,
        connection,
        partition,
        complex_structure,
    })
}

fn emit_domain(d: &Domain, chart: &str) -> Result<DomainDoc, DocError> {
    match d {
        Domain::Ball { dim } => Ok(DomainDoc::Ball { dim: *dim }),
        Domain::Box { bounds } => Ok(DomainDoc::Box {
            bounds: bounds
                .iter()
                .map(|(lo, hi)| (RatNum::from_rational(lo), RatNum::from_rational(hi)))
                .collect(),
        }),
        Domain::Fibered { .. } => Err(shape(format!(
            "chart `{chart}` is a total-space chart; total spaces are generated, not serialized"
        ))),
    }
}

fn emit_rmat(m: &RMat) -> MatrixDoc {
    (0..m.rows)
        .map(|i| (0..m.cols).map(|j| RatNum::Number(m[(i, j)])).collect())
        .collect()
}

fn emit_expr_matrix(m: &crate::expr::ExprMatrix) -> Vec<Vec<String>> {
    (0..m.rows)
        .map(|i| (0..m.cols).map(|j| m.at(i, j).to_string()).collect())
        .collect()
}
