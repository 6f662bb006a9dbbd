//! Twisted sectors: the census of local conjugacy classes glued by injection
//! transport, the fixed-set sector atlases `(V^g, C(g))`, degree-shifting
//! numbers for unitary actions, the zero-section restriction on graded
//! classes, and the fiber-scaling retraction certificate.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::atlas::{
    sample_seed, AffineMap, Atlas, Chart, Domain, Embedding, Injection, PartitionOfUnity,
};
use crate::bundles::Bundle;
use crate::expr::{Expr, ExprMatrix, FormExpr, Scalar};
use crate::groups::{FiniteGroup, Hom};
use crate::linalg::{fixed_subspace, RMat};
use crate::report::Report;
use crate::{CheckCtx, TOL_MATRIX, TOL_SAMPLED, TOL_SHIFT};

/// Tolerance used when reading fixed subspaces off averaged group matrices.
/// Group matrices are stored in `f64`, so the averaged projection carries a
/// few ulps of noise; anything below this threshold is treated as zero.
pub(crate) const FIXED_TOL: f64 = 1e-9;

/// One equivalence class of `(chart, conjugacy class)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SectorClass {
    pub id: usize,
    /// Sorted `(chart index, conjugacy-class index)` members.
    pub members: Vec<(usize, usize)>,
}

/// All sector classes of an atlas, produced by [`sector_census`].
#[derive(Debug, Clone, Serialize)]
pub struct SectorCensus {
    pub classes: Vec<SectorClass>,
    /// Index of the class containing the identity elements.
    pub untwisted: usize,
    /// `assignments[chart][conjugacy class] = class id`, for lookups.
    #[serde(skip)]
    assignments: Vec<Vec<usize>>,
}

impl SectorCensus {
    /// The census class containing the given chart's conjugacy class.
    pub fn class_of(&self, chart: usize, conj_class: usize) -> usize {
        self.assignments[chart][conj_class]
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let hi = ra.max(rb);
        let lo = ra.min(rb);
        parent[hi] = lo;
    }
}

/// Partitions the `(chart, conjugacy class)` pairs of an atlas into
/// equivalence classes: whenever an injection's homomorphism carries an
/// element of one class to an element of another, the two are merged.
///
/// Classes come out sorted by their minimal member (chart index first, then
/// conjugacy-class index), so the ordering is reproducible.
pub fn sector_census(atlas: &Atlas) -> SectorCensus {
    let chart_classes: Vec<Vec<Vec<usize>>> =
        atlas.charts.iter().map(|c| c.group.conjugacy_classes()).collect();
    let mut offsets = Vec::with_capacity(chart_classes.len());
    let mut total = 0;
    for classes in &chart_classes {
        offsets.push(total);
        total += classes.len();
    }

    let mut parent: Vec<usize> = (0..total).collect();
    for inj in &atlas.injections {
        for (j, class) in chart_classes[inj.src].iter().enumerate() {
            let image = inj.hom.apply(class[0]);
            let jd = atlas.charts[inj.dst].group.class_of(image);
            union(&mut parent, offsets[inj.src] + j, offsets[inj.dst] + jd);
        }
    }

    let mut by_root: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (i, classes) in chart_classes.iter().enumerate() {
        for j in 0..classes.len() {
            let root = find(&mut parent, offsets[i] + j);
            by_root.entry(root).or_default().push((i, j));
        }
    }
    // Node indices increase lexicographically in (chart, class), so the
    // BTreeMap ordering by root is already the ordering by minimal member.
    let classes: Vec<SectorClass> = by_root
        .into_values()
        .enumerate()
        .map(|(id, members)| SectorClass { id, members })
        .collect();

    let untwisted = if atlas.charts.is_empty() {
        0
    } else {
        let group = &atlas.charts[0].group;
        let j0 = group.class_of(group.identity());
        classes
            .iter()
            .position(|c| c.members.contains(&(0, j0)))
            .expect("identity class is assigned")
    };

    let mut assignments: Vec<Vec<usize>> =
        chart_classes.iter().map(|c| vec![0; c.len()]).collect();
    for class in &classes {
        for &(i, j) in &class.members {
            assignments[i][j] = class.id;
        }
    }
    SectorCensus { classes, untwisted, assignments }
}

/// Verifies that the sector classes of the base atlas and of the bundle's
/// total space coincide under the identity identification of charts and
/// group elements (the two atlases share multiplication tables, so conjugacy
/// classes are indexed identically).
pub fn census_coincidence(base: &Atlas, bundle: &Bundle) -> Report {
    let mut report = Report::new(format!("census coincidence over {}", base.name));
    let total = bundle.total_space(base);
    let cb = sector_census(base);
    let ce = sector_census(&total);

    report.boolean(
        "class-count",
        cb.classes.len() == ce.classes.len(),
        format!("{} base classes, {} total-space classes", cb.classes.len(), ce.classes.len()),
    );
    let mut mismatch = None;
    for (b, e) in cb.classes.iter().zip(&ce.classes) {
        if b.members != e.members {
            mismatch = Some(format!(
                "class {}: base members {:?} vs total-space members {:?}",
                b.id, b.members, e.members
            ));
            break;
        }
    }
    match mismatch {
        None => report.boolean(
            "class-structure",
            cb.classes.len() == ce.classes.len(),
            format!("{} classes matched pairwise", cb.classes.len()),
        ),
        Some(detail) => report.boolean("class-structure", false, detail),
    }
    report.boolean(
        "untwisted-aligned",
        cb.untwisted == ce.untwisted,
        format!("untwisted class {} vs {}", cb.untwisted, ce.untwisted),
    );
    report
}

/// Failure reasons for degree-shift computation.
#[derive(Debug, Error, PartialEq)]
pub enum ShiftError {
    #[error("matrix is {rows}x{cols}, not square")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension {dim} is odd; a complex structure needs an even dimension")]
    OddDimension { dim: usize },
    #[error("complex structure fails J^2 = -I by {defect:e}")]
    BadComplexStructure { defect: f64 },
    #[error("matrix does not commute with the complex structure (defect {defect:e})")]
    NotComplexLinear { defect: f64 },
    #[error("matrix power M^{order} misses the identity by {residual:e}; inconsistent element order")]
    OrderMismatch { order: usize, residual: f64 },
    #[error("eigenvalue multiplicity {index} is not a nonnegative integer (got {re} + {im}i)")]
    NonIntegralMultiplicity { index: usize, re: f64, im: f64 },
    #[error("eigenvalue multiplicities sum to {got}, expected complex dimension {want}")]
    MultiplicitySum { got: i64, want: usize },
}

/// Degree-shifting number of a unitary matrix `m` of the given element
/// order: with eigenvalues `exp(2*pi*i*m_j/order)` on the complexified
/// fiber, returns the exact rational `sum(m_j) / order`.
///
/// The complex eigenvalue exponents are recovered without an eigensolver:
/// for a matrix commuting with the complex structure `j`, the complex trace
/// is `tr_C(A) = (tr(A) + i*tr(J^T A)) / 2`, and averaging traces of powers
/// against roots of unity isolates each exponent's multiplicity. The
/// multiplicities must come out as nonnegative integers within
/// [`TOL_SHIFT`](crate::TOL_SHIFT), and `m^order` must be the identity to
/// the same tolerance; violations signal an inconsistent order or a
/// non-unitary action and are reported as errors.
pub fn degree_shift(m: &RMat, j: &RMat, order: usize) -> Result<BigRational, ShiftError> {
    if !m.is_square() {
        return Err(ShiftError::NotSquare { rows: m.rows, cols: m.cols });
    }
    let n = m.rows;
    if n % 2 != 0 {
        return Err(ShiftError::OddDimension { dim: n });
    }
    if j.rows != n || j.cols != n {
        return Err(ShiftError::NotSquare { rows: j.rows, cols: j.cols });
    }
    let d = n / 2;
    let j2_defect = j.matmul(j).add(&RMat::identity(n)).norm_inf();
    if j2_defect > TOL_SHIFT {
        return Err(ShiftError::BadComplexStructure { defect: j2_defect });
    }
    let commute_defect = m.matmul(j).sub(&j.matmul(m)).norm_inf();
    if commute_defect > TOL_SHIFT {
        return Err(ShiftError::NotComplexLinear { defect: commute_defect });
    }
    let order = order.max(1);
    let residual = m.pow(order).sub(&RMat::identity(n)).norm_inf();
    if residual > TOL_SHIFT {
        return Err(ShiftError::OrderMismatch { order, residual });
    }

    // Complex traces of m^t for t = 0 .. order-1.
    let jt = j.transpose();
    let mut traces = Vec::with_capacity(order);
    let mut power = RMat::identity(n);
    for _ in 0..order {
        traces.push(Complex64::new(0.5 * power.trace(), 0.5 * jt.matmul(&power).trace()));
        power = power.matmul(m);
    }

    let mut shift_numerator: i64 = 0;
    let mut mult_sum: i64 = 0;
    for exponent in 0..order {
        let mut mult = Complex64::new(0.0, 0.0);
        for (t, tr) in traces.iter().enumerate() {
            let angle = -2.0 * std::f64::consts::PI * (exponent as f64) * (t as f64)
                / (order as f64);
            mult += Complex64::from_polar(1.0, angle) * tr;
        }
        mult /= order as f64;
        let rounded = mult.re.round();
        if mult.im.abs() > TOL_SHIFT || (mult.re - rounded).abs() > TOL_SHIFT || rounded < 0.0 {
            return Err(ShiftError::NonIntegralMultiplicity {
                index: exponent,
                re: mult.re,
                im: mult.im,
            });
        }
        let count = rounded as i64;
        mult_sum += count;
        shift_numerator += exponent as i64 * count;
    }
    if mult_sum != d as i64 {
        return Err(ShiftError::MultiplicitySum { got: mult_sum, want: d });
    }
    Ok(BigRational::new(BigInt::from(shift_numerator), BigInt::from(order as i64)))
}

/// Per-chart constant complex structures on an atlas.
#[derive(Debug, Clone)]
pub struct ComplexStructure {
    pub per_chart: Vec<RMat>,
}

/// The block complex structure `[[0, -1], [1, 0]] + ...` on an
/// even-dimensional space.
pub fn standard_complex_matrix(n: usize) -> Option<RMat> {
    if n % 2 != 0 {
        return None;
    }
    let mut m = RMat::zeros(n, n);
    for a in 0..n / 2 {
        m[(2 * a, 2 * a + 1)] = -1.0;
        m[(2 * a + 1, 2 * a)] = 1.0;
    }
    Some(m)
}

impl ComplexStructure {
    /// The standard block structure on every chart; `None` when some chart
    /// has odd dimension.
    pub fn standard(atlas: &Atlas) -> Option<ComplexStructure> {
        let per_chart = atlas
            .charts
            .iter()
            .map(|c| standard_complex_matrix(c.domain.dim()))
            .collect::<Option<Vec<_>>>()?;
        Some(ComplexStructure { per_chart })
    }

    /// Checks that each matrix is an orthogonal complex structure commuting
    /// with the chart action, and that injections intertwine the structures.
    ///
    /// On fibered (total-space) charts the structure must be block diagonal
    /// with respect to the base/fiber split; compatibility then means the
    /// base blocks intertwine through the affine differential and the fiber
    /// blocks through the fiber transition, which is exactly what the
    /// degree-shift grading consumes.
    pub fn validate(&self, atlas: &Atlas, ctx: &CheckCtx) -> Report {
        let mut report = Report::new(format!("complex structure on {}", atlas.name));
        if self.per_chart.len() != atlas.charts.len() {
            report.boolean(
                "shape",
                false,
                format!("{} matrices for {} charts", self.per_chart.len(), atlas.charts.len()),
            );
            return report;
        }
        for (chart, j) in atlas.charts.iter().zip(&self.per_chart) {
            let n = chart.domain.dim();
            if j.rows != n || j.cols != n {
                report.boolean(
                    format!("{}/shape", chart.name),
                    false,
                    format!("{}x{} matrix on a dim-{} chart", j.rows, j.cols, n),
                );
                continue;
            }
            report.numeric(
                format!("{}/orthogonal", chart.name),
                j.orthogonality_defect(),
                TOL_MATRIX,
                "J^T J = I",
            );
            report.numeric(
                format!("{}/squares-to-minus-identity", chart.name),
                j.matmul(j).add(&RMat::identity(n)).norm_inf(),
                TOL_MATRIX,
                "J^2 = -I",
            );
            let worst = chart
                .group
                .matrices()
                .iter()
                .map(|m| m.matmul(j).sub(&j.matmul(m)).norm_inf())
                .fold(0.0, f64::max);
            report.numeric(
                format!("{}/commutes-with-action", chart.name),
                worst,
                TOL_MATRIX,
                "every group matrix is complex-linear",
            );
        }
        if !report.passed() {
            return report;
        }
        for (k, inj) in atlas.injections.iter().enumerate() {
            let js = &self.per_chart[inj.src];
            let jd = &self.per_chart[inj.dst];
            match &inj.embedding {
                Embedding::Affine(aff) => {
                    let a = aff.rmat();
                    report.numeric(
                        format!("{}/intertwines", inj.name),
                        a.matmul(js).sub(&jd.matmul(&a)).norm_inf(),
                        TOL_MATRIX,
                        "A J_src = J_dst A",
                    );
                }
                Embedding::Bundle { base, fiber } => {
                    let n_s = base.src_dim();
                    let n_d = base.dst_dim();
                    let cross = block_cross_norm(js, n_s).max(block_cross_norm(jd, n_d));
                    report.numeric(
                        format!("{}/block-diagonal", inj.name),
                        cross,
                        TOL_MATRIX,
                        "total-space structure splits into base and fiber blocks",
                    );
                    if cross > TOL_MATRIX {
                        continue;
                    }
                    let a = base.rmat();
                    let jsb = block(js, 0, n_s, 0, n_s);
                    let jdb = block(jd, 0, n_d, 0, n_d);
                    report.numeric(
                        format!("{}/base-intertwines", inj.name),
                        a.matmul(&jsb).sub(&jdb.matmul(&a)).norm_inf(),
                        TOL_MATRIX,
                        "base blocks intertwine through the affine part",
                    );
                    let jsf = block(js, n_s, js.rows, n_s, js.rows);
                    let jdf = block(jd, n_d, jd.rows, n_d, jd.rows);
                    let src_base = base_of(&atlas.charts[inj.src].domain);
                    let mut worst: f64 = 0.0;
                    let mut failure = None;
                    for p in src_base.interior_samples(sample_seed(ctx, 0x52, k)) {
                        match fiber.eval(&p) {
                            Ok(g) => {
                                worst = worst
                                    .max(g.matmul(&jsf).sub(&jdf.matmul(&g)).norm_inf());
                            }
                            Err(e) => {
                                failure = Some(e);
                                break;
                            }
                        }
                    }
                    match failure {
                        None => report.numeric(
                            format!("{}/fiber-intertwines", inj.name),
                            worst,
                            TOL_SAMPLED,
                            "fiber blocks intertwine through the transition",
                        ),
                        Some(e) => report.boolean(
                            format!("{}/fiber-intertwines", inj.name),
                            false,
                            format!("transition failed to evaluate: {e}"),
                        ),
                    }
                }
            }
        }
        report
    }

    /// The block structure `J_base + J_fiber` on the bundle's total space;
    /// `None` when the bundle carries no fiberwise complex structure.
    pub fn for_total_space(&self, bundle: &Bundle) -> Option<ComplexStructure> {
        let fiber = bundle.complex.as_ref()?;
        let per_chart = self
            .per_chart
            .iter()
            .zip(fiber)
            .map(|(jb, jf)| {
                let n = jb.rows;
                let k = jf.rows;
                RMat::from_fn(n + k, n + k, |r, c| {
                    if r < n && c < n {
                        jb[(r, c)]
                    } else if r >= n && c >= n {
                        jf[(r - n, c - n)]
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        Some(ComplexStructure { per_chart })
    }
}

/// Failure reasons for sector-atlas construction.
#[derive(Debug, Error)]
pub enum SectorError {
    #[error("sector class {id} out of range ({count} classes)")]
    ClassOutOfRange { id: usize, count: usize },
    #[error("fixed subspace in chart `{chart}` is not spanned by coordinate axes; box domains slice only along axes")]
    BoxSlice { chart: String },
    #[error("the fixed set in chart `{chart}` does not meet the chart domain")]
    EmptySlice { chart: String },
    #[error("group of chart `{chart}` mixes base and fiber coordinates")]
    FiberMixing { chart: String },
    #[error("restricted group on chart `{chart}` failed validation:\n{details}")]
    GroupRestriction { chart: String, details: String },
    #[error("fixed-set dimensions disagree across class {class}: {dims:?}")]
    DimMismatch { class: usize, dims: Vec<(usize, usize)> },
    #[error("degree shift in chart `{chart}` failed: {source}")]
    Shift { chart: String, source: ShiftError },
    #[error("degree shifts disagree across class {class}: {values:?}")]
    ShiftMismatch { class: usize, values: Vec<String> },
    #[error("no sector chart for member (chart {chart}, class {conj_class}); census is not transport-closed")]
    MissingMember { chart: usize, conj_class: usize },
    #[error("no group element conjugates the transported element to the class representative in chart `{chart}`")]
    Conjugator { chart: String },
    #[error("sector data of class {sector} disagrees between the two atlases")]
    SectorMismatch { sector: usize },
}

/// One chart of a sector atlas, with its provenance in the original atlas.
#[derive(Debug, Clone)]
pub struct SectorChartInfo {
    pub origin_chart: usize,
    pub conj_class: usize,
    /// Representative element (minimal index in its conjugacy class).
    pub rep: usize,
    /// Orthonormal inclusion of the fixed subspace, original-dim x slice-dim.
    pub basis: RMat,
    /// Slice dimensions: base part and (for fibered charts) fiber part.
    pub base_dim: usize,
    pub fiber_dim: usize,
    /// Centralizer of the representative, as element indices in the
    /// original chart group.
    pub centralizer: Vec<usize>,
}

/// A sector atlas together with the data used to build it.
#[derive(Debug, Clone)]
pub struct SectorInfo {
    pub class_id: usize,
    /// Common degree shift of the class, when a complex structure was given.
    pub shift: Option<BigRational>,
    pub atlas: Atlas,
    /// Aligned with `atlas.charts`.
    pub charts: Vec<SectorChartInfo>,
    /// For each sector injection, the `(original injection, source sector
    /// chart)` pair it was induced from.
    pub injection_origin: Vec<(usize, usize)>,
}

/// Coordinate expressions of the inclusion `y -> B y` of a fixed subspace.
pub fn inclusion_exprs(basis: &RMat) -> Vec<Expr> {
    (0..basis.rows)
        .map(|i| {
            Expr::sum(
                (0..basis.cols)
                    .map(|j| Expr::mul(Expr::float(basis[(i, j)]), Expr::var(j as u32 + 1))),
            )
        })
        .collect()
}

fn block(m: &RMat, r0: usize, r1: usize, c0: usize, c1: usize) -> RMat {
    RMat::from_fn(r1 - r0, c1 - c0, |r, c| m[(r0 + r, c0 + c)])
}

fn block_cross_norm(m: &RMat, split: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..m.rows {
        for c in 0..m.cols {
            if (r < split) != (c < split) {
                worst = worst.max(m[(r, c)].abs());
            }
        }
    }
    worst
}

fn base_of(domain: &Domain) -> Domain {
    match domain {
        Domain::Fibered { base, .. } => (**base).clone(),
        d => d.clone(),
    }
}

pub(crate) fn cols_to_basis(rows: usize, cols: &[Vec<f64>]) -> RMat {
    RMat::from_fn(rows, cols.len(), |r, c| cols[c][r])
}

/// Slices a ball or box domain along an orthonormal fixed basis.
fn slice_plain(domain: &Domain, cols: &[Vec<f64>], chart: &str) -> Result<Domain, SectorError> {
    match domain {
        Domain::Ball { .. } => {
            if cols.is_empty() {
                Ok(Domain::Box { bounds: vec![] })
            } else {
                Ok(Domain::Ball { dim: cols.len() })
            }
        }
        Domain::Box { bounds } => {
            let mut kept = Vec::with_capacity(cols.len());
            for col in cols {
                let mut axis = None;
                for (i, &v) in col.iter().enumerate() {
                    if v.abs() > FIXED_TOL {
                        if axis.is_some() || (v - 1.0).abs() > FIXED_TOL {
                            return Err(SectorError::BoxSlice { chart: chart.to_string() });
                        }
                        axis = Some(i);
                    }
                }
                kept.push(axis.ok_or(SectorError::BoxSlice { chart: chart.to_string() })?);
            }
            let zero = BigRational::zero();
            for (i, (lo, hi)) in bounds.iter().enumerate() {
                if !kept.contains(&i) && (lo > &zero || hi < &zero) {
                    return Err(SectorError::EmptySlice { chart: chart.to_string() });
                }
            }
            Ok(Domain::Box { bounds: kept.iter().map(|&i| bounds[i].clone()).collect() })
        }
        Domain::Fibered { .. } => unreachable!("fibered domains are split before slicing"),
    }
}

/// Fixed subspace of the cyclic subgroup generated by `rep` inside a chart,
/// returned as (sliced domain, inclusion basis, base slice dim, fiber slice
/// dim). Fibered charts are split block-diagonally.
fn slice_chart(
    chart: &Chart,
    subgroup: &[usize],
) -> Result<(Domain, RMat, usize, usize), SectorError> {
    match &chart.domain {
        Domain::Fibered { base, fiber_dim } => {
            let n = base.dim();
            let k = *fiber_dim;
            for &h in subgroup {
                if block_cross_norm(chart.group.matrix(h), n) > FIXED_TOL {
                    return Err(SectorError::FiberMixing { chart: chart.name.clone() });
                }
            }
            let base_mats: Vec<RMat> =
                subgroup.iter().map(|&h| block(chart.group.matrix(h), 0, n, 0, n)).collect();
            let fiber_mats: Vec<RMat> = subgroup
                .iter()
                .map(|&h| block(chart.group.matrix(h), n, n + k, n, n + k))
                .collect();
            let bb = fixed_subspace(&base_mats, FIXED_TOL);
            let bf = fixed_subspace(&fiber_mats, FIXED_TOL);
            let base_slice = slice_plain(base, &bb, &chart.name)?;
            let (db, df) = (bb.len(), bf.len());
            let domain = if df == 0 { base_slice } else { base_slice.fibered(df) };
            let basis = RMat::from_fn(n + k, db + df, |r, c| {
                if c < db {
                    if r < n {
                        bb[c][r]
                    } else {
                        0.0
                    }
                } else if r >= n {
                    bf[c - db][r - n]
                } else {
                    0.0
                }
            });
            Ok((domain, basis, db, df))
        }
        plain => {
            let mats: Vec<RMat> =
                subgroup.iter().map(|&h| chart.group.matrix(h).clone()).collect();
            let cols = fixed_subspace(&mats, FIXED_TOL);
            let domain = slice_plain(plain, &cols, &chart.name)?;
            let basis = cols_to_basis(chart.domain.dim(), &cols);
            let d = cols.len();
            Ok((domain, basis, d, 0))
        }
    }
}

/// First group element conjugating `target` onto `rep` (`t rep t^-1 =
/// target`), preferring the identity.
fn conjugator(group: &FiniteGroup, target: usize, rep: usize) -> Option<usize> {
    if target == rep {
        return Some(group.identity());
    }
    (0..group.order()).find(|&t| group.mul(group.mul(t, rep), group.inverse(t)) == target)
}

fn constant_expr_matrix(m: &RMat) -> ExprMatrix {
    ExprMatrix::from_fn(m.rows, m.cols, |i, j| Expr::float(m[(i, j)]))
}

/// Restricts an injection's embedding to fixed-subspace coordinates, after
/// composing with the conjugating element `tinv` on the target.
fn restrict_embedding(
    emb: &Embedding,
    src: &SectorChartInfo,
    dst: &SectorChartInfo,
    tinv: &RMat,
    dst_name: &str,
) -> Result<Embedding, SectorError> {
    match emb {
        Embedding::Affine(aff) => {
            let a = tinv.matmul(&aff.rmat());
            let b = tinv.apply(&aff.trans_f64());
            let bt = dst.basis.transpose();
            let mat = bt.matmul(&a).matmul(&src.basis);
            let trans = bt.apply(&b);
            Ok(Embedding::Affine(AffineMap::from_f64(&mat, &trans)))
        }
        Embedding::Bundle { base, fiber } => {
            let n_s = base.src_dim();
            let n_d = base.dst_dim();
            if block_cross_norm(tinv, n_d) > FIXED_TOL {
                return Err(SectorError::FiberMixing { chart: dst_name.to_string() });
            }
            let tb = block(tinv, 0, n_d, 0, n_d);
            let src_base = block(&src.basis, 0, n_s, 0, src.base_dim);
            let dst_base = block(&dst.basis, 0, n_d, 0, dst.base_dim);
            let a = tb.matmul(&base.rmat());
            let bvec = tb.apply(&base.trans_f64());
            let dbt = dst_base.transpose();
            let base_aff =
                AffineMap::from_f64(&dbt.matmul(&a).matmul(&src_base), &dbt.apply(&bvec));
            if src.fiber_dim == 0 && dst.fiber_dim == 0 {
                return Ok(Embedding::Affine(base_aff));
            }
            let k_s = src.basis.rows - n_s;
            let k_d = dst.basis.rows - n_d;
            let tf = block(tinv, n_d, n_d + k_d, n_d, n_d + k_d);
            let src_fiber =
                block(&src.basis, n_s, n_s + k_s, src.base_dim, src.base_dim + src.fiber_dim);
            let dst_fiber =
                block(&dst.basis, n_d, n_d + k_d, dst.base_dim, dst.base_dim + dst.fiber_dim);
            let incl = inclusion_exprs(&src_base);
            let left = constant_expr_matrix(&dst_fiber.transpose().matmul(&tf));
            let right = constant_expr_matrix(&src_fiber);
            let fiber_expr = left.matmul(&fiber.compose(&incl)).matmul(&right);
            Ok(Embedding::Bundle { base: base_aff, fiber: fiber_expr })
        }
    }
}

/// Builds the sector atlas of one census class: per member `(chart, class)`
/// a chart on the fixed subspace of the class representative, with the
/// centralizer acting restrictedly, and injections induced from the original
/// atlas (composed with a conjugating element whenever the transported
/// representative is only conjugate to the target's representative).
///
/// When a complex structure is supplied, the class's degree-shifting number
/// is computed per member and required to agree.
pub fn build_sector(
    atlas: &Atlas,
    census: &SectorCensus,
    class_id: usize,
    complex: Option<&ComplexStructure>,
) -> Result<SectorInfo, SectorError> {
    let class = census
        .classes
        .get(class_id)
        .ok_or(SectorError::ClassOutOfRange { id: class_id, count: census.classes.len() })?;

    let mut charts = Vec::new();
    let mut infos: Vec<SectorChartInfo> = Vec::new();
    for &(ci, cj) in &class.members {
        let chart = &atlas.charts[ci];
        let rep = chart.group.conjugacy_classes()[cj][0];
        let subgroup = chart.group.subgroup_generated(&[rep]);
        let (domain, basis, base_dim, fiber_dim) = slice_chart(chart, &subgroup)?;

        let cen = chart.group.centralizer(rep);
        let bt = basis.transpose();
        let mats: Vec<RMat> =
            cen.iter().map(|&h| bt.matmul(chart.group.matrix(h)).matmul(&basis)).collect();
        let table: Vec<Vec<usize>> = cen
            .iter()
            .map(|&a| {
                cen.iter()
                    .map(|&b| {
                        let p = chart.group.mul(a, b);
                        cen.iter()
                            .position(|&x| x == p)
                            .expect("centralizer is closed under products")
                    })
                    .collect()
            })
            .collect();
        let (group_report, restricted) = FiniteGroup::analyze(mats, Some(table));
        let group = restricted.ok_or_else(|| SectorError::GroupRestriction {
            chart: chart.name.clone(),
            details: group_report.to_string(),
        })?;

        charts.push(Chart { name: format!("{}-g{}", chart.name, rep), domain, group });
        infos.push(SectorChartInfo {
            origin_chart: ci,
            conj_class: cj,
            rep,
            basis,
            base_dim,
            fiber_dim,
            centralizer: cen,
        });
    }

    let dims: Vec<(usize, usize)> = infos.iter().map(|c| (c.base_dim, c.fiber_dim)).collect();
    if dims.windows(2).any(|w| w[0] != w[1]) {
        return Err(SectorError::DimMismatch { class: class_id, dims });
    }

    let shift = match complex {
        None => None,
        Some(cs) => {
            let mut values = Vec::new();
            for info in &infos {
                let chart = &atlas.charts[info.origin_chart];
                let m = chart.group.matrix(info.rep);
                let j = &cs.per_chart[info.origin_chart];
                let order = chart.group.element_order(info.rep);
                let value = degree_shift(m, j, order).map_err(|source| SectorError::Shift {
                    chart: chart.name.clone(),
                    source,
                })?;
                values.push(value);
            }
            if values.windows(2).any(|w| w[0] != w[1]) {
                return Err(SectorError::ShiftMismatch {
                    class: class_id,
                    values: values.iter().map(|v| v.to_string()).collect(),
                });
            }
            values.into_iter().next()
        }
    };

    let mut injections = Vec::new();
    let mut injection_origin = Vec::new();
    for (orig_idx, inj) in atlas.injections.iter().enumerate() {
        for (cs_idx, src_info) in
            infos.iter().enumerate().filter(|(_, c)| c.origin_chart == inj.src)
        {
            let dst_group = &atlas.charts[inj.dst].group;
            let image = inj.hom.apply(src_info.rep);
            let jd = dst_group.class_of(image);
            let cd_idx = infos
                .iter()
                .position(|c| c.origin_chart == inj.dst && c.conj_class == jd)
                .ok_or(SectorError::MissingMember { chart: inj.dst, conj_class: jd })?;
            let dst_info = &infos[cd_idx];
            let t = conjugator(dst_group, image, dst_info.rep).ok_or_else(|| {
                SectorError::Conjugator { chart: atlas.charts[inj.dst].name.clone() }
            })?;
            let tinv = dst_group.inverse(t);
            let embedding = restrict_embedding(
                &inj.embedding,
                src_info,
                dst_info,
                dst_group.matrix(tinv),
                &atlas.charts[inj.dst].name,
            )?;
            let map = src_info
                .centralizer
                .iter()
                .map(|&h| {
                    let conj = dst_group.mul(dst_group.mul(tinv, inj.hom.apply(h)), t);
                    dst_info.centralizer.iter().position(|&x| x == conj).ok_or_else(|| {
                        SectorError::Conjugator { chart: atlas.charts[inj.dst].name.clone() }
                    })
                })
                .collect::<Result<Vec<usize>, SectorError>>()?;
            injections.push(Injection {
                name: format!("{}-g{}", inj.name, src_info.rep),
                src: cs_idx,
                dst: cd_idx,
                embedding,
                hom: Hom { map },
            });
            injection_origin.push((orig_idx, cs_idx));
        }
    }

    // Composition relations of the original atlas do not restrict to
    // canonical relations between the conjugated sector injections, so the
    // sector atlas carries none; its injections are still fully validated.
    let atlas_out = Atlas {
        name: format!("{}~sector{}", atlas.name, class_id),
        charts,
        injections,
        compositions: vec![],
    };
    Ok(SectorInfo { class_id, shift, atlas: atlas_out, charts: infos, injection_origin })
}

/// Builds every sector of the census, in class order.
pub fn all_sectors(
    atlas: &Atlas,
    census: &SectorCensus,
    complex: Option<&ComplexStructure>,
) -> Result<Vec<SectorInfo>, SectorError> {
    (0..census.classes.len()).map(|id| build_sector(atlas, census, id, complex)).collect()
}

impl SectorInfo {
    /// Inclusion expressions of sector chart `c` into its original chart.
    pub fn inclusion(&self, c: usize) -> Vec<Expr> {
        inclusion_exprs(&self.charts[c].basis)
    }

    /// Restricts a partition of unity of the original atlas to the sector
    /// atlas: weights are composed with the inclusions and declared overlap
    /// groups are transported along the induced injections.
    pub fn restrict_partition(&self, partition: &PartitionOfUnity) -> PartitionOfUnity {
        let weights = self
            .charts
            .iter()
            .map(|info| partition.weights[info.origin_chart].compose(&inclusion_exprs(&info.basis)))
            .collect();
        let mut overlaps = Vec::new();
        for group in &partition.overlaps {
            // A declared group shares one source chart; each sector chart
            // over that source yields one transported group.
            let mut per_sector_chart: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (new_idx, &(orig_idx, src_chart)) in self.injection_origin.iter().enumerate() {
                if group.contains(&orig_idx) {
                    per_sector_chart.entry(src_chart).or_default().push(new_idx);
                }
            }
            for (_, group) in per_sector_chart {
                if !group.is_empty() {
                    overlaps.push(group);
                }
            }
        }
        PartitionOfUnity { weights, overlaps }
    }
}

/// One graded component of an orbifold cohomology class: a form degree, the
/// sector it lives on, representative forms (one per sector chart), and an
/// optional integral value.
#[derive(Debug, Clone)]
pub struct ClassComponent {
    pub sector: usize,
    pub form_degree: usize,
    /// Degree shift of the sector; `None` for ungraded (real-only) data.
    pub shift: Option<BigRational>,
    pub forms: Vec<FormExpr>,
    pub integral: Option<f64>,
}

impl ClassComponent {
    /// Rational total degree `form degree + 2 * shift`, when graded.
    pub fn degree(&self) -> Option<BigRational> {
        self.shift.as_ref().map(|s| {
            BigRational::from_integer(BigInt::from(self.form_degree as i64))
                + s * BigRational::from_integer(BigInt::from(2))
        })
    }
}

/// A sum of graded components across sectors.
#[derive(Debug, Clone, Default)]
pub struct OrbifoldClass {
    pub components: Vec<ClassComponent>,
}

impl OrbifoldClass {
    /// Component-wise sum; components are merged on equal (sector, form
    /// degree) keys, with forms added chartwise.
    pub fn add(&self, other: &OrbifoldClass) -> OrbifoldClass {
        let mut components: Vec<ClassComponent> = self.components.clone();
        for comp in &other.components {
            match components
                .iter_mut()
                .find(|c| c.sector == comp.sector && c.form_degree == comp.form_degree)
            {
                Some(existing) => {
                    existing.forms = existing
                        .forms
                        .iter()
                        .zip(&comp.forms)
                        .map(|(a, b)| a.add(b))
                        .collect();
                    existing.integral = match (existing.integral, comp.integral) {
                        (Some(a), Some(b)) => Some(a + b),
                        _ => None,
                    };
                }
                None => components.push(comp.clone()),
            }
        }
        components.sort_by_key(|c| (c.sector, c.form_degree));
        OrbifoldClass { components }
    }
}

/// A constant 0-form component supported on one sector. The value is an
/// expression so exact constants stay exact through restriction.
pub fn constant_component(info: &SectorInfo, sector: usize, value: Expr) -> ClassComponent {
    ClassComponent {
        sector,
        form_degree: 0,
        shift: info.shift.clone(),
        forms: info
            .atlas
            .charts
            .iter()
            .map(|c| FormExpr::scalar(c.domain.dim(), value.clone()))
            .collect(),
        integral: None,
    }
}

/// Restriction along the zero section: pulls every component's forms back by
/// substituting zero for the fiber slice coordinates (killing their
/// differentials), and re-grades with the base sector's degree shift.
///
/// `e_sectors` and `q_sectors` must come from a coinciding census pair
/// (total space and base of one bundle), so components match up by sector
/// id and chart position.
pub fn iota_star(
    e_sectors: &[SectorInfo],
    q_sectors: &[SectorInfo],
    cls: &OrbifoldClass,
) -> Result<OrbifoldClass, SectorError> {
    let mut components = Vec::with_capacity(cls.components.len());
    for comp in &cls.components {
        let s = comp.sector;
        if s >= e_sectors.len() || s >= q_sectors.len() {
            return Err(SectorError::ClassOutOfRange { id: s, count: q_sectors.len() });
        }
        let (es, qs) = (&e_sectors[s], &q_sectors[s]);
        if es.charts.len() != qs.charts.len() || comp.forms.len() != es.charts.len() {
            return Err(SectorError::SectorMismatch { sector: s });
        }
        let mut forms = Vec::with_capacity(comp.forms.len());
        for (c, form) in comp.forms.iter().enumerate() {
            let db = es.charts[c].base_dim;
            let df = es.charts[c].fiber_dim;
            if qs.atlas.charts[c].domain.dim() != db {
                return Err(SectorError::SectorMismatch { sector: s });
            }
            let map: Vec<Expr> = (1..=db as u32)
                .map(Expr::var)
                .chain(std::iter::repeat(Expr::zero()).take(df))
                .collect();
            forms.push(form.pullback(&map, db));
        }
        components.push(ClassComponent {
            sector: s,
            form_degree: comp.form_degree,
            shift: qs.shift.clone(),
            forms,
            integral: None,
        });
    }
    Ok(OrbifoldClass { components })
}

/// Coordinate expressions of the fiber scaling `(x, v) -> (x, t v)` on a
/// sector chart with the given base/fiber slice dimensions.
pub fn retraction_exprs(base_dim: usize, fiber_dim: usize, t: &BigRational) -> Vec<Expr> {
    let tc = Expr::constant(Scalar::Rational(t.clone()));
    (1..=base_dim as u32)
        .map(Expr::var)
        .chain((0..fiber_dim).map(|j| {
            Expr::mul(tc.clone(), Expr::var((base_dim + j + 1) as u32))
        }))
        .collect()
}

/// Certifies the deformation retraction of a sector of a total space onto
/// the corresponding base sector: the scaling is the identity at `t = 1`
/// and the zero-section projection at `t = 0` exactly at the symbolic
/// level, and it maps each chart domain into itself for all sampled `t`.
pub fn retraction_check(info: &SectorInfo, ts: &[BigRational], ctx: &CheckCtx) -> Report {
    let mut report = Report::new(format!("retraction on {}", info.atlas.name));
    for (c, (chart, cinfo)) in info.atlas.charts.iter().zip(&info.charts).enumerate() {
        let (db, df) = (cinfo.base_dim, cinfo.fiber_dim);

        let h1 = retraction_exprs(db, df, &BigRational::one());
        let identity_ok =
            h1.iter().enumerate().all(|(i, e)| *e == Expr::var(i as u32 + 1));
        report.boolean(
            format!("{}/identity-at-one", chart.name),
            identity_ok,
            "scaling by 1 reproduces the chart coordinates symbolically",
        );

        let h0 = retraction_exprs(db, df, &BigRational::zero());
        let projection_ok = h0[..db]
            .iter()
            .enumerate()
            .all(|(i, e)| *e == Expr::var(i as u32 + 1))
            && h0[db..].iter().all(|e| e.is_zero());
        report.boolean(
            format!("{}/projection-at-zero", chart.name),
            projection_ok,
            "scaling by 0 collapses the fiber coordinates onto the zero section",
        );

        let mut worst = f64::NEG_INFINITY;
        for t in ts {
            let tf = t.to_f64().unwrap_or(0.0);
            for p in chart.domain.samples(sample_seed(ctx, 0x51, c)) {
                let moved: Vec<f64> = p
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| if i < db { x } else { tf * x })
                    .collect();
                worst = worst.max(chart.domain.violation(&moved));
            }
        }
        report.numeric(
            format!("{}/stays-inside", chart.name),
            worst,
            TOL_SAMPLED,
            format!("domain violation across {} scaling values", ts.len()),
        );
    }
    report
}

/// The default `t` samples used by the retraction certificate.
pub fn default_retraction_samples() -> Vec<BigRational> {
    [0, 1, 2, 3, 4]
        .iter()
        .map(|&n| BigRational::new(BigInt::from(n), BigInt::from(4)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundles::phantom_rotation_bundle;
    use crate::groups::{
        cyclic_rotations2, cyclic_trivial_action, group_from_matrices, rotation2, trivial_group,
    };

    fn rational(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn dummy_injection(name: &str, src: usize, dst: usize, dim: usize, map: Vec<usize>) -> Injection {
        Injection {
            name: name.into(),
            src,
            dst,
            embedding: Embedding::Affine(AffineMap::identity(dim)),
            hom: Hom { map },
        }
    }

    /// Two trivially-acting cyclic charts glued by identity homs: the shape
    /// of a global-quotient surface with phantom isotropy.
    fn phantom_pair_atlas() -> Atlas {
        let chart = |name: &str| Chart {
            name: name.into(),
            domain: Domain::Ball { dim: 2 },
            group: cyclic_trivial_action(3, 2),
        };
        Atlas {
            name: "pair".into(),
            charts: vec![chart("north"), chart("south")],
            injections: vec![dummy_injection("n-s", 0, 1, 2, vec![0, 1, 2])],
            compositions: vec![],
        }
    }

    #[test]
    fn census_merges_along_identity_homs() {
        let census = sector_census(&phantom_pair_atlas());
        assert_eq!(census.classes.len(), 3);
        assert_eq!(census.untwisted, 0);
        for j in 0..3 {
            assert_eq!(census.classes[j].members, vec![(0, j), (1, j)]);
            assert_eq!(census.class_of(0, j), j);
            assert_eq!(census.class_of(1, j), j);
        }
    }

    #[test]
    fn census_follows_a_nontrivial_hom() {
        // Faithful rotation charts glued by the inversion automorphism
        // g -> g^2 of Z/3: the two twisted classes swap across the charts.
        let chart = |name: &str| Chart {
            name: name.into(),
            domain: Domain::Ball { dim: 2 },
            group: group_from_matrices(cyclic_rotations2(3)),
        };
        let atlas = Atlas {
            name: "swap".into(),
            charts: vec![chart("a"), chart("b")],
            injections: vec![dummy_injection("a-b", 0, 1, 2, vec![0, 2, 1])],
            compositions: vec![],
        };
        let census = sector_census(&atlas);
        assert_eq!(census.classes.len(), 3);
        assert_eq!(census.classes[0].members, vec![(0, 0), (1, 0)]);
        assert_eq!(census.classes[1].members, vec![(0, 1), (1, 2)]);
        assert_eq!(census.classes[2].members, vec![(0, 2), (1, 1)]);
    }

    #[test]
    fn census_on_a_manifold_atlas_is_a_single_class() {
        let chart = |name: &str| Chart {
            name: name.into(),
            domain: Domain::Ball { dim: 2 },
            group: trivial_group(2),
        };
        let atlas = Atlas {
            name: "manifold".into(),
            charts: vec![chart("a"), chart("b")],
            injections: vec![dummy_injection("a-b", 0, 1, 2, vec![0])],
            compositions: vec![],
        };
        let census = sector_census(&atlas);
        assert_eq!(census.classes.len(), 1);
        assert_eq!(census.untwisted, 0);
    }

    #[test]
    fn census_class_count_is_group_order_for_one_abelian_chart() {
        let atlas = Atlas {
            name: "cone".into(),
            charts: vec![Chart {
                name: "tip".into(),
                domain: Domain::Ball { dim: 2 },
                group: group_from_matrices(cyclic_rotations2(4)),
            }],
            injections: vec![],
            compositions: vec![],
        };
        assert_eq!(sector_census(&atlas).classes.len(), 4);
    }

    #[test]
    fn census_groups_nonabelian_elements_by_conjugacy() {
        // Permutation representation of S3 on the plane slice of R^3.
        let perms: Vec<Vec<usize>> = vec![
            vec![0, 1, 2],
            vec![1, 0, 2],
            vec![0, 2, 1],
            vec![2, 1, 0],
            vec![1, 2, 0],
            vec![2, 0, 1],
        ];
        let mats: Vec<RMat> = perms
            .iter()
            .map(|p| RMat::from_fn(3, 3, |i, j| if p[j] == i { 1.0 } else { 0.0 }))
            .collect();
        let atlas = Atlas {
            name: "s3".into(),
            charts: vec![Chart {
                name: "origin".into(),
                domain: Domain::Ball { dim: 3 },
                group: group_from_matrices(mats),
            }],
            injections: vec![],
            compositions: vec![],
        };
        assert_eq!(sector_census(&atlas).classes.len(), 3);
    }

    #[test]
    fn coincidence_holds_for_the_phantom_bundle() {
        let (atlas, bundle) = phantom_rotation_bundle();
        let report = census_coincidence(&atlas, &bundle);
        assert!(report.passed(), "{report}");
        assert_eq!(sector_census(&atlas).classes.len(), 3);
    }

    #[test]
    fn shift_of_a_plane_rotation_is_the_angle_fraction() {
        let j = rotation2(std::f64::consts::FRAC_PI_2);
        let third = rotation2(2.0 * std::f64::consts::PI / 3.0);
        assert_eq!(degree_shift(&third, &j, 3).unwrap(), rational(1, 3));
        assert_eq!(degree_shift(&third.matmul(&third), &j, 3).unwrap(), rational(2, 3));
        assert_eq!(degree_shift(&RMat::identity(2), &j, 1).unwrap(), rational(0, 1));
        assert_eq!(degree_shift(&rotation2(std::f64::consts::PI), &j, 2).unwrap(), rational(1, 2));
    }

    #[test]
    fn shift_adds_over_complex_eigenspaces() {
        let a = 2.0 * std::f64::consts::PI / 5.0;
        let m = RMat::from_fn(4, 4, |i, j| {
            if i < 2 && j < 2 {
                rotation2(a)[(i, j)]
            } else if i >= 2 && j >= 2 {
                rotation2(2.0 * a)[(i - 2, j - 2)]
            } else {
                0.0
            }
        });
        let j = standard_complex_matrix(4).unwrap();
        assert_eq!(degree_shift(&m, &j, 5).unwrap(), rational(3, 5));
    }

    #[test]
    fn shift_rejects_inconsistent_input() {
        let j = rotation2(std::f64::consts::FRAC_PI_2);
        let quarter = rotation2(std::f64::consts::FRAC_PI_2);
        assert!(matches!(
            degree_shift(&quarter, &j, 3),
            Err(ShiftError::OrderMismatch { .. })
        ));
        let reflection = RMat::from_rows(vec![vec![1.0, 0.0], vec![0.0, -1.0]]);
        assert!(matches!(
            degree_shift(&reflection, &j, 2),
            Err(ShiftError::NotComplexLinear { .. })
        ));
        let odd = RMat::identity(3);
        assert!(matches!(
            degree_shift(&odd, &RMat::identity(3), 1),
            Err(ShiftError::OddDimension { .. })
        ));
    }

    #[test]
    fn shifts_of_inverse_elements_add_to_the_fixed_set_codimension() {
        // For each element g of a cyclic rotation action, the shifts of g
        // and g^-1 add up to the complex codimension of the fixed set.
        let j = rotation2(std::f64::consts::FRAC_PI_2);
        for m in [2usize, 3, 5, 7] {
            let group = group_from_matrices(cyclic_rotations2(m));
            for g in 0..group.order() {
                let inv = group.inverse(g);
                let order = group.element_order(g);
                let a = degree_shift(group.matrix(g), &j, order).unwrap();
                let b = degree_shift(group.matrix(inv), &j, group.element_order(inv)).unwrap();
                let fixed = fixed_subspace(
                    &group.subgroup_generated(&[g]).iter().map(|&h| group.matrix(h).clone()).collect::<Vec<_>>(),
                    FIXED_TOL,
                );
                let codim = rational(((2 - fixed.len()) / 2) as i64, 1);
                assert_eq!(a + b, codim, "element {g} of Z/{m}");
            }
        }
    }

    /// An honest two-chart atlas: a small box chart injecting into a ball
    /// chart by translation, both with trivial groups.
    fn honest_manifold_atlas() -> Atlas {
        let eighth = rational(1, 8);
        let charts = vec![
            Chart {
                name: "small".into(),
                domain: Domain::Box {
                    bounds: vec![
                        (-eighth.clone(), eighth.clone()),
                        (-eighth.clone(), eighth.clone()),
                    ],
                },
                group: trivial_group(2),
            },
            Chart { name: "large".into(), domain: Domain::Ball { dim: 2 }, group: trivial_group(2) },
        ];
        let shift = AffineMap::translation(vec![
            Scalar::from_ratio(1, 2),
            Scalar::from_ratio(0, 1),
        ]);
        let injections = vec![Injection {
            name: "small-large".into(),
            src: 0,
            dst: 1,
            embedding: Embedding::Affine(shift),
            hom: Hom { map: vec![0] },
        }];
        Atlas { name: "honest".into(), charts, injections, compositions: vec![] }
    }

    #[test]
    fn untwisted_sector_reproduces_the_atlas() {
        let atlas = honest_manifold_atlas();
        let ctx = CheckCtx::default();
        assert!(atlas.validate(&ctx).passed());
        let census = sector_census(&atlas);
        let info = build_sector(&atlas, &census, census.untwisted, None).unwrap();
        assert_eq!(info.atlas.charts.len(), 2);
        assert_eq!(info.atlas.charts[0].domain, atlas.charts[0].domain);
        assert_eq!(info.atlas.charts[1].domain, atlas.charts[1].domain);
        assert_eq!(info.atlas.injections.len(), 1);
        let report = info.atlas.validate(&ctx);
        assert!(report.passed(), "{report}");
        assert_eq!(info.shift, None);
    }

    fn phantom_complex() -> (Atlas, Bundle, ComplexStructure, ComplexStructure) {
        let (atlas, bundle) = phantom_rotation_bundle();
        let base_cs = ComplexStructure::standard(&atlas).unwrap();
        let total_cs = base_cs.for_total_space(&bundle).unwrap();
        (atlas, bundle, base_cs, total_cs)
    }

    #[test]
    fn phantom_sectors_have_the_expected_shifts_and_shapes() {
        let (atlas, bundle, base_cs, total_cs) = phantom_complex();
        let ctx = CheckCtx::default();
        let total = bundle.total_space(&atlas);
        assert!(base_cs.validate(&atlas, &ctx).passed());
        let cs_report = total_cs.validate(&total, &ctx);
        assert!(cs_report.passed(), "{cs_report}");

        let census_q = sector_census(&atlas);
        let census_e = sector_census(&total);

        let q = all_sectors(&atlas, &census_q, Some(&base_cs)).unwrap();
        let e = all_sectors(&total, &census_e, Some(&total_cs)).unwrap();

        // Base sectors: the action is trivial, so every sector is the whole
        // chart and every shift vanishes.
        for info in &q {
            assert_eq!(info.atlas.charts[0].domain, Domain::Ball { dim: 2 });
            assert_eq!(info.shift, Some(rational(0, 1)));
            assert!(info.atlas.validate(&ctx).passed());
        }

        // Total-space sectors: the untwisted one keeps the fiber, the
        // twisted ones lose it and carry shifts 1/3 and 2/3.
        assert_eq!(e[0].charts[0].fiber_dim, 2);
        assert_eq!(e[0].shift, Some(rational(0, 1)));
        for (id, expected) in [(1usize, rational(1, 3)), (2usize, rational(2, 3))] {
            assert_eq!(e[id].charts[0].fiber_dim, 0);
            assert_eq!(e[id].atlas.charts[0].domain, Domain::Ball { dim: 2 });
            assert_eq!(e[id].shift, Some(expected));
            assert_eq!(e[id].atlas.charts[0].group.order(), 3);
            let report = e[id].atlas.validate(&ctx);
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn retraction_is_identity_projection_and_domain_preserving() {
        let (atlas, bundle, _, total_cs) = phantom_complex();
        let total = bundle.total_space(&atlas);
        let census = sector_census(&total);
        let sectors = all_sectors(&total, &census, Some(&total_cs)).unwrap();
        let ctx = CheckCtx::default();
        let ts = default_retraction_samples();
        for info in &sectors {
            let report = retraction_check(info, &ts, &ctx);
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn iota_star_restricts_constants_and_regrades() {
        let (atlas, bundle, base_cs, total_cs) = phantom_complex();
        let total = bundle.total_space(&atlas);
        let q = all_sectors(&atlas, &sector_census(&atlas), Some(&base_cs)).unwrap();
        let e = all_sectors(&total, &sector_census(&total), Some(&total_cs)).unwrap();

        // Constant 1 on the first twisted total-space sector sits in
        // rational degree 2/3; its restriction lands in degree 0.
        let comp = constant_component(&e[1], 1, Expr::one());
        assert_eq!(comp.degree(), Some(rational(2, 3)));
        let cls = OrbifoldClass { components: vec![comp] };
        let down = iota_star(&e, &q, &cls).unwrap();
        assert_eq!(down.components.len(), 1);
        assert_eq!(down.components[0].degree(), Some(rational(0, 1)));
        let form = &down.components[0].forms[0];
        assert_eq!(form.terms().len(), 1);
        assert!(form.terms()[0].1.is_empty());
        assert_eq!(form.terms()[0].0, Expr::one());
    }

    #[test]
    fn iota_star_substitutes_zero_for_fiber_coordinates() {
        let (atlas, bundle, base_cs, total_cs) = phantom_complex();
        let total = bundle.total_space(&atlas);
        let q = all_sectors(&atlas, &sector_census(&atlas), Some(&base_cs)).unwrap();
        let e = all_sectors(&total, &sector_census(&total), Some(&total_cs)).unwrap();

        // f(x, v) = x1 + v1^2 on the untwisted total-space sector.
        let f = Expr::add(Expr::var(1), Expr::pow(Expr::var(3), 2));
        let comp = ClassComponent {
            sector: 0,
            form_degree: 0,
            shift: e[0].shift.clone(),
            forms: vec![FormExpr::scalar(4, f)],
            integral: None,
        };
        let down = iota_star(&e, &q, &OrbifoldClass { components: vec![comp] }).unwrap();
        let form = &down.components[0].forms[0];
        assert_eq!(form.terms().len(), 1);
        assert_eq!(form.terms()[0].0, Expr::var(1));

        // A fiber differential dies under the restriction.
        let dv = FormExpr::monomial(4, Expr::one(), vec![3]);
        let comp = ClassComponent {
            sector: 0,
            form_degree: 1,
            shift: e[0].shift.clone(),
            forms: vec![dv],
            integral: None,
        };
        let down = iota_star(&e, &q, &OrbifoldClass { components: vec![comp] }).unwrap();
        assert!(down.components[0].forms[0].is_structurally_zero());
    }

    #[test]
    fn iota_star_is_additive_and_inverts_constant_lifts() {
        let (atlas, bundle, base_cs, total_cs) = phantom_complex();
        let total = bundle.total_space(&atlas);
        let q = all_sectors(&atlas, &sector_census(&atlas), Some(&base_cs)).unwrap();
        let e = all_sectors(&total, &sector_census(&total), Some(&total_cs)).unwrap();

        let c1 = OrbifoldClass { components: vec![constant_component(&e[1], 1, Expr::int(2))] };
        let c2 = OrbifoldClass { components: vec![constant_component(&e[1], 1, Expr::rational(1, 2))] };
        let lhs = iota_star(&e, &q, &c1.add(&c2)).unwrap();
        let rhs = iota_star(&e, &q, &c1).unwrap().add(&iota_star(&e, &q, &c2).unwrap());
        assert_eq!(lhs.components.len(), rhs.components.len());
        for (a, b) in lhs.components.iter().zip(&rhs.components) {
            assert_eq!(a.forms[0].terms().len(), b.forms[0].terms().len());
            let pa = a.forms[0].terms()[0].0.eval(&[0.3, -0.2]).unwrap();
            let pb = b.forms[0].terms()[0].0.eval(&[0.3, -0.2]).unwrap();
            assert!((pa - pb).abs() < 1e-12);
        }

        // Lifting a constant from the base and restricting it back is the
        // identity on the constant, including its grading.
        let lifted = constant_component(&e[2], 2, Expr::rational(-5, 4));
        let down = iota_star(&e, &q, &OrbifoldClass { components: vec![lifted] }).unwrap();
        assert_eq!(down.components[0].shift, q[2].shift);
        assert_eq!(
            down.components[0].forms[0].terms()[0].0.eval(&[0.0, 0.0]).unwrap(),
            -1.25
        );
    }

    #[test]
    fn box_domains_slice_only_along_axes() {
        // The diagonal swap fixes the off-axis line x = y of the square.
        let swap = RMat::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let atlas = Atlas {
            name: "square".into(),
            charts: vec![Chart {
                name: "sq".into(),
                domain: Domain::Box {
                    bounds: vec![
                        (rational(-1, 1), rational(1, 1)),
                        (rational(-1, 1), rational(1, 1)),
                    ],
                },
                group: group_from_matrices(vec![RMat::identity(2), swap]),
            }],
            injections: vec![],
            compositions: vec![],
        };
        let census = sector_census(&atlas);
        let err = build_sector(&atlas, &census, 1, None).unwrap_err();
        assert!(matches!(err, SectorError::BoxSlice { .. }), "{err}");
    }

    #[test]
    fn axis_aligned_box_slices_keep_their_bounds() {
        let flip = RMat::from_rows(vec![vec![1.0, 0.0], vec![0.0, -1.0]]);
        let atlas = Atlas {
            name: "strip".into(),
            charts: vec![Chart {
                name: "st".into(),
                domain: Domain::Box {
                    bounds: vec![
                        (rational(-1, 2), rational(1, 2)),
                        (rational(-2, 1), rational(2, 1)),
                    ],
                },
                group: group_from_matrices(vec![RMat::identity(2), flip]),
            }],
            injections: vec![],
            compositions: vec![],
        };
        let census = sector_census(&atlas);
        let info = build_sector(&atlas, &census, 1, None).unwrap();
        assert_eq!(
            info.atlas.charts[0].domain,
            Domain::Box { bounds: vec![(rational(-1, 2), rational(1, 2))] }
        );
        assert_eq!(info.atlas.charts[0].group.order(), 2);
        assert!(info.atlas.validate(&CheckCtx::default()).passed());
    }

    #[test]
    fn empty_box_slices_are_rejected() {
        let neg = RMat::from_rows(vec![vec![-1.0]]);
        let atlas = Atlas {
            name: "offset".into(),
            charts: vec![Chart {
                name: "seg".into(),
                domain: Domain::Box { bounds: vec![(rational(1, 1), rational(2, 1))] },
                group: group_from_matrices(vec![RMat::identity(1), neg]),
            }],
            injections: vec![],
            compositions: vec![],
        };
        let census = sector_census(&atlas);
        let err = build_sector(&atlas, &census, 1, None).unwrap_err();
        assert!(matches!(err, SectorError::EmptySlice { .. }), "{err}");
    }

    #[test]
    fn fibered_charts_require_block_actions() {
        let atlas = Atlas {
            name: "mixed".into(),
            charts: vec![Chart {
                name: "mx".into(),
                domain: Domain::Ball { dim: 1 }.fibered(1),
                group: group_from_matrices(cyclic_rotations2(4)),
            }],
            injections: vec![],
            compositions: vec![],
        };
        let census = sector_census(&atlas);
        let err = build_sector(&atlas, &census, 1, None).unwrap_err();
        assert!(matches!(err, SectorError::FiberMixing { .. }), "{err}");
    }

    #[test]
    fn point_charts_appear_when_only_the_origin_is_fixed() {
        let atlas = Atlas {
            name: "cone".into(),
            charts: vec![Chart {
                name: "tip".into(),
                domain: Domain::Ball { dim: 2 },
                group: group_from_matrices(cyclic_rotations2(3)),
            }],
            injections: vec![],
            compositions: vec![],
        };
        let census = sector_census(&atlas);
        let info = build_sector(&atlas, &census, 1, None).unwrap();
        assert_eq!(info.atlas.charts[0].domain, Domain::Box { bounds: vec![] });
        assert_eq!(info.atlas.charts[0].group.order(), 3);
        let report = info.atlas.validate(&CheckCtx::default());
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn restricted_partitions_transport_overlap_groups() {
        let atlas = honest_manifold_atlas();
        let census = sector_census(&atlas);
        let info = build_sector(&atlas, &census, census.untwisted, None).unwrap();
        let partition = PartitionOfUnity {
            weights: vec![Expr::one(), Expr::one()],
            overlaps: vec![vec![0]],
        };
        let restricted = info.restrict_partition(&partition);
        assert_eq!(restricted.weights.len(), 2);
        assert_eq!(restricted.overlaps, vec![vec![0]]);
    }

    #[test]
    fn shift_fraction_converts_for_reporting() {
        // Sanity on the fraction-to-float conversion used by the CLI.
        let r = rational(2, 3);
        assert!((r.to_f64().unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }
}
