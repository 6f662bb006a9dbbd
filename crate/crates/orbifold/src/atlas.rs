//! Orbifold atlases: charts, injections, and their validators.
//!
//! A chart is a symmetric domain (ball, box, or ball-box product) together
//! with a finite group acting orthogonally on it. An injection embeds one
//! chart into another, affinely on the base and (for total spaces of vector
//! bundles) linearly on fiber coordinates with base-dependent matrices, and
//! carries an injective homomorphism of chart groups. Validators check each
//! axiom numerically on a deterministic sample grid plus seeded random
//! interior points, and exactly where the data is discrete (homomorphisms,
//! kernels, multiplication tables).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::expr::{EvalError, Expr, ExprMatrix, Scalar};
use crate::groups::{FiniteGroup, Hom};
use crate::linalg::RMat;
use crate::report::Report;
use crate::{CheckCtx, DET_MIN, TOL_MATRIX, TOL_SAMPLED};

/// Number of seeded random interior points used by sampled checks, in
/// addition to the deterministic grid.
pub const RANDOM_SAMPLES: usize = 50;

/// A chart domain, centered at the origin.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    /// Open unit ball of the given dimension.
    Ball { dim: usize },
    /// Axis-aligned box with exact rational bounds.
    Box { bounds: Vec<(BigRational, BigRational)> },
    /// Base domain times a unit disk in the trailing fiber coordinates: the
    /// shape of total-space charts. A disk (rather than a box) keeps the
    /// domain invariant under every orthogonal fiber action.
    Fibered { base: Box<Domain>, fiber_dim: usize },
}

/// The symmetric box `[-1, 1]^k` used for fiber coordinates.
pub fn unit_box_bounds(k: usize) -> Vec<(BigRational, BigRational)> {
    let one = BigRational::from_integer(BigInt::from(1));
    (0..k).map(|_| (-one.clone(), one.clone())).collect()
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { dim } => *dim,
            Domain::Box { bounds } => bounds.len(),
            Domain::Fibered { base, fiber_dim } => base.dim() + fiber_dim,
        }
    }

    /// Extend by a unit disk in `k` fiber coordinates (total-space domains).
    pub fn fibered(&self, k: usize) -> Domain {
        match self {
            Domain::Fibered { .. } => panic!("total-space domains are not fibered again"),
            base => Domain::Fibered { base: Box::new(base.clone()), fiber_dim: k },
        }
    }

    /// Signed violation of the domain constraints: negative strictly inside,
    /// zero on the boundary, positive outside.
    pub fn violation(&self, p: &[f64]) -> f64 {
        assert_eq!(p.len(), self.dim(), "point dimension mismatch");
        match self {
            Domain::Ball { .. } => crate::linalg::norm(p) - 1.0,
            Domain::Box { bounds } => box_violation(bounds, p),
            Domain::Fibered { base, .. } => {
                let n = base.dim();
                base.violation(&p[..n]).max(crate::linalg::norm(&p[n..]) - 1.0)
            }
        }
    }

    pub fn contains(&self, p: &[f64], slack: f64) -> bool {
        self.violation(p) <= slack
    }

    pub fn center(&self) -> Vec<f64> {
        match self {
            Domain::Ball { dim } => vec![0.0; *dim],
            Domain::Box { bounds } => box_center(bounds),
            Domain::Fibered { base, fiber_dim } => {
                let mut c = base.center();
                c.extend(vec![0.0; *fiber_dim]);
                c
            }
        }
    }

    /// Deterministic grid: box corners, ball axis points at radius 9/10, and
    /// the center. Enough to pin down affine data exactly.
    pub fn grid(&self) -> Vec<Vec<f64>> {
        let mut pts = match self {
            Domain::Ball { dim } => ball_axis_points(*dim),
            Domain::Box { bounds } => box_corners(bounds),
            Domain::Fibered { base, fiber_dim } => {
                let mut pts = Vec::new();
                let mut fiber_part = ball_axis_points(*fiber_dim);
                fiber_part.push(vec![0.0; *fiber_dim]);
                for bp in base.grid() {
                    for fp in &fiber_part {
                        let mut p = bp.clone();
                        p.extend_from_slice(fp);
                        pts.push(p);
                    }
                }
                pts
            }
        };
        pts.push(self.center());
        pts
    }

    /// Seeded random points strictly inside the domain (margin away from the
    /// boundary, so images under boundary-preserving maps stay interior).
    pub fn random_interior(&self, rng: &mut ChaCha8Rng, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.one_random_interior(rng)).collect()
    }

    fn one_random_interior(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Domain::Ball { dim } => random_ball_point(rng, *dim),
            Domain::Box { bounds } => random_box_point(rng, bounds),
            Domain::Fibered { base, fiber_dim } => {
                let mut p = base.one_random_interior(rng);
                p.extend(random_ball_point(rng, *fiber_dim));
                p
            }
        }
    }

    /// Grid plus seeded random interior points: the standard sample set for
    /// numeric checks of maps that are defined on the whole (closed) chart.
    pub fn samples(&self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = self.grid();
        pts.extend(self.random_interior(&mut rng, RANDOM_SAMPLES));
        pts
    }

    /// Random interior points only. Expression-valued data (connections,
    /// sections, fiber transitions) may have removable singularities written
    /// in coordinates that misbehave exactly at special points like the
    /// center, so those checks sample away from the grid.
    pub fn interior_samples(&self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.random_interior(&mut rng, RANDOM_SAMPLES)
    }
}

fn box_violation(bounds: &[(BigRational, BigRational)], p: &[f64]) -> f64 {
    if bounds.is_empty() {
        return -1.0; // a point chart contains its single point
    }
    bounds
        .iter()
        .zip(p)
        .map(|((lo, hi), &x)| {
            let lo = lo.to_f64().unwrap();
            let hi = hi.to_f64().unwrap();
            (lo - x).max(x - hi)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn box_center(bounds: &[(BigRational, BigRational)]) -> Vec<f64> {
    bounds
        .iter()
        .map(|(lo, hi)| (lo.to_f64().unwrap() + hi.to_f64().unwrap()) / 2.0)
        .collect()
}

fn box_corners(bounds: &[(BigRational, BigRational)]) -> Vec<Vec<f64>> {
    let d = bounds.len();
    (0..(1usize << d))
        .map(|mask| {
            bounds
                .iter()
                .enumerate()
                .map(|(i, (lo, hi))| {
                    if mask >> i & 1 == 1 {
                        hi.to_f64().unwrap()
                    } else {
                        lo.to_f64().unwrap()
                    }
                })
                .collect()
        })
        .collect()
}

fn ball_axis_points(dim: usize) -> Vec<Vec<f64>> {
    let mut pts = Vec::with_capacity(2 * dim);
    for i in 0..dim {
        for sign in [0.9, -0.9] {
            let mut p = vec![0.0; dim];
            p[i] = sign;
            pts.push(p);
        }
    }
    pts
}

fn random_ball_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    if dim == 0 {
        return Vec::new();
    }
    loop {
        let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.95..0.95)).collect();
        if crate::linalg::norm(&p) < 0.95 {
            return p;
        }
    }
}

fn random_box_point(rng: &mut ChaCha8Rng, bounds: &[(BigRational, BigRational)]) -> Vec<f64> {
    bounds
        .iter()
        .map(|(lo, hi)| {
            let lo = lo.to_f64().unwrap();
            let hi = hi.to_f64().unwrap();
            let u: f64 = rng.gen_range(0.02..0.98);
            lo + u * (hi - lo)
        })
        .collect()
}

/// An affine map `x -> A x + b` with scalar (exact-rational or float)
/// entries. Chart injections require `A` orthogonal; that is a validator
/// check, not a construction invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub mat: Vec<Vec<Scalar>>,
    pub trans: Vec<Scalar>,
}

impl AffineMap {
    pub fn identity(n: usize) -> Self {
        AffineMap {
            mat: (0..n)
                .map(|i| (0..n).map(|j| Scalar::from_int(i64::from(i == j))).collect())
                .collect(),
            trans: vec![Scalar::from_int(0); n],
        }
    }

    /// Pure translation by exact rationals.
    pub fn translation(by: Vec<Scalar>) -> Self {
        let mut m = AffineMap::identity(by.len());
        m.trans = by;
        m
    }

    pub fn from_f64(a: &RMat, b: &[f64]) -> Self {
        AffineMap {
            mat: (0..a.rows)
                .map(|i| (0..a.cols).map(|j| Scalar::Float(a[(i, j)])).collect())
                .collect(),
            trans: b.iter().map(|&x| Scalar::Float(x)).collect(),
        }
    }

    pub fn src_dim(&self) -> usize {
        self.mat.first().map_or(0, Vec::len)
    }

    pub fn dst_dim(&self) -> usize {
        self.mat.len()
    }

    pub fn rmat(&self) -> RMat {
        RMat::from_fn(self.dst_dim(), self.src_dim(), |i, j| self.mat[i][j].to_f64())
    }

    pub fn trans_f64(&self) -> Vec<f64> {
        self.trans.iter().map(Scalar::to_f64).collect()
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let mut out = self.rmat().apply(p);
        for (o, t) in out.iter_mut().zip(self.trans_f64()) {
            *o += t;
        }
        out
    }

    /// Component expressions in the source variables `x1..x_src`.
    pub fn coord_exprs(&self) -> Vec<Expr> {
        (0..self.dst_dim())
            .map(|i| {
                let row = Expr::sum(
                    self.mat[i]
                        .iter()
                        .enumerate()
                        .map(|(j, a)| Expr::mul(Expr::constant(a.clone()), Expr::var(j as u32 + 1))),
                );
                Expr::add(row, Expr::constant(self.trans[i].clone()))
            })
            .collect()
    }
}

/// The map part of an injection between charts.
#[derive(Debug, Clone)]
pub enum Embedding {
    /// Affine-orthogonal on a plain chart.
    Affine(AffineMap),
    /// Total-space map `(x, v) -> (phi(x), g(x) v)`: affine on the base,
    /// linear on fibers with a base-dependent matrix of expressions.
    Bundle { base: AffineMap, fiber: ExprMatrix },
}

impl Embedding {
    pub fn src_dim(&self) -> usize {
        match self {
            Embedding::Affine(a) => a.src_dim(),
            Embedding::Bundle { base, fiber } => base.src_dim() + fiber.cols,
        }
    }

    pub fn dst_dim(&self) -> usize {
        match self {
            Embedding::Affine(a) => a.dst_dim(),
            Embedding::Bundle { base, fiber } => base.dst_dim() + fiber.rows,
        }
    }

    pub fn base_dim(&self) -> usize {
        match self {
            Embedding::Affine(a) => a.src_dim(),
            Embedding::Bundle { base, .. } => base.src_dim(),
        }
    }

    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>, EvalError> {
        match self {
            Embedding::Affine(a) => Ok(a.apply(p)),
            Embedding::Bundle { base, fiber } => {
                let n = base.src_dim();
                let (x, v) = p.split_at(n);
                let mut out = base.apply(x);
                let g = fiber.eval(x)?;
                out.extend(g.apply(v));
                Ok(out)
            }
        }
    }

    /// Component expressions in the source variables (base coordinates
    /// `x1..xn`, then fiber coordinates `x{n+1}..`). The single primitive
    /// behind every pullback in the crate.
    pub fn coord_exprs(&self) -> Vec<Expr> {
        match self {
            Embedding::Affine(a) => a.coord_exprs(),
            Embedding::Bundle { base, fiber } => {
                let n = base.src_dim() as u32;
                let mut out = base.coord_exprs();
                for i in 0..fiber.rows {
                    out.push(Expr::sum((0..fiber.cols).map(|j| {
                        Expr::mul(fiber.at(i, j).clone(), Expr::var(n + j as u32 + 1))
                    })));
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub name: String,
    pub domain: Domain,
    pub group: FiniteGroup,
}

#[derive(Debug, Clone)]
pub struct Injection {
    pub name: String,
    pub src: usize,
    pub dst: usize,
    pub embedding: Embedding,
    pub hom: Hom,
}

/// A declared composition relation: `second . first = element * composite`
/// (with the group element acting on the target chart), the compatibility
/// law injections of an atlas must satisfy on triple overlaps.
#[derive(Debug, Clone)]
pub struct Composition {
    pub first: usize,
    pub second: usize,
    pub composite: usize,
    pub element: usize,
}

#[derive(Debug, Clone)]
pub struct Atlas {
    pub name: String,
    pub charts: Vec<Chart>,
    pub injections: Vec<Injection>,
    pub compositions: Vec<Composition>,
}

impl Atlas {
    pub fn dim(&self) -> usize {
        self.charts.first().map_or(0, |c| c.domain.dim())
    }

    /// Full structural validation. Group tables and homomorphisms are exact;
    /// geometric statements are sampled on the grid plus seeded points.
    pub fn validate(&self, ctx: &CheckCtx) -> Report {
        let mut report = Report::new(format!("atlas `{}`", self.name));
        for (i, chart) in self.charts.iter().enumerate() {
            report.absorb(&format!("chart[{}]", chart.name), self.validate_chart(i, ctx));
        }
        for (k, inj) in self.injections.iter().enumerate() {
            match self.validate_injection(k, ctx) {
                Ok(sub) => report.absorb(&format!("injection[{}]", inj.name), sub),
                Err(msg) => report.boolean(format!("injection[{}]", inj.name), false, msg),
            }
        }
        for (k, _) in self.compositions.iter().enumerate() {
            match self.validate_composition(k, ctx) {
                Ok(sub) => report.absorb(&format!("composition[{k}]"), sub),
                Err(msg) => report.boolean(format!("composition[{k}]"), false, msg),
            }
        }
        report.absorb("kernel", self.validate_kernel_transport());
        report
    }

    fn validate_chart(&self, i: usize, ctx: &CheckCtx) -> Report {
        let chart = &self.charts[i];
        let mut report = Report::new("chart");
        if chart.group.dim() != chart.domain.dim() {
            report.boolean(
                "group-dimension",
                false,
                format!(
                    "group acts on dimension {} but domain has dimension {}",
                    chart.group.dim(),
                    chart.domain.dim()
                ),
            );
            return report;
        }
        // The group must preserve the domain; orthogonality keeps balls
        // invariant automatically, boxes are checked point by point.
        let mut worst = f64::NEG_INFINITY;
        for p in chart.domain.samples(sample_seed(ctx, 0x0c, i)) {
            for g in chart.group.matrices() {
                worst = worst.max(chart.domain.violation(&g.apply(&p)));
            }
        }
        report.numeric(
            "domain-invariant",
            worst.max(0.0),
            TOL_SAMPLED,
            "max constraint violation of g*x over samples",
        );
        report
    }

    fn validate_injection(&self, k: usize, ctx: &CheckCtx) -> Result<Report, String> {
        let inj = &self.injections[k];
        let mut report = Report::new("injection");
        let src = self
            .charts
            .get(inj.src)
            .ok_or_else(|| format!("source chart index {} out of range", inj.src))?;
        let dst = self
            .charts
            .get(inj.dst)
            .ok_or_else(|| format!("target chart index {} out of range", inj.dst))?;
        if inj.embedding.src_dim() != src.domain.dim() || inj.embedding.dst_dim() != dst.domain.dim() {
            return Err(format!(
                "embedding maps dimension {} to {}, charts have {} and {}",
                inj.embedding.src_dim(),
                inj.embedding.dst_dim(),
                src.domain.dim(),
                dst.domain.dim()
            ));
        }

        // Injectivity certificate for the map part.
        match &inj.embedding {
            Embedding::Affine(a) => {
                report.numeric(
                    "orthogonal",
                    a.rmat().orthogonality_defect(),
                    TOL_MATRIX,
                    "linear part must be orthogonal",
                );
            }
            Embedding::Bundle { base, fiber } => {
                report.numeric(
                    "base-orthogonal",
                    base.rmat().orthogonality_defect(),
                    TOL_MATRIX,
                    "base part must be orthogonal",
                );
                let mut min_det = f64::INFINITY;
                let base_src = Domain::restrict_base(&src.domain, base.src_dim());
                for x in base_src.interior_samples(sample_seed(ctx, 0x1f, k)) {
                    match fiber.eval(&x) {
                        Ok(g) => min_det = min_det.min(g.det().abs()),
                        Err(e) => {
                            report.boolean("fiber-invertible", false, format!("evaluation failed: {e}"));
                            min_det = f64::NAN;
                            break;
                        }
                    }
                }
                if min_det.is_finite() {
                    report.boolean(
                        "fiber-invertible",
                        min_det >= DET_MIN,
                        format!("min |det| over samples = {min_det:.3e}"),
                    );
                }
            }
        }

        report.absorb("hom", inj.hom.validate(&src.group, &dst.group));
        if !report.passed() {
            return Ok(report);
        }

        // Image stays inside the target chart.
        let samples = src.domain.samples(sample_seed(ctx, 0x02, k));
        let mut worst_inside = f64::NEG_INFINITY;
        let mut worst_equi = 0f64;
        for p in &samples {
            let image = match inj.embedding.apply(p) {
                Ok(v) => v,
                Err(e) => {
                    report.boolean("image-in-target", false, format!("evaluation failed: {e}"));
                    return Ok(report);
                }
            };
            worst_inside = worst_inside.max(dst.domain.violation(&image));
            // Equivariance: phi(g w) = lambda(g) phi(w).
            for gi in 0..src.group.order() {
                let moved = src.group.matrix(gi).apply(p);
                let lhs = inj.embedding.apply(&moved).map_err(|e| e.to_string())?;
                let rhs = dst.group.matrix(inj.hom.apply(gi)).apply(&image);
                let diff = lhs
                    .iter()
                    .zip(&rhs)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                worst_equi = worst_equi.max(diff);
            }
        }
        report.numeric(
            "image-in-target",
            worst_inside.max(0.0),
            TOL_SAMPLED,
            "max target-domain violation of the image",
        );
        report.numeric(
            "equivariance",
            worst_equi,
            TOL_SAMPLED,
            "max ||phi(g w) - lambda(g) phi(w)||",
        );
        Ok(report)
    }

    fn validate_composition(&self, k: usize, ctx: &CheckCtx) -> Result<Report, String> {
        let comp = &self.compositions[k];
        let mut report = Report::new("composition");
        let get = |i: usize| -> Result<&Injection, String> {
            self.injections.get(i).ok_or_else(|| format!("injection index {i} out of range"))
        };
        let first = get(comp.first)?;
        let second = get(comp.second)?;
        let composite = get(comp.composite)?;
        if first.dst != second.src || composite.src != first.src || composite.dst != second.dst {
            return Err("composition endpoints do not line up".into());
        }
        let target = &self.charts[second.dst];
        if comp.element >= target.group.order() {
            return Err(format!("group element {} out of range", comp.element));
        }
        let t = target.group.matrix(comp.element);
        let samples = self.charts[first.src].domain.samples(sample_seed(ctx, 0x03, k));
        let mut worst = 0f64;
        for p in &samples {
            let via = second
                .embedding
                .apply(&first.embedding.apply(p).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let direct = t.apply(&composite.embedding.apply(p).map_err(|e| e.to_string())?);
            let diff = via.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(diff);
        }
        report.numeric(
            "maps",
            worst,
            TOL_SAMPLED,
            "max ||phi2(phi1(w)) - t phi3(w)||",
        );
        // Homomorphism side: lambda2 . lambda1 = Ad_t . lambda3, exactly.
        let src_group = &self.charts[first.src].group;
        let tg = &target.group;
        let hom_ok = (0..src_group.order()).all(|g| {
            second.hom.apply(first.hom.apply(g))
                == tg.mul(tg.mul(comp.element, composite.hom.apply(g)), tg.inverse(comp.element))
        });
        report.boolean("homs", hom_ok, "lambda2 . lambda1 must equal t lambda3 t^-1");
        Ok(report)
    }

    /// Per-chart kernel of the base action (element indices acting as the
    /// identity matrix).
    pub fn base_kernels(&self) -> Vec<Vec<usize>> {
        self.charts
            .iter()
            .map(|c| {
                let rep = crate::groups::Representation { mats: c.group.matrices().to_vec() };
                rep.kernel(&c.group)
            })
            .collect()
    }

    /// Kernels must transport along injections: `lambda(ker) = ker` (one
    /// inclusion is automatic from equivariance and injectivity of the chart
    /// map, so sizes plus one inclusion settle it exactly).
    fn validate_kernel_transport(&self) -> Report {
        let mut report = Report::new("kernel");
        let kernels = self.base_kernels();
        let mut ok = true;
        let mut detail = String::new();
        for inj in &self.injections {
            let src_k = &kernels[inj.src];
            let dst_k = &kernels[inj.dst];
            let image_in = src_k.iter().all(|&g| dst_k.contains(&inj.hom.apply(g)));
            if !image_in || src_k.len() != dst_k.len() {
                ok = false;
                detail = format!(
                    "injection `{}`: kernel orders {} -> {}",
                    inj.name,
                    src_k.len(),
                    dst_k.len()
                );
                break;
            }
        }
        report.boolean("transport", ok, detail);
        report
    }

    /// Reduced: every chart group acts effectively on its chart.
    pub fn is_reduced(&self) -> bool {
        self.base_kernels().iter().all(|k| k.len() == 1)
    }
}

impl Domain {
    /// The base factor of a (possibly fibered) domain.
    pub fn restrict_base(domain: &Domain, base_dim: usize) -> Domain {
        match domain {
            Domain::Fibered { base, .. } => {
                assert_eq!(base.dim(), base_dim);
                (**base).clone()
            }
            d => {
                assert_eq!(d.dim(), base_dim);
                d.clone()
            }
        }
    }
}

/// Stable per-check seed derived from the run seed and the object index.
pub fn sample_seed(ctx: &CheckCtx, salt: u64, index: usize) -> u64 {
    ctx.seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(salt << 32)
        .wrapping_add(index as u64)
}

/// Integration weights subordinate to an atlas: one nonnegative invariant
/// weight function per chart. Declared overlap groups (injections sharing a
/// source chart) are where the weights are required to sum to one; charts
/// whose images only meet in measure zero need no declaration.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    pub weights: Vec<Expr>,
    pub overlaps: Vec<Vec<usize>>,
}

impl PartitionOfUnity {
    /// Weight 1 on every chart: valid whenever chart images are disjoint up
    /// to measure zero except along declared zero-weight connectors.
    pub fn uniform(atlas: &Atlas) -> Self {
        PartitionOfUnity { weights: vec![Expr::one(); atlas.charts.len()], overlaps: Vec::new() }
    }

    pub fn validate(&self, atlas: &Atlas, ctx: &CheckCtx) -> Report {
        let mut report = Report::new("partition");
        if self.weights.len() != atlas.charts.len() {
            report.boolean(
                "shape",
                false,
                format!("{} weights for {} charts", self.weights.len(), atlas.charts.len()),
            );
            return report;
        }
        let mut worst_range = 0f64;
        let mut worst_invariance = 0f64;
        for (i, chart) in atlas.charts.iter().enumerate() {
            for p in chart.domain.interior_samples(sample_seed(ctx, 0x05, i)) {
                let v = match self.weights[i].eval(&p) {
                    Ok(v) => v,
                    Err(e) => {
                        report.boolean("range", false, format!("chart {i}: evaluation failed: {e}"));
                        return report;
                    }
                };
                worst_range = worst_range.max((-v).max(v - 1.0));
                for g in chart.group.matrices() {
                    match self.weights[i].eval(&g.apply(&p)) {
                        Ok(w) => worst_invariance = worst_invariance.max((w - v).abs()),
                        Err(e) => {
                            report.boolean("invariance", false, format!("chart {i}: {e}"));
                            return report;
                        }
                    }
                }
            }
        }
        report.numeric("range", worst_range.max(0.0), TOL_SAMPLED, "weights must lie in [0, 1]");
        report.numeric("invariance", worst_invariance, TOL_SAMPLED, "weights must be group-invariant");

        let mut worst_sum = 0f64;
        for (k, group) in self.overlaps.iter().enumerate() {
            let Some(&first) = group.first() else { continue };
            let Some(inj) = atlas.injections.get(first) else {
                report.boolean("overlap-shape", false, format!("overlap {k}: injection out of range"));
                return report;
            };
            let src = inj.src;
            if group.iter().any(|&j| atlas.injections.get(j).map(|i| i.src) != Some(src)) {
                report.boolean(
                    "overlap-shape",
                    false,
                    format!("overlap {k}: injections do not share a source chart"),
                );
                return report;
            }
            for p in atlas.charts[src].domain.interior_samples(sample_seed(ctx, 0x06, k)) {
                let mut sum = 0.0;
                for &j in group {
                    let inj = &atlas.injections[j];
                    let image = match inj.embedding.apply(&p) {
                        Ok(v) => v,
                        Err(e) => {
                            report.boolean("overlap-sum", false, format!("overlap {k}: {e}"));
                            return report;
                        }
                    };
                    match self.weights[inj.dst].eval(&image) {
                        Ok(v) => sum += v,
                        Err(e) => {
                            report.boolean("overlap-sum", false, format!("overlap {k}: {e}"));
                            return report;
                        }
                    }
                }
                worst_sum = worst_sum.max((sum - 1.0).abs());
            }
        }
        report.numeric(
            "overlap-sum",
            worst_sum,
            TOL_SAMPLED,
            "declared covering weights must sum to 1",
        );
        report
    }
}
