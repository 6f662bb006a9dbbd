//! Vector bundles over orbifold atlases, presented as cocycles.
//!
//! A bundle assigns to each chart a fiber representation of the chart group
//! and to each injection a base-dependent invertible transition matrix. The
//! central dichotomy: a bundle is *good* when, chart by chart, every group
//! element that acts trivially on the chart also acts trivially on the
//! fiber; otherwise it is *bad*. Bad bundles can only live over non-reduced
//! structures, and they are exactly the ones that are not pulled back from
//! the underlying reduced orbifold.
//!
//! The total space of any bundle is again an orbifold atlas (fibers clipped
//! to the unit box), and its vertical bundle is always good; restricting the
//! vertical bundle to the zero section recovers the original cocycle. Those
//! two facts are not assumed anywhere: [`Bundle::classify`] recomputes
//! kernels from scratch and [`Bundle::restriction_certificate`] measures the
//! recovery residual.

use serde::Serialize;

use crate::atlas::{sample_seed, Atlas, Chart, Domain, Embedding, Injection};
use crate::expr::{Expr, ExprMatrix};
use crate::groups::{group_from_table, Representation};
use crate::linalg::RMat;
use crate::report::Report;
use crate::{CheckCtx, DET_MIN, NONVANISHING_MIN, TOL_MATRIX, TOL_RESTRICTION, TOL_SAMPLED};

/// A rank-`k` vector bundle over an atlas, as local data plus gluing.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub rank: usize,
    /// Fiber action of each chart group, aligned with `atlas.charts`.
    pub fiber_reps: Vec<Representation>,
    /// Fiber transition of each injection, aligned with `atlas.injections`;
    /// entries are expressions in the source chart's base coordinates.
    pub transitions: Vec<ExprMatrix>,
    /// Whether the cocycle claims orthogonal (metric) transitions.
    pub orthogonal: bool,
    /// Optional fiberwise complex structure, one constant matrix per chart.
    pub complex: Option<Vec<RMat>>,
}

/// Outcome of the good/bad test, with the kernels that decide it.
#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub good: bool,
    pub charts: Vec<ChartKernels>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChartKernels {
    pub chart: String,
    /// Elements acting trivially on the chart.
    pub base_kernel: Vec<usize>,
    /// Elements acting trivially on chart and fiber simultaneously.
    pub full_kernel: Vec<usize>,
}

impl Bundle {
    /// A rank-`k` product bundle: trivial fiber actions and identity
    /// transitions.
    pub fn product(atlas: &Atlas, rank: usize) -> Bundle {
        Bundle {
            rank,
            fiber_reps: atlas
                .charts
                .iter()
                .map(|c| Representation { mats: vec![RMat::identity(rank); c.group.order()] })
                .collect(),
            transitions: atlas.injections.iter().map(|_| ExprMatrix::identity(rank)).collect(),
            orthogonal: true,
            complex: None,
        }
    }

    pub fn validate(&self, atlas: &Atlas, ctx: &CheckCtx) -> Report {
        let mut report = Report::new("bundle");
        if self.fiber_reps.len() != atlas.charts.len() {
            report.boolean(
                "shape",
                false,
                format!("{} fiber actions for {} charts", self.fiber_reps.len(), atlas.charts.len()),
            );
            return report;
        }
        if self.transitions.len() != atlas.injections.len() {
            report.boolean(
                "shape",
                false,
                format!("{} transitions for {} injections", self.transitions.len(), atlas.injections.len()),
            );
            return report;
        }
        for (i, chart) in atlas.charts.iter().enumerate() {
            let rep = &self.fiber_reps[i];
            if rep.dim() != self.rank {
                report.boolean(
                    "shape",
                    false,
                    format!("chart `{}`: fiber action has dimension {}, rank is {}", chart.name, rep.dim(), self.rank),
                );
                return report;
            }
            report.absorb(&format!("fiber-action[{}]", chart.name), rep.validate(&chart.group));
        }
        report.boolean("shape", true, "");

        for (k, inj) in atlas.injections.iter().enumerate() {
            let sub = self.validate_transition(atlas, k, ctx);
            report.absorb(&format!("transition[{}]", inj.name), sub);
        }

        // Cocycle relation over declared triple overlaps:
        // t2(phi1(x)) t1(x) = rho(element) t3(x).
        let mut worst_cocycle = 0f64;
        for (c, comp) in atlas.compositions.iter().enumerate() {
            let first = &atlas.injections[comp.first];
            let second = &atlas.injections[comp.second];
            let phi1 = base_map(&first.embedding).coord_exprs();
            let lifted = self.transitions[comp.second].compose(&phi1);
            let via = lifted.matmul(&self.transitions[comp.first]);
            let rho_t = &self.fiber_reps[second.dst].mats[comp.element];
            let base_domain = base_domain(&atlas.charts[first.src]);
            for x in base_domain.interior_samples(sample_seed(ctx, 0x21, c)) {
                let via_m = match via.eval(&x) {
                    Ok(m) => m,
                    Err(e) => {
                        report.boolean("cocycle", false, format!("composition {c}: {e}"));
                        return report;
                    }
                };
                let direct = match self.transitions[comp.composite].eval(&x) {
                    Ok(m) => rho_t.matmul(&m),
                    Err(e) => {
                        report.boolean("cocycle", false, format!("composition {c}: {e}"));
                        return report;
                    }
                };
                worst_cocycle = worst_cocycle.max(via_m.sub(&direct).norm_inf());
            }
        }
        report.numeric(
            "cocycle",
            worst_cocycle,
            TOL_SAMPLED,
            "transition compatibility over declared compositions",
        );

        if let Some(complex) = &self.complex {
            report.absorb("complex-structure", self.validate_complex(atlas, complex, ctx));
        }
        report
    }

    fn validate_transition(&self, atlas: &Atlas, k: usize, ctx: &CheckCtx) -> Report {
        let mut report = Report::new("transition");
        let inj = &atlas.injections[k];
        let t = &self.transitions[k];
        if t.rows != self.rank || t.cols != self.rank {
            report.boolean("shape", false, format!("transition is {}x{}, rank is {}", t.rows, t.cols, self.rank));
            return report;
        }
        let base_dim = base_map(&inj.embedding).src_dim();
        let max_var = t.entries().map(Expr::max_var).max().unwrap_or(0);
        if max_var as usize > base_dim {
            report.boolean(
                "shape",
                false,
                format!("transition uses x{max_var} but the base has dimension {base_dim}"),
            );
            return report;
        }

        let src_chart = &atlas.charts[inj.src];
        let dst_rep = &self.fiber_reps[inj.dst];
        let src_rep = &self.fiber_reps[inj.src];
        let samples = base_domain(src_chart).interior_samples(sample_seed(ctx, 0x22, k));

        let mut min_det = f64::INFINITY;
        let mut worst_orth = 0f64;
        let mut worst_equi = 0f64;
        for x in &samples {
            let g = match t.eval(x) {
                Ok(g) => g,
                Err(e) => {
                    report.boolean("evaluates", false, format!("at a sample point: {e}"));
                    return report;
                }
            };
            min_det = min_det.min(g.det().abs());
            if self.orthogonal {
                worst_orth = worst_orth.max(g.orthogonality_defect());
            }
            // Equivariance: t(gamma x) rho_src(gamma) = rho_dst(lambda gamma) t(x).
            // On total-space charts the group acts on more coordinates than
            // the transition reads; the base block is the leading one.
            for gi in 0..src_chart.group.order() {
                let gm = src_chart.group.matrix(gi);
                let moved = if gm.rows == x.len() {
                    gm.apply(x)
                } else {
                    let mut padded = x.clone();
                    padded.resize(gm.rows, 0.0);
                    gm.apply(&padded)[..x.len()].to_vec()
                };
                let lhs = match t.eval(&moved) {
                    Ok(m) => m.matmul(&src_rep.mats[gi]),
                    Err(e) => {
                        report.boolean("evaluates", false, format!("at a moved sample point: {e}"));
                        return report;
                    }
                };
                let rhs = dst_rep.mats[inj.hom.apply(gi)].matmul(&g);
                worst_equi = worst_equi.max(lhs.sub(&rhs).norm_inf());
            }
        }
        report.boolean(
            "invertible",
            min_det >= DET_MIN,
            format!("min |det| over samples = {min_det:.3e}"),
        );
        if self.orthogonal {
            report.numeric("orthogonal", worst_orth, TOL_SAMPLED, "claimed metric transitions");
        }
        report.numeric(
            "equivariance",
            worst_equi,
            TOL_SAMPLED,
            "max ||t(g x) rho(g) - rho(lambda g) t(x)||",
        );
        report
    }

    fn validate_complex(&self, atlas: &Atlas, complex: &[RMat], ctx: &CheckCtx) -> Report {
        let mut report = Report::new("complex");
        if complex.len() != atlas.charts.len() {
            report.boolean("shape", false, "one matrix per chart required");
            return report;
        }
        let mut worst_square = 0f64;
        let mut worst_orth = 0f64;
        let mut worst_commute = 0f64;
        for (i, j) in complex.iter().enumerate() {
            if j.rows != self.rank || j.cols != self.rank {
                report.boolean("shape", false, format!("chart {i}: J is {}x{}", j.rows, j.cols));
                return report;
            }
            let minus_id = RMat::identity(self.rank).scale(-1.0);
            worst_square = worst_square.max(j.matmul(j).sub(&minus_id).norm_inf());
            worst_orth = worst_orth.max(j.orthogonality_defect());
            for rho in &self.fiber_reps[i].mats {
                worst_commute = worst_commute.max(j.matmul(rho).sub(&rho.matmul(j)).norm_inf());
            }
        }
        report.numeric("squares-to-minus-one", worst_square, TOL_MATRIX, "");
        report.numeric("orthogonal", worst_orth, TOL_MATRIX, "");
        report.numeric("commutes-with-action", worst_commute, TOL_MATRIX, "");

        let mut worst_transition = 0f64;
        for (k, inj) in atlas.injections.iter().enumerate() {
            let t = &self.transitions[k];
            let (j_src, j_dst) = (&complex[inj.src], &complex[inj.dst]);
            for x in base_domain(&atlas.charts[inj.src]).interior_samples(sample_seed(ctx, 0x23, k)) {
                match t.eval(&x) {
                    Ok(g) => {
                        let defect = g.matmul(j_src).sub(&j_dst.matmul(&g)).norm_inf();
                        worst_transition = worst_transition.max(defect);
                    }
                    Err(e) => {
                        report.boolean("commutes-with-transitions", false, format!("{e}"));
                        return report;
                    }
                }
            }
        }
        report.numeric(
            "commutes-with-transitions",
            worst_transition,
            TOL_SAMPLED,
            "t(x) J_src = J_dst t(x)",
        );
        report
    }

    /// Chart-by-chart kernels and the good/bad verdict. Exact: kernels are
    /// matrix-equality tests against the identity at working precision.
    pub fn classify(&self, atlas: &Atlas) -> Classification {
        let base_kernels = atlas.base_kernels();
        let charts = atlas
            .charts
            .iter()
            .enumerate()
            .map(|(i, chart)| {
                let fiber_kernel = self.fiber_reps[i].kernel(&chart.group);
                let full: Vec<usize> = base_kernels[i]
                    .iter()
                    .copied()
                    .filter(|g| fiber_kernel.contains(g))
                    .collect();
                ChartKernels {
                    chart: chart.name.clone(),
                    base_kernel: base_kernels[i].clone(),
                    full_kernel: full,
                }
            })
            .collect::<Vec<_>>();
        let good = charts.iter().all(|c| c.full_kernel.len() == c.base_kernel.len());
        Classification { good, charts }
    }

    /// The total space: fibers clipped to the unit box, chart groups acting
    /// block-diagonally (base action plus fiber action, same multiplication
    /// table), injections extended by the fiber transitions.
    pub fn total_space(&self, atlas: &Atlas) -> Atlas {
        let charts = atlas
            .charts
            .iter()
            .enumerate()
            .map(|(i, chart)| {
                let n = chart.group.order();
                let table: Vec<Vec<usize>> =
                    (0..n).map(|a| (0..n).map(|b| chart.group.mul(a, b)).collect()).collect();
                let mats: Vec<RMat> = (0..n)
                    .map(|g| block_diag(chart.group.matrix(g), &self.fiber_reps[i].mats[g]))
                    .collect();
                Chart {
                    name: format!("{}-total", chart.name),
                    domain: chart.domain.fibered(self.rank),
                    group: group_from_table(mats, table),
                }
            })
            .collect();
        let injections = atlas
            .injections
            .iter()
            .enumerate()
            .map(|(k, inj)| Injection {
                name: format!("{}-total", inj.name),
                src: inj.src,
                dst: inj.dst,
                embedding: Embedding::Bundle {
                    base: base_map(&inj.embedding).clone(),
                    fiber: self.transitions[k].clone(),
                },
                hom: inj.hom.clone(),
            })
            .collect();
        Atlas {
            name: format!("{}-total", atlas.name),
            charts,
            injections,
            compositions: atlas.compositions.clone(),
        }
    }

    /// The vertical bundle of the total space: same rank, fiber action and
    /// transitions reread over the bigger charts (they depend only on base
    /// coordinates, which keep their variable indices).
    pub fn vertical_bundle(&self) -> Bundle {
        Bundle {
            rank: self.rank,
            fiber_reps: self.fiber_reps.clone(),
            transitions: self.transitions.clone(),
            orthogonal: self.orthogonal,
            complex: self.complex.clone(),
        }
    }

    /// Certificate that restricting the vertical bundle of the total space
    /// to the zero section recovers this bundle: the fiber actions agree
    /// exactly and the transitions agree after substituting zero fiber
    /// coordinates, to within [`TOL_RESTRICTION`].
    pub fn restriction_certificate(&self, atlas: &Atlas, ctx: &CheckCtx) -> Report {
        let mut report = Report::new("zero-section restriction");
        let vertical = self.vertical_bundle();
        let mut worst_rep = 0f64;
        for (i, rep) in self.fiber_reps.iter().enumerate() {
            for (a, b) in rep.mats.iter().zip(&vertical.fiber_reps[i].mats) {
                worst_rep = worst_rep.max(a.sub(b).norm_inf());
            }
        }
        report.numeric("fiber-actions-agree", worst_rep, TOL_RESTRICTION, "");

        // Zero-section inclusion: x -> (x, 0). Vertical transitions pulled
        // back along it must match the original transitions pointwise.
        let mut worst = 0f64;
        for (k, inj) in atlas.injections.iter().enumerate() {
            let n = base_map(&inj.embedding).src_dim();
            let mut include: Vec<Expr> = (1..=n as u32).map(Expr::var).collect();
            include.extend(std::iter::repeat_with(Expr::zero).take(self.rank));
            let restricted = vertical.transitions[k].compose(&include);
            let diff_domain = base_domain(&atlas.charts[inj.src]);
            for x in diff_domain.interior_samples(sample_seed(ctx, 0x24, k)) {
                let a = match restricted.eval(&x) {
                    Ok(m) => m,
                    Err(e) => {
                        report.boolean("transitions-agree", false, format!("{e}"));
                        return report;
                    }
                };
                let b = match self.transitions[k].eval(&x) {
                    Ok(m) => m,
                    Err(e) => {
                        report.boolean("transitions-agree", false, format!("{e}"));
                        return report;
                    }
                };
                worst = worst.max(a.sub(&b).norm_inf());
            }
        }
        report.numeric("transitions-agree", worst, TOL_RESTRICTION, "vertical transitions at v = 0");
        report
    }
}

/// The base (affine) part of an embedding.
pub fn base_map(e: &Embedding) -> &crate::atlas::AffineMap {
    match e {
        Embedding::Affine(a) => a,
        Embedding::Bundle { base, .. } => base,
    }
}

/// The base factor of a chart's domain (the chart itself for plain charts,
/// the base factor for total-space charts).
pub fn base_domain(chart: &Chart) -> Domain {
    match &chart.domain {
        Domain::Fibered { base, .. } => (**base).clone(),
        d => d.clone(),
    }
}

fn block_diag(a: &RMat, b: &RMat) -> RMat {
    let n = a.rows;
    let k = b.rows;
    RMat::from_fn(n + k, n + k, |i, j| {
        if i < n && j < n {
            a[(i, j)]
        } else if i >= n && j >= n {
            b[(i - n, j - n)]
        } else {
            0.0
        }
    })
}

/// A candidate global section: one fiber-valued expression vector per chart,
/// in that chart's base coordinates.
#[derive(Debug, Clone)]
pub struct Section {
    pub per_chart: Vec<Vec<Expr>>,
}

impl Section {
    pub fn constant(atlas: &Atlas, value: &[f64]) -> Section {
        Section {
            per_chart: atlas
                .charts
                .iter()
                .map(|_| value.iter().map(|&v| Expr::float(v)).collect())
                .collect(),
        }
    }

    pub fn validate(&self, atlas: &Atlas, bundle: &Bundle, ctx: &CheckCtx) -> Report {
        let mut report = Report::new("section");
        if self.per_chart.len() != atlas.charts.len()
            || self.per_chart.iter().any(|s| s.len() != bundle.rank)
        {
            report.boolean("shape", false, "one rank-sized expression vector per chart required");
            return report;
        }
        let mut worst_equi = 0f64;
        for (i, chart) in atlas.charts.iter().enumerate() {
            // Sample the full chart (fiber coordinates included on total
            // spaces); section expressions read only the base prefix.
            for x in chart.domain.interior_samples(sample_seed(ctx, 0x31, i)) {
                let here = match eval_vec(&self.per_chart[i], &x) {
                    Ok(v) => v,
                    Err(e) => {
                        report.boolean("equivariance", false, format!("chart {i}: {e}"));
                        return report;
                    }
                };
                for g in 0..chart.group.order() {
                    let moved = chart.group.matrix(g).apply(&x);
                    let lhs = match eval_vec(&self.per_chart[i], &moved) {
                        Ok(v) => v,
                        Err(e) => {
                            report.boolean("equivariance", false, format!("chart {i}: {e}"));
                            return report;
                        }
                    };
                    let rhs = bundle.fiber_reps[i].mats[g].apply(&here);
                    let diff =
                        lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    worst_equi = worst_equi.max(diff);
                }
            }
        }
        report.numeric("equivariance", worst_equi, TOL_SAMPLED, "s(g x) = rho(g) s(x)");

        let mut worst_compat = 0f64;
        for (k, inj) in atlas.injections.iter().enumerate() {
            let phi = base_map(&inj.embedding);
            let composed: Vec<Expr> = self.per_chart[inj.dst]
                .iter()
                .map(|e| e.compose(&phi.coord_exprs()))
                .collect();
            for x in base_domain(&atlas.charts[inj.src]).interior_samples(sample_seed(ctx, 0x32, k)) {
                let lhs = match eval_vec(&composed, &x) {
                    Ok(v) => v,
                    Err(e) => {
                        report.boolean("compatibility", false, format!("injection {k}: {e}"));
                        return report;
                    }
                };
                let rhs = match bundle.transitions[k].eval(&x) {
                    Ok(g) => match eval_vec(&self.per_chart[inj.src], &x) {
                        Ok(v) => g.apply(&v),
                        Err(e) => {
                            report.boolean("compatibility", false, format!("injection {k}: {e}"));
                            return report;
                        }
                    },
                    Err(e) => {
                        report.boolean("compatibility", false, format!("injection {k}: {e}"));
                        return report;
                    }
                };
                let diff = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst_compat = worst_compat.max(diff);
            }
        }
        report.numeric(
            "compatibility",
            worst_compat,
            TOL_SAMPLED,
            "s_dst(phi(x)) = t(x) s_src(x)",
        );
        report
    }

    /// Smallest sampled fiber norm over all charts; a value below
    /// [`NONVANISHING_MIN`] disqualifies the section as an obstruction
    /// witness.
    pub fn min_norm(&self, atlas: &Atlas, ctx: &CheckCtx) -> Result<f64, crate::expr::EvalError> {
        let mut min = f64::INFINITY;
        for (i, chart) in atlas.charts.iter().enumerate() {
            let mut pts = base_domain(chart).interior_samples(sample_seed(ctx, 0x33, i));
            pts.push(base_domain(chart).center());
            for x in pts {
                let v = eval_vec(&self.per_chart[i], &x)?;
                min = min.min(crate::linalg::norm(&v));
            }
        }
        Ok(min)
    }

    pub fn is_nonvanishing(&self, atlas: &Atlas, ctx: &CheckCtx) -> bool {
        self.min_norm(atlas, ctx).map(|m| m >= NONVANISHING_MIN).unwrap_or(false)
    }

    /// Project onto equivariant sections by group averaging:
    /// `(1/|G|) sum_g rho(g)^-1 s(g x)` chart by chart. Equivariant input is
    /// fixed; for a fiber action with no invariant vectors this collapses
    /// candidates toward zero.
    pub fn symmetrize(&self, atlas: &Atlas, bundle: &Bundle) -> Section {
        let per_chart = atlas
            .charts
            .iter()
            .enumerate()
            .map(|(i, chart)| {
                let order = chart.group.order();
                let n = base_map_dim_for_chart(chart);
                let mut acc: Vec<Expr> = vec![Expr::zero(); bundle.rank];
                for g in 0..order {
                    let gm = chart.group.matrix(g);
                    // Base block of the action as coordinate expressions.
                    let moved: Vec<Expr> = (0..n)
                        .map(|r| {
                            Expr::sum((0..n).map(|c| {
                                Expr::mul(Expr::float(gm[(r, c)]), Expr::var(c as u32 + 1))
                            }))
                        })
                        .collect();
                    let s_moved: Vec<Expr> =
                        self.per_chart[i].iter().map(|e| e.compose(&moved)).collect();
                    let rho_inv = &bundle.fiber_reps[i].mats[chart.group.inverse(g)];
                    for r in 0..bundle.rank {
                        let row = Expr::sum((0..bundle.rank).map(|c| {
                            Expr::mul(Expr::float(rho_inv[(r, c)]), s_moved[c].clone())
                        }));
                        acc[r] = Expr::add(acc[r].clone(), row);
                    }
                }
                let scale = Expr::rational(1, order as i64);
                acc.into_iter().map(|e| Expr::mul(scale.clone(), e)).collect()
            })
            .collect();
        Section { per_chart }
    }
}

fn base_map_dim_for_chart(chart: &Chart) -> usize {
    match &chart.domain {
        Domain::Fibered { base, .. } => base.dim(),
        d => d.dim(),
    }
}

fn eval_vec(exprs: &[Expr], x: &[f64]) -> Result<Vec<f64>, crate::expr::EvalError> {
    exprs.iter().map(|e| e.eval(x)).collect()
}

/// Single-chart structure: a disk whose cyclic group fixes the base
/// pointwise but rotates the rank-2 fiber. The minimal bad bundle, reused
/// as a specimen across test modules.
#[cfg(test)]
pub(crate) fn phantom_rotation_bundle() -> (Atlas, Bundle) {
    use crate::groups::{cyclic_rotations2, cyclic_trivial_action};
    let chart = Chart {
        name: "disk".into(),
        domain: Domain::Ball { dim: 2 },
        group: cyclic_trivial_action(3, 2),
    };
    let atlas = Atlas {
        name: "phantom".into(),
        charts: vec![chart],
        injections: vec![],
        compositions: vec![],
    };
    let bundle = Bundle {
        rank: 2,
        fiber_reps: vec![Representation { mats: cyclic_rotations2(3) }],
        transitions: vec![],
        orthogonal: true,
        complex: Some(vec![crate::groups::rotation2(std::f64::consts::FRAC_PI_2)]),
    };
    (atlas, bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::AffineMap;
    use crate::groups::{trivial_group, Hom};

    #[test]
    fn product_bundles_are_good() {
        let chart = Chart {
            name: "disk".into(),
            domain: Domain::Ball { dim: 2 },
            group: trivial_group(2),
        };
        let atlas =
            Atlas { name: "plain".into(), charts: vec![chart], injections: vec![], compositions: vec![] };
        let bundle = Bundle::product(&atlas, 2);
        assert!(bundle.validate(&atlas, &CheckCtx::default()).passed());
        assert!(bundle.classify(&atlas).good);
    }

    #[test]
    fn phantom_fiber_rotation_is_bad() {
        let (atlas, bundle) = phantom_rotation_bundle();
        let report = bundle.validate(&atlas, &CheckCtx::default());
        assert!(report.passed(), "{report}");
        let class = bundle.classify(&atlas);
        assert!(!class.good);
        assert_eq!(class.charts[0].base_kernel, vec![0, 1, 2]);
        assert_eq!(class.charts[0].full_kernel, vec![0]);
    }

    #[test]
    fn vertical_bundle_of_a_bad_bundle_is_good() {
        let (atlas, bundle) = phantom_rotation_bundle();
        let total = bundle.total_space(&atlas);
        assert_eq!(total.charts[0].domain.dim(), 4);
        assert!(total.validate(&CheckCtx::default()).passed());
        let vertical = bundle.vertical_bundle();
        assert!(vertical.validate(&total, &CheckCtx::default()).passed());
        let class = vertical.classify(&total);
        assert!(class.good, "the vertical bundle must always be good");
        // On the total space, base and full kernels agree (and are trivial
        // here because the fiber action is faithful).
        assert_eq!(class.charts[0].base_kernel, vec![0]);
    }

    #[test]
    fn zero_section_restriction_recovers_the_bundle() {
        let (atlas, bundle) = phantom_rotation_bundle();
        let report = bundle.restriction_certificate(&atlas, &CheckCtx::default());
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn transition_equivariance_is_checked() {
        // Two charts carrying the antipodal action; fiber reps differ
        // (trivial vs. sign), so an identity transition cannot be
        // equivariant.
        let z2 = crate::groups::group_from_matrices(vec![
            RMat::identity(1),
            RMat::identity(1).scale(-1.0),
        ]);
        let charts = vec![
            Chart {
                name: "a".into(),
                domain: Domain::Box { bounds: crate::atlas::unit_box_bounds(1) },
                group: z2.clone(),
            },
            Chart {
                name: "b".into(),
                domain: Domain::Box { bounds: crate::atlas::unit_box_bounds(1) },
                group: z2,
            },
        ];
        let inj = Injection {
            name: "i".into(),
            src: 0,
            dst: 1,
            embedding: Embedding::Affine(AffineMap::identity(1)),
            hom: Hom { map: vec![0, 1] },
        };
        let atlas = Atlas { name: "pair".into(), charts, injections: vec![inj], compositions: vec![] };
        let bundle = Bundle {
            rank: 1,
            fiber_reps: vec![
                Representation { mats: vec![RMat::identity(1); 2] },
                Representation { mats: vec![RMat::identity(1), RMat::identity(1).scale(-1.0)] },
            ],
            transitions: vec![ExprMatrix::identity(1)],
            orthogonal: true,
            complex: None,
        };
        let report = bundle.validate(&atlas, &CheckCtx::default());
        assert!(
            report.failures().any(|c| c.name.contains("equivariance")),
            "{report}"
        );
    }

    #[test]
    fn degenerate_transitions_are_rejected() {
        let charts = vec![
            Chart {
                name: "a".into(),
                domain: Domain::Box { bounds: crate::atlas::unit_box_bounds(1) },
                group: trivial_group(1),
            },
            Chart {
                name: "b".into(),
                domain: Domain::Box { bounds: crate::atlas::unit_box_bounds(1) },
                group: trivial_group(1),
            },
        ];
        let inj = Injection {
            name: "i".into(),
            src: 0,
            dst: 1,
            embedding: Embedding::Affine(AffineMap::identity(1)),
            hom: Hom { map: vec![0] },
        };
        let atlas = Atlas { name: "pair".into(), charts, injections: vec![inj], compositions: vec![] };
        let mut bundle = Bundle::product(&atlas, 2);
        bundle.orthogonal = false;
        // A rank-dropping matrix: det = 0 identically, caught at every sample.
        bundle.transitions[0] = ExprMatrix::from_rows(vec![
            vec![Expr::one(), Expr::one()],
            vec![Expr::one(), Expr::one()],
        ]);
        let report = bundle.validate(&atlas, &CheckCtx::default());
        assert!(report.failures().any(|c| c.name.contains("invertible")), "{report}");
    }

    #[test]
    fn sections_validate_and_symmetrize() {
        let (atlas, bundle) = phantom_rotation_bundle();
        // A constant nonzero section cannot be equivariant for a fixed-point
        // free fiber rotation.
        let s = Section::constant(&atlas, &[1.0, 0.0]);
        let report = s.validate(&atlas, &bundle, &CheckCtx::default());
        assert!(report.failures().any(|c| c.name == "equivariance"));
        // Averaging projects onto equivariant sections; the rotation action
        // has no nonzero invariants, so the average vanishes.
        let avg = s.symmetrize(&atlas, &bundle);
        let report = avg.validate(&atlas, &bundle, &CheckCtx::default());
        assert!(report.passed(), "{report}");
        assert!(!avg.is_nonvanishing(&atlas, &CheckCtx::default()));
        let norm = avg.min_norm(&atlas, &CheckCtx::default()).unwrap();
        assert!(norm <= 1e-12, "averaged section should vanish, norm {norm}");
    }

    #[test]
    fn nonvanishing_sections_are_recognized() {
        let chart = Chart {
            name: "disk".into(),
            domain: Domain::Ball { dim: 2 },
            group: trivial_group(2),
        };
        let atlas =
            Atlas { name: "plain".into(), charts: vec![chart], injections: vec![], compositions: vec![] };
        let bundle = Bundle::product(&atlas, 2);
        let s = Section::constant(&atlas, &[0.0, 2.5]);
        assert!(s.validate(&atlas, &bundle, &CheckCtx::default()).passed());
        assert!(s.is_nonvanishing(&atlas, &CheckCtx::default()));
    }

    #[test]
    fn complex_structure_checks() {
        let (atlas, mut bundle) = phantom_rotation_bundle();
        // The standard rotation J commutes with the fiber rotations: passes.
        let report = bundle.validate(&atlas, &CheckCtx::default());
        assert!(report.passed(), "{report}");
        // A reflection does not square to -I: fails.
        bundle.complex = Some(vec![RMat::from_rows(vec![vec![1.0, 0.0], vec![0.0, -1.0]])]);
        let report = bundle.validate(&atlas, &CheckCtx::default());
        assert!(report.failures().any(|c| c.name.contains("squares-to-minus-one")), "{report}");
    }
}
