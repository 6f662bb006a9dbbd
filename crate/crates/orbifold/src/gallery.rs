//! Built-in example models, generated on demand.
//!
//! The gallery serves two audiences. Named examples ([`by_name`], [`NAMES`])
//! are the reference geometries the CLI ships: spheres in polar slice
//! coordinates, teardrops with a cone chart, a flat torus. Seeded generators
//! ([`random_bundle`], [`random_bad_with_section`], [`candidate_sections`])
//! produce small randomized inputs for stress tests; the same seed always
//! yields the same model, so failures reproduce.
//!
//! # Coordinate conventions
//!
//! Curved surfaces of revolution are presented in geodesic polar coordinates
//! `(x1, x2) = (r, theta)` on box charts, with the metric `dr^2 + f(r)^2
//! dtheta^2` encoded through its compatible metric connection `omega_01 =
//! -f'(r) dtheta`. Chart injections are affine with orthogonal linear part,
//! so all gluing happens either between polar boxes related by `r -> pi - r`,
//! `theta -> 2 pi - theta` (the two-cap sphere) or through regions where the
//! surface is exactly flat (the teardrop's cone collar). Profile functions
//! blend between regimes through a degree-nine smoothstep whose plateaus are
//! exact in floating point, so "exactly flat" means exactly, not
//! approximately.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::atlas::{
    AffineMap, Atlas, Chart, Domain, Embedding, Injection, PartitionOfUnity,
};
use crate::bundles::{Bundle, Section};
use crate::chernweil::Connection;
use crate::doc::Model;
use crate::expr::{Expr, ExprMatrix, FormExpr, MatrixForm, Scalar};
use crate::groups::{
    cyclic_rotations2, cyclic_trivial_action, group_from_matrices, rotation2, trivial_group,
    FiniteGroup, Hom, Representation,
};
use crate::linalg::RMat;
use crate::sectors::ComplexStructure;

/// Names accepted by [`by_name`], in presentation order.
pub const NAMES: [&str; 7] =
    ["s2-tangent", "s2-trivial", "s2-z3-bad", "teardrop-2", "teardrop-3", "teardrop-7", "flat-torus"];

/// Build a named gallery model. `teardrop-<p>` is accepted for any cone
/// order `2 <= p <= 12`, not just the three listed in [`NAMES`].
pub fn by_name(name: &str) -> Option<Model> {
    match name {
        "s2-tangent" => Some(s2_tangent()),
        "s2-trivial" => Some(s2_trivial()),
        "s2-z3-bad" => Some(s2_z3_bad()),
        "flat-torus" => Some(flat_torus()),
        _ => {
            let p: i64 = name.strip_prefix("teardrop-")?.parse().ok()?;
            (2..=12).contains(&p).then(|| teardrop(p))
        }
    }
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

/// `max(x, 0)` as an expression whose derivative stays finite: `(x +
/// sqrt(x^2)) / 2`. The square root's derivative blows up only at `x = 0`
/// exactly, which sampled checks never hit.
fn positive_part(x: Expr) -> Expr {
    Expr::mul(
        Expr::rational(1, 2),
        Expr::add(x.clone(), Expr::sqrt(Expr::mul(x.clone(), x))),
    )
}

/// Monotone `C^4` ramp: exactly 0 for `t <= 0`, exactly 1 for `t >= 1`,
/// polynomial in between. Built as the degree-nine smoothstep of the clamp
/// `max(t, 0) - max(t - 1, 0)`; the first four derivatives vanish at both
/// ends, which keeps Gauss-Legendre quadrature of anything built from it
/// converging fast, and the plateaus are exact in floating point so values
/// declared constant outside the transition window really are.
pub fn ramp(t: Expr) -> Expr {
    let c = Expr::sub(positive_part(t.clone()), positive_part(Expr::sub(t, Expr::one())));
    let term = |k: i64, n: i32| Expr::mul(Expr::int(k), Expr::pow(c.clone(), n));
    Expr::sum([term(126, 5), term(-420, 6), term(540, 7), term(-315, 8), term(70, 9)])
}

/// Skew `so(2)`-valued matrix of one-forms on a `dim`-dimensional chart with
/// the given upper-right entry.
fn skew2(dim: usize, upper: FormExpr) -> MatrixForm {
    MatrixForm::from_fn(2, dim, 1, |i, j| match (i, j) {
        (0, 1) => upper.clone(),
        (1, 0) => upper.map_coeffs(|c| Expr::neg(c.clone())),
        _ => FormExpr::zero(dim, 1),
    })
}

/// `-g(x1) dx2` on a polar chart: the metric connection of `dr^2 + f^2
/// dtheta^2` has `omega_01 = -f'(r) dtheta`, so `g` is the profile slope.
fn polar_connection_form(slope: Expr) -> MatrixForm {
    skew2(2, FormExpr::one_form(2, &[Expr::zero(), Expr::neg(slope)]))
}

/// Constant rotation by `pi/2` on each fiber: the standard compatible
/// complex structure for rank-two bundles whose actions and transitions are
/// themselves rotations (or `+-1` blocks).
fn standard_fiber_complex(charts: usize) -> Option<Vec<RMat>> {
    Some(vec![rotation2(FRAC_PI_2); charts])
}

// ---------------------------------------------------------------------------
// Spheres
// ---------------------------------------------------------------------------

/// Width of the cap-weight transition window; `1/width` must be exactly
/// representable so the partition's complement identity cancels cleanly.
const SPHERE_WINDOW: f64 = 0.64;

/// The round two-sphere as two polar caps plus a zero-weight connector band.
///
/// Chart 0 covers distance-from-north-pole `r in (0, 1.9)`, chart 1 the same
/// from the south pole, and chart 2 is a band `r in (1.27, 1.88)` whose two
/// injections realize the cap overlap: into the north cap by the identity
/// and into the south cap by `(r, theta) -> (pi - r, 2 pi - theta)`. Every
/// chart group is supplied by `group`, with `lambda` the injection
/// homomorphism (identity on the element indices in all gallery uses).
fn sphere_atlas(name: &str, group: &dyn Fn() -> FiniteGroup, lambda: &[usize]) -> Atlas {
    let theta_max = BigRational::from_float(TAU).expect("tau is finite");
    let cap = Domain::Box { bounds: vec![(rat(0, 1), rat(19, 10)), (rat(0, 1), theta_max.clone())] };
    let band = Domain::Box { bounds: vec![(rat(127, 100), rat(47, 25)), (rat(0, 1), theta_max)] };
    let charts = vec![
        Chart { name: "north".into(), domain: cap.clone(), group: group() },
        Chart { name: "south".into(), domain: cap, group: group() },
        Chart { name: "band".into(), domain: band, group: group() },
    ];
    let antipodal = AffineMap {
        mat: vec![
            vec![Scalar::from_int(-1), Scalar::from_int(0)],
            vec![Scalar::from_int(0), Scalar::from_int(-1)],
        ],
        trans: vec![Scalar::Float(PI), Scalar::Float(TAU)],
    };
    let injections = vec![
        Injection {
            name: "band-north".into(),
            src: 2,
            dst: 0,
            embedding: Embedding::Affine(AffineMap::identity(2)),
            hom: Hom { map: lambda.to_vec() },
        },
        Injection {
            name: "band-south".into(),
            src: 2,
            dst: 1,
            embedding: Embedding::Affine(antipodal),
            hom: Hom { map: lambda.to_vec() },
        },
    ];
    Atlas { name: name.into(), charts, injections, compositions: Vec::new() }
}

/// The sphere's metric connection, `omega_01 = -cos(r) dtheta`, written in
/// each chart's own polar coordinates (both caps measure `r` from their own
/// pole, and the band inherits the north cap's coordinates).
fn sphere_connection(metric: bool) -> Connection {
    let slope = Expr::cos(Expr::var(1));
    Connection {
        omega: vec![
            polar_connection_form(slope.clone()),
            polar_connection_form(slope.clone()),
            polar_connection_form(slope),
        ],
        metric,
    }
}

/// Cap weights `1 - ramp((r - a) / w)` with the window centered so that the
/// two caps' weights sum to exactly one across the overlap (`a = (pi - w) /
/// 2` makes the ramp arguments at `r` and `pi - r` sum to one); the band
/// carries weight zero. The complement identity of [`ramp`] then certifies
/// the declared overlap to machine precision.
fn sphere_partition() -> PartitionOfUnity {
    let a = (PI - SPHERE_WINDOW) / 2.0;
    let arg = Expr::mul(
        Expr::sub(Expr::var(1), Expr::float(a)),
        Expr::rational(25, 16), // 1 / SPHERE_WINDOW, exactly
    );
    let cap = Expr::sub(Expr::one(), ramp(arg));
    PartitionOfUnity { weights: vec![cap.clone(), cap, Expr::zero()], overlaps: vec![vec![0, 1]] }
}

/// The tangent bundle of the round sphere. Transitions are `+I` into the
/// north cap and `-I` into the south cap (the differential of the antipodal
/// chart change), so the cocycle carries the sphere's actual topology, and
/// the connection integrates the Euler form to 2.
pub fn s2_tangent() -> Model {
    let atlas = sphere_atlas("s2-tangent", &|| trivial_group(2), &[0]);
    let bundle = Bundle {
        rank: 2,
        fiber_reps: vec![Representation { mats: vec![RMat::identity(2)] }; 3],
        transitions: vec![
            ExprMatrix::identity(2),
            ExprMatrix::from_fn(2, 2, |i, j| {
                if i == j { Expr::neg(Expr::one()) } else { Expr::zero() }
            }),
        ],
        orthogonal: true,
        complex: standard_fiber_complex(3),
    };
    let complex = ComplexStructure::standard(&atlas);
    Model {
        name: "s2-tangent".into(),
        atlas,
        bundle: Some(bundle),
        sections: Vec::new(),
        connection: Some(sphere_connection(true)),
        partition: Some(sphere_partition()),
        complex,
    }
}

/// The trivial rank-two bundle over the same sphere atlas: identity
/// transitions, flat connection, and a constant nonvanishing section. Its
/// Euler form vanishes identically, which is what lets the section exist.
pub fn s2_trivial() -> Model {
    let atlas = sphere_atlas("s2-trivial", &|| trivial_group(2), &[0]);
    let bundle = Bundle {
        rank: 2,
        fiber_reps: vec![Representation { mats: vec![RMat::identity(2)] }; 3],
        transitions: vec![ExprMatrix::identity(2), ExprMatrix::identity(2)],
        orthogonal: true,
        complex: standard_fiber_complex(3),
    };
    let connection = Connection::flat(&atlas, &bundle);
    let section = Section::constant(&atlas, &[1.0, 0.0]);
    let complex = ComplexStructure::standard(&atlas);
    Model {
        name: "s2-trivial".into(),
        atlas,
        bundle: Some(bundle),
        sections: vec![("constant".into(), section)],
        connection: Some(connection),
        partition: Some(sphere_partition()),
        complex,
    }
}

/// The sphere with a phantom `Z/3` action on every chart and a faithful
/// rotation action on the fibers: the standard bad bundle. The base quotient
/// is still the sphere (the action is trivial), but no fiber direction is
/// fixed, so the bundle admits no nonzero equivariant sections and is not
/// the pullback of anything over the quotient.
pub fn s2_z3_bad() -> Model {
    let atlas = sphere_atlas("s2-z3-bad", &|| cyclic_trivial_action(3, 2), &[0, 1, 2]);
    let bundle = Bundle {
        rank: 2,
        fiber_reps: vec![Representation { mats: cyclic_rotations2(3) }; 3],
        transitions: vec![
            ExprMatrix::identity(2),
            ExprMatrix::from_fn(2, 2, |i, j| {
                if i == j { Expr::neg(Expr::one()) } else { Expr::zero() }
            }),
        ],
        orthogonal: true,
        complex: standard_fiber_complex(3),
    };
    let complex = ComplexStructure::standard(&atlas);
    Model {
        name: "s2-z3-bad".into(),
        atlas,
        bundle: Some(bundle),
        sections: Vec::new(),
        connection: Some(sphere_connection(true)),
        partition: Some(sphere_partition()),
        complex,
    }
}

// ---------------------------------------------------------------------------
// Teardrops
// ---------------------------------------------------------------------------

/// The teardrop orbifold with cone order `p`, plus a bad rank-two bundle on
/// it (the fiber action at the cone chart is the faithful `Z/p` rotation,
/// but the vertical cone angle is `2 pi / p`, so only `v = 0` is fixed).
///
/// Geometry: a surface of revolution with profile slope `f'(r) = cos(r) +
/// (-1/p - cos(r)) ramp(r / 1.5)` in geodesic polar coordinates. Near the
/// smooth pole the surface is the round sphere; past `r = 1.5` the slope is
/// exactly `-1/p`, a flat cone of angle `2 pi / p`. The body chart covers
/// `r in (0, 2)`; the cone chart is a disk with the honest `Z/p` rotation
/// action whose quotient is that flat cone; a short bridge chart in the flat
/// collar joins them. The bridge-to-cone bundle transition `R(-theta/p)`
/// absorbs the angle change between polar and disk frames, which is exactly
/// what makes the flat disk connection compatible with the body's
/// `-f'(r) dtheta`.
///
/// Integrating the Euler form gives `1 + 1/p`: all curvature lives in the
/// body chart, where the integral telescopes to `f'(0) - f'(2) = 1 + 1/p`.
pub fn teardrop(p: i64) -> Model {
    assert!(p >= 2, "cone order must be at least 2");
    let theta_max = BigRational::from_float(TAU).expect("tau is finite");
    let body = Domain::Box { bounds: vec![(rat(0, 1), rat(2, 1)), (rat(0, 1), theta_max)] };
    let bridge = Domain::Box { bounds: vec![(rat(8, 5), rat(19, 10)), (rat(0, 1), rat(1, 2))] };
    let charts = vec![
        Chart { name: "body".into(), domain: body, group: trivial_group(2) },
        Chart {
            name: "cone".into(),
            domain: Domain::Ball { dim: 2 },
            group: group_from_matrices(cyclic_rotations2(p as usize)),
        },
        Chart { name: "bridge".into(), domain: bridge, group: trivial_group(2) },
    ];
    // The bridge sits in the flat collar; its image in the cone disk is a
    // small box at distance >= 0.35 from the cone point.
    let into_cone = AffineMap {
        mat: vec![
            vec![Scalar::from_int(1), Scalar::from_int(0)],
            vec![Scalar::from_int(0), Scalar::from_int(1)],
        ],
        trans: vec![Scalar::from_ratio(-5, 4), Scalar::from_ratio(-1, 4)],
    };
    let injections = vec![
        Injection {
            name: "bridge-body".into(),
            src: 2,
            dst: 0,
            embedding: Embedding::Affine(AffineMap::identity(2)),
            hom: Hom { map: vec![0] },
        },
        Injection {
            name: "bridge-cone".into(),
            src: 2,
            dst: 1,
            embedding: Embedding::Affine(into_cone),
            hom: Hom { map: vec![0] },
        },
    ];
    let atlas =
        Atlas { name: format!("teardrop-{p}"), charts, injections, compositions: Vec::new() };

    // Fiber transition into the cone chart: rotation by -theta/p, matching
    // the rate at which the disk's Cartesian frame turns against the body's
    // polar frame on the cone of angle 2 pi / p.
    let angle = Expr::mul(Expr::var(2), Expr::rational(1, p));
    let frame_turn = ExprMatrix::from_fn(2, 2, |i, j| match (i, j) {
        (0, 0) | (1, 1) => Expr::cos(angle.clone()),
        (0, 1) => Expr::sin(angle.clone()),
        _ => Expr::neg(Expr::sin(angle.clone())),
    });
    let bundle = Bundle {
        rank: 2,
        fiber_reps: vec![
            Representation { mats: vec![RMat::identity(2)] },
            Representation { mats: cyclic_rotations2(p as usize) },
            Representation { mats: vec![RMat::identity(2)] },
        ],
        transitions: vec![ExprMatrix::identity(2), frame_turn],
        orthogonal: true,
        complex: standard_fiber_complex(3),
    };

    let r = Expr::var(1);
    let blend = ramp(Expr::mul(r.clone(), Expr::rational(2, 3)));
    let slope = Expr::add(
        Expr::cos(r.clone()),
        Expr::mul(Expr::sub(Expr::rational(-1, p), Expr::cos(r)), blend),
    );
    let connection = Connection {
        omega: vec![
            polar_connection_form(slope),
            MatrixForm::zeros(2, 2, 1),
            // On the flat collar the slope is exactly -1/p.
            polar_connection_form(Expr::rational(-1, p)),
        ],
        metric: true,
    };

    // Body and cone weights are both 1: the cone chart's curvature is zero,
    // so the collar region they share contributes nothing twice. No overlap
    // is declared - the weights genuinely sum to 2 there, harmlessly.
    let partition =
        PartitionOfUnity { weights: vec![Expr::one(), Expr::one(), Expr::zero()], overlaps: vec![] };
    let complex = ComplexStructure::standard(&atlas);
    Model {
        name: format!("teardrop-{p}"),
        atlas,
        bundle: Some(bundle),
        sections: Vec::new(),
        connection: Some(connection),
        partition: Some(partition),
        complex,
    }
}

// ---------------------------------------------------------------------------
// Flat torus
// ---------------------------------------------------------------------------

/// The flat torus as a single unit-square chart with no injections, carrying
/// the trivial rank-two bundle, the flat connection, and a constant section.
pub fn flat_torus() -> Model {
    let atlas = Atlas {
        name: "flat-torus".into(),
        charts: vec![Chart {
            name: "square".into(),
            domain: Domain::Box { bounds: vec![(rat(0, 1), rat(1, 1)), (rat(0, 1), rat(1, 1))] },
            group: trivial_group(2),
        }],
        injections: Vec::new(),
        compositions: Vec::new(),
    };
    let mut bundle = Bundle::product(&atlas, 2);
    bundle.complex = standard_fiber_complex(1);
    let connection = Connection::flat(&atlas, &bundle);
    let section = Section::constant(&atlas, &[1.0, 0.0]);
    let complex = ComplexStructure::standard(&atlas);
    Model {
        name: "flat-torus".into(),
        atlas,
        bundle: Some(bundle),
        sections: vec![("constant".into(), section)],
        connection: Some(connection),
        partition: None,
        complex,
    }
}

// ---------------------------------------------------------------------------
// Randomized inputs
// ---------------------------------------------------------------------------

/// Embed the planar `Z/m` rotations into `dim` coordinates (identity on the
/// rest).
fn embedded_rotations(m: usize, dim: usize) -> Vec<RMat> {
    cyclic_rotations2(m)
        .into_iter()
        .map(|r| {
            RMat::from_fn(dim, dim, |i, j| {
                if i < 2 && j < 2 {
                    r[(i, j)]
                } else {
                    f64::from(i == j)
                }
            })
        })
        .collect()
}

/// A deterministic random single-chart bundle: ball base of dimension 1-3,
/// chart group of order at most 6 (trivial, phantom cyclic, planar rotation,
/// or reflection), and an orthogonal fiber action of rank 1-3 built from
/// powers of one generator. Distinct indices give distinct models; the same
/// index always gives the same model.
pub fn random_bundle(index: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0B0 + index);
    let rank: usize = rng.gen_range(1..=3);
    let kind = rng.gen_range(0..4u8);
    let (dim, group) = match kind {
        0 => {
            let dim = rng.gen_range(1..=3);
            (dim, trivial_group(dim))
        }
        1 => {
            let dim = rng.gen_range(1..=3);
            let m = rng.gen_range(2..=6);
            (dim, cyclic_trivial_action(m, dim))
        }
        2 => {
            let dim = rng.gen_range(2..=3);
            let m = rng.gen_range(2..=6);
            (dim, group_from_matrices(embedded_rotations(m, dim)))
        }
        _ => {
            let dim = rng.gen_range(1..=3);
            let mirror = RMat::from_fn(dim, dim, |i, j| {
                if i != j {
                    0.0
                } else if i == 0 {
                    -1.0
                } else {
                    1.0
                }
            });
            (dim, group_from_matrices(vec![RMat::identity(dim), mirror]))
        }
    };
    let m = group.order();
    // One orthogonal generator of order dividing m; its powers along the
    // cyclic structure give the fiber representation. All groups above are
    // cyclic, with element k equal to the generator's k-th power.
    let generator = match rank {
        1 => {
            let sign = if m % 2 == 0 && rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            RMat::from_rows(vec![vec![sign]])
        }
        2 => rotation2(TAU * rng.gen_range(0..m as u32) as f64 / m as f64),
        _ => {
            let r = rotation2(TAU * rng.gen_range(0..m as u32) as f64 / m as f64);
            let sign = if m % 2 == 0 && rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            RMat::from_fn(3, 3, |i, j| match (i, j) {
                (2, 2) => sign,
                (i, j) if i < 2 && j < 2 => r[(i, j)],
                _ => 0.0,
            })
        }
    };
    let rep = Representation { mats: (0..m).map(|k| generator.pow(k)).collect() };
    let atlas = Atlas {
        name: format!("random-{index}"),
        charts: vec![Chart { name: "chart".into(), domain: Domain::Ball { dim }, group }],
        injections: Vec::new(),
        compositions: Vec::new(),
    };
    let bundle = Bundle {
        rank,
        fiber_reps: vec![rep],
        transitions: Vec::new(),
        orthogonal: true,
        complex: None,
    };
    let connection = Connection::flat(&atlas, &bundle);
    Model {
        name: format!("random-{index}"),
        atlas,
        bundle: Some(bundle),
        sections: Vec::new(),
        connection: Some(connection),
        partition: None,
        complex: None,
    }
}

/// A randomized bad bundle that nevertheless carries a nonvanishing
/// equivariant section: phantom `Z/2` on a planar ball, fiber action
/// `diag(1, -1)`. The base kernel is the whole group, the full kernel is
/// trivial (bad), and constant sections along the fixed fiber axis survive
/// equivariance exactly. Only the section's length is randomized.
pub fn random_bad_with_section(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atlas = Atlas {
        name: format!("bad-sectioned-{seed}"),
        charts: vec![Chart {
            name: "chart".into(),
            domain: Domain::Ball { dim: 2 },
            group: cyclic_trivial_action(2, 2),
        }],
        injections: Vec::new(),
        compositions: Vec::new(),
    };
    let flip = RMat::from_rows(vec![vec![1.0, 0.0], vec![0.0, -1.0]]);
    let bundle = Bundle {
        rank: 2,
        fiber_reps: vec![Representation { mats: vec![RMat::identity(2), flip] }],
        transitions: Vec::new(),
        orthogonal: true,
        complex: None,
    };
    let connection = Connection::flat(&atlas, &bundle);
    let length = rng.gen_range(0.5..2.0);
    let section = Section::constant(&atlas, &[length, 0.0]);
    Model {
        name: format!("bad-sectioned-{seed}"),
        atlas,
        bundle: Some(bundle),
        sections: vec![("nonvanishing".into(), section)],
        connection: Some(connection),
        partition: None,
        complex: None,
    }
}

/// Candidate sections for exhausting a bundle's section test: the zero
/// section first, then `count - 1` random affine sections with small exact
/// rational coefficients (constant term always nonzero, so none of them is
/// secretly zero).
pub fn candidate_sections(
    atlas: &Atlas,
    rank: usize,
    count: usize,
    seed: u64,
) -> Vec<(String, Section)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeff = |rng: &mut ChaCha8Rng| {
        let n: i64 = rng.gen_range(1..=8);
        let sign = if rng.gen_bool(0.5) { 1 } else { -1 };
        Expr::rational(sign * n, 4)
    };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if i == 0 {
            let per_chart =
                atlas.charts.iter().map(|_| vec![Expr::zero(); rank]).collect();
            out.push(("zero".to_string(), Section { per_chart }));
            continue;
        }
        let per_chart = atlas
            .charts
            .iter()
            .map(|chart| {
                let dim = chart.domain.dim();
                (0..rank)
                    .map(|_| {
                        let mut e = coeff(&mut rng);
                        for v in 1..=dim {
                            if rng.gen_bool(0.5) {
                                e = Expr::add(
                                    e,
                                    Expr::mul(coeff(&mut rng), Expr::var(v as u32)),
                                );
                            }
                        }
                        e
                    })
                    .collect()
            })
            .collect();
        out.push((format!("candidate-{i}"), Section { per_chart }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sectors::sector_census;
    use crate::CheckCtx;

    fn assert_valid(model: &Model) {
        let ctx = CheckCtx::default();
        let report = model.atlas.validate(&ctx);
        assert!(report.passed(), "{} atlas: {report}", model.name);
        let bundle = model.bundle.as_ref().expect("gallery models carry bundles");
        let report = bundle.validate(&model.atlas, &ctx);
        assert!(report.passed(), "{} bundle: {report}", model.name);
        if let Some(conn) = &model.connection {
            let report = conn.validate(&model.atlas, bundle, &ctx);
            assert!(report.passed(), "{} connection: {report}", model.name);
        }
        if let Some(part) = &model.partition {
            let report = part.validate(&model.atlas, &ctx);
            assert!(report.passed(), "{} partition: {report}", model.name);
        }
        if let Some(complex) = &model.complex {
            let report = complex.validate(&model.atlas, &ctx);
            assert!(report.passed(), "{} complex structure: {report}", model.name);
        }
        for (name, section) in &model.sections {
            let report = section.validate(&model.atlas, bundle, &ctx);
            assert!(report.passed(), "{} section {name}: {report}", model.name);
        }
    }

    #[test]
    fn every_named_model_passes_validation() {
        for name in NAMES {
            let model = by_name(name).expect("gallery name");
            assert_eq!(model.name, name);
            assert_valid(&model);
        }
    }

    #[test]
    fn names_cover_exactly_the_gallery() {
        assert!(by_name("teardrop-5").is_some());
        assert!(by_name("teardrop-1").is_none());
        assert!(by_name("teardrop-13").is_none());
        assert!(by_name("klein-bottle").is_none());
    }

    #[test]
    fn ramp_plateaus_are_exact_and_complementary() {
        let r = ramp(Expr::var(1));
        for t in [-2.0, -0.5, 0.0] {
            assert_eq!(r.eval(&[t]).unwrap(), 0.0);
        }
        for t in [1.0, 1.5, 10.0] {
            assert!((r.eval(&[t]).unwrap() - 1.0).abs() < 1e-12);
        }
        for t in [0.1, 0.25, 0.5, 0.8] {
            let sum = r.eval(&[t]).unwrap() + r.eval(&[1.0 - t]).unwrap();
            assert!((sum - 1.0).abs() < 1e-13, "complement identity at {t}");
        }
        // The symbolic derivative must evaluate cleanly off the junctions:
        // curvature computations differentiate everything in sight.
        let dr = r.differentiate(1);
        for t in [-1.0, 0.3, 0.7, 2.0] {
            assert!(dr.eval(&[t]).unwrap().is_finite());
        }
    }

    #[test]
    fn random_bundles_validate_and_vary() {
        let ctx = CheckCtx::default();
        let mut good = 0;
        let mut bad = 0;
        for i in 0..25 {
            let model = random_bundle(i);
            let report = model.atlas.validate(&ctx);
            assert!(report.passed(), "random-{i} atlas: {report}");
            let bundle = model.bundle.as_ref().unwrap();
            let report = bundle.validate(&model.atlas, &ctx);
            assert!(report.passed(), "random-{i} bundle: {report}");
            if bundle.classify(&model.atlas).good {
                good += 1;
            } else {
                bad += 1;
            }
        }
        assert!(good > 0, "sample should contain good bundles");
        assert!(bad > 0, "sample should contain bad bundles");
    }

    #[test]
    fn the_bad_sectioned_bundle_is_bad_with_a_valid_section() {
        let ctx = CheckCtx::default();
        let model = random_bad_with_section(7);
        assert_valid(&model);
        let bundle = model.bundle.as_ref().unwrap();
        assert!(!bundle.classify(&model.atlas).good);
        let (_, section) = &model.sections[0];
        assert!(section.is_nonvanishing(&model.atlas, &ctx));
    }

    #[test]
    fn phantom_sphere_census_has_three_classes() {
        let model = s2_z3_bad();
        let census = sector_census(&model.atlas);
        assert_eq!(census.classes.len(), 3);
    }

    #[test]
    fn candidate_sections_start_from_zero_and_stay_distinct() {
        let model = s2_z3_bad();
        let candidates = candidate_sections(&model.atlas, 2, 20, 11);
        assert_eq!(candidates.len(), 20);
        assert_eq!(candidates[0].0, "zero");
        assert!(candidates[0].1.per_chart.iter().all(|c| c.iter().all(Expr::is_zero)));
        for (_, section) in &candidates[1..] {
            assert!(section.per_chart.iter().any(|c| c.iter().any(|e| !e.is_zero())));
        }
    }

    #[test]
    fn gallery_models_survive_document_round_trips() {
        for name in ["s2-tangent", "teardrop-3", "flat-torus"] {
            let model = by_name(name).unwrap();
            let doc = crate::doc::document(&model).expect("documentable");
            let json = crate::doc::to_json(&doc);
            let reparsed = crate::doc::from_json(&json).unwrap();
            let recompiled = crate::doc::compile(&reparsed).expect("recompilable");
            let ctx = CheckCtx::default();
            assert_eq!(
                model.atlas.validate(&ctx).to_string(),
                recompiled.atlas.validate(&ctx).to_string(),
                "{name}: validation must not change across a document round trip"
            );
            assert_valid(&recompiled);
        }
    }
}
