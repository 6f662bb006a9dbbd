//! Symbolic-numeric toolkit for orbifold vector bundles.
//!
//! The crate models orbifolds through atlases of linear finite-group charts,
//! vector bundles over them through equivariant transition cocycles, and
//! computes the classical invariants attached to that presentation: the
//! good/bad classification of a cocycle, the total-space and vertical-bundle
//! constructions, the twisted-sector census with degree-shifting numbers, and
//! Chern-Weil representatives (Euler, first Pontryagin, first Chern) together
//! with their orbifold-weighted integrals.
//!
//! Modules mirror the layers of that pipeline:
//!
//! * [`expr`] - a small expression language (exact rational constants,
//!   `sin`/`cos`/`exp`/`sqrt`, integer powers) with symbolic differentiation
//!   and an exterior-form algebra on top of it;
//! * [`groups`] - finite groups by multiplication table, orthogonal/unitary
//!   representations, conjugacy and fixed-space machinery;
//! * [`atlas`] - charts, equivariant injections, validation, and the local
//!   isotropy bookkeeping (base kernels, reducedness);
//! * [`bundles`] - transition cocycles, the good/bad verdict, total spaces,
//!   vertical bundles, and sections;
//! * [`sectors`] - the twisted-sector census, sector atlases, degree shifts,
//!   and the zero-section restriction map on classes;
//! * [`chernweil`] - connections, curvature, characteristic forms, quadrature,
//!   and the section-obstruction pipeline;
//! * [`doc`] - the JSON document format consumed by the CLI;
//! * [`gallery`] - built-in example inputs, generated on demand.

pub mod chernweil;
pub mod doc;
pub mod expr;
pub mod gallery;
pub mod groups;
pub mod linalg;
pub mod report;
pub mod sectors;

pub mod atlas;
pub mod bundles;

/// Absolute tolerance for algebraic identities of numeric matrices
/// (homomorphism property, orthogonality, unitarity).
pub const TOL_MATRIX: f64 = 1e-12;

/// Absolute tolerance for sampled geometric identities (equivariance,
/// cocycle law, composition tables).
pub const TOL_SAMPLED: f64 = 1e-10;

/// Absolute tolerance for sampled connection compatibility checks.
pub const TOL_CONNECTION: f64 = 1e-8;

/// Lower bound on `|det|` of a transition matrix before it is reported
/// as numerically singular.
pub const DET_MIN: f64 = 1e-8;

/// A section whose sampled minimum norm stays above this threshold is
/// accepted as nonvanishing.
pub const NONVANISHING_MIN: f64 = 1e-8;

/// Tolerance for the zero-section restriction certificate.
pub const TOL_RESTRICTION: f64 = 1e-12;

/// Tolerance for the root-of-unity consistency checks behind degree-shifting
/// numbers (order residual and multiplicity integrality).
pub const TOL_SHIFT: f64 = 1e-8;

/// Tolerance for differential identities of curvature data (the second
/// Bianchi identity, closedness of the Euler form) at sampled points.
pub const TOL_BIANCHI: f64 = 1e-9;

/// In an obstruction verdict, every representative form of the assembled
/// Euler class must stay below this bound at each quadrature node.
pub const TOL_OBSTRUCTION_NODE: f64 = 1e-10;

/// In an obstruction verdict, every sector integral of the assembled Euler
/// class must stay below this bound.
pub const TOL_OBSTRUCTION_INTEGRAL: f64 = 1e-8;

/// Shared context for operations that sample points or integrate:
/// a deterministic seed, the base quadrature order, and the convergence
/// tolerance for order-doubling checks.
#[derive(Debug, Clone, Copy)]
pub struct CheckCtx {
    pub seed: u64,
    pub quad_order: usize,
    pub quad_tol: f64,
}

impl Default for CheckCtx {
    fn default() -> Self {
        CheckCtx { seed: 0, quad_order: 48, quad_tol: 1e-6 }
    }
}

impl CheckCtx {
    pub fn with_seed(seed: u64) -> Self {
        CheckCtx { seed, ..Default::default() }
    }
}
