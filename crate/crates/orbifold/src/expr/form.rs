//! Differential forms with expression coefficients.
//!
//! A [`FormExpr`] is a degree-`k` form on an `n`-dimensional chart, stored as
//! a canonical sum of terms `f * dx_{i1} ^ ... ^ dx_{ik}` with strictly
//! increasing multi-indices, sorted and merged. Exterior algebra (wedge,
//! exterior derivative) is exact on the tree level; equality of forms is
//! established numerically by evaluating coefficients at sample points, since
//! the expression language deliberately has no general simplifier.
//!
//! The one pullback primitive [`FormExpr::pullback`] covers every change of
//! variables in the crate: chart injections, bundle embeddings, restriction
//! to a zero section (include with constant-zero fiber coordinates), and
//! deformation retractions.

use std::fmt;

use super::{EvalError, Expr};

/// A differential form in canonical multi-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct FormExpr {
    dim: usize,
    degree: usize,
    terms: Vec<(Expr, Vec<u32>)>,
}

/// Sort a multi-index, tracking the permutation sign; `None` when an index
/// repeats (the term vanishes).
fn sort_index(mut idx: Vec<u32>) -> Option<(bool, Vec<u32>)> {
    // Insertion sort: counts swaps exactly, and the index lists are tiny.
    let mut swaps = 0usize;
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && idx[j - 1] > idx[j] {
            idx.swap(j - 1, j);
            swaps += 1;
            j -= 1;
        }
    }
    if idx.windows(2).any(|w| w[0] == w[1]) {
        return None;
    }
    Some((swaps % 2 == 1, idx))
}

impl FormExpr {
    pub fn zero(dim: usize, degree: usize) -> Self {
        FormExpr { dim, degree, terms: Vec::new() }
    }

    /// A 0-form from a scalar expression.
    pub fn scalar(dim: usize, f: Expr) -> Self {
        FormExpr::from_terms(dim, 0, vec![(f, Vec::new())])
    }

    /// A single term `f * dx_{i1} ^ ... ^ dx_{ik}`; the index need not be
    /// sorted (the sign is absorbed into the coefficient).
    pub fn monomial(dim: usize, f: Expr, index: Vec<u32>) -> Self {
        let degree = index.len();
        FormExpr::from_terms(dim, degree, vec![(f, index)])
    }

    /// The coordinate 1-form `dx_i` (`i` is 1-based).
    pub fn coordinate(dim: usize, i: u32) -> Self {
        assert!(i >= 1 && (i as usize) <= dim, "coordinate index out of range");
        FormExpr::monomial(dim, Expr::one(), vec![i])
    }

    /// A 1-form from its coefficient vector: `sum_i coeffs[i] dx_{i+1}`.
    pub fn one_form(dim: usize, coeffs: &[Expr]) -> Self {
        assert_eq!(coeffs.len(), dim, "need one coefficient per coordinate");
        let terms = coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), vec![i as u32 + 1]))
            .collect();
        FormExpr::from_terms(dim, 1, terms)
    }

    /// Canonicalize: sort each index (sign into coefficient), drop repeats,
    /// sort terms by index, merge duplicates, drop structural zeros.
    fn from_terms(dim: usize, degree: usize, raw: Vec<(Expr, Vec<u32>)>) -> Self {
        let mut cooked: Vec<(Expr, Vec<u32>)> = Vec::with_capacity(raw.len());
        for (coeff, idx) in raw {
            assert_eq!(idx.len(), degree, "term degree mismatch");
            debug_assert!(idx.iter().all(|&i| i >= 1 && (i as usize) <= dim));
            if coeff.is_zero() {
                continue;
            }
            let Some((flip, idx)) = sort_index(idx) else { continue };
            let coeff = if flip { Expr::neg(coeff) } else { coeff };
            cooked.push((coeff, idx));
        }
        cooked.sort_by(|a, b| a.1.cmp(&b.1));
        let mut terms: Vec<(Expr, Vec<u32>)> = Vec::with_capacity(cooked.len());
        for (coeff, idx) in cooked {
            match terms.last_mut() {
                Some((acc, last)) if *last == idx => *acc = Expr::add(acc.clone(), coeff),
                _ => terms.push((coeff, idx)),
            }
        }
        terms.retain(|(c, _)| !c.is_zero());
        FormExpr { dim, degree, terms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Canonical term list (coefficient, strictly increasing index).
    pub fn terms(&self) -> &[(Expr, Vec<u32>)] {
        &self.terms
    }

    /// Structurally zero (no surviving terms). A numerically zero form with
    /// unsimplifiable coefficients is *not* detected here.
    pub fn is_structurally_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &FormExpr) -> FormExpr {
        assert_eq!(self.dim, other.dim, "ambient dimension mismatch");
        assert_eq!(self.degree, other.degree, "cannot add forms of different degree");
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        FormExpr::from_terms(self.dim, self.degree, terms)
    }

    pub fn sub(&self, other: &FormExpr) -> FormExpr {
        self.add(&other.scale(&Expr::int(-1)))
    }

    pub fn scale(&self, f: &Expr) -> FormExpr {
        let terms = self
            .terms
            .iter()
            .map(|(c, idx)| (Expr::mul(f.clone(), c.clone()), idx.clone()))
            .collect();
        FormExpr::from_terms(self.dim, self.degree, terms)
    }

    pub fn wedge(&self, other: &FormExpr) -> FormExpr {
        assert_eq!(self.dim, other.dim, "ambient dimension mismatch");
        let degree = self.degree + other.degree;
        let mut terms = Vec::new();
        if degree <= self.dim {
            for (a, i) in &self.terms {
                for (b, j) in &other.terms {
                    let mut idx = i.clone();
                    idx.extend_from_slice(j);
                    terms.push((Expr::mul(a.clone(), b.clone()), idx));
                }
            }
        }
        FormExpr::from_terms(self.dim, degree, terms)
    }

    /// Exterior derivative: `d(f dxI) = sum_j (df/dx_j) dx_j ^ dxI`.
    pub fn exterior_derivative(&self) -> FormExpr {
        let mut terms = Vec::new();
        if self.degree < self.dim {
            for (f, idx) in &self.terms {
                for j in 1..=(self.dim as u32) {
                    if idx.contains(&j) {
                        continue;
                    }
                    let df = f.differentiate(j);
                    if df.is_zero() {
                        continue;
                    }
                    let mut new_idx = Vec::with_capacity(idx.len() + 1);
                    new_idx.push(j);
                    new_idx.extend_from_slice(idx);
                    terms.push((df, new_idx));
                }
            }
        }
        FormExpr::from_terms(self.dim, self.degree + 1, terms)
    }

    /// Pull back along the map `x -> (map[0](x), ..., map[dst-1](x))` from a
    /// `src_dim`-dimensional chart. `self` must live on the target
    /// (`self.dim == map.len()`); the result lives on the source.
    pub fn pullback(&self, map: &[Expr], src_dim: usize) -> FormExpr {
        assert_eq!(self.dim, map.len(), "map target dimension mismatch");
        // Differentials of the component functions, as 1-forms on the source.
        let differentials: Vec<FormExpr> = map
            .iter()
            .map(|component| {
                let coeffs: Vec<Expr> =
                    (1..=src_dim as u32).map(|j| component.differentiate(j)).collect();
                FormExpr::one_form(src_dim, &coeffs)
            })
            .collect();
        let mut out = FormExpr::zero(src_dim, self.degree);
        for (f, idx) in &self.terms {
            let mut term = FormExpr::scalar(src_dim, f.compose(map));
            for &i in idx {
                term = term.wedge(&differentials[(i - 1) as usize]);
            }
            out = out.add(&term);
        }
        out
    }

    /// Evaluate every coefficient; returns `(index, value)` pairs in
    /// canonical order.
    pub fn eval_terms(&self, point: &[f64]) -> Result<Vec<(Vec<u32>, f64)>, EvalError> {
        self.terms
            .iter()
            .map(|(c, idx)| Ok((idx.clone(), c.eval(point)?)))
            .collect()
    }

    /// Largest coefficient magnitude at a point (0 for a structural zero).
    pub fn max_coeff_at(&self, point: &[f64]) -> Result<f64, EvalError> {
        let mut m = 0f64;
        for (c, _) in &self.terms {
            m = m.max(c.eval(point)?.abs());
        }
        Ok(m)
    }

    /// Coefficient of the volume index `dx1 ^ ... ^ dxn` evaluated at a
    /// point. Only meaningful for top-degree forms.
    pub fn eval_top(&self, point: &[f64]) -> Result<f64, EvalError> {
        assert_eq!(self.degree, self.dim, "not a top-degree form");
        match self.terms.first() {
            Some((c, _)) => c.eval(point),
            None => Ok(0.0),
        }
    }

    /// The coefficient of the volume form as an expression (top degree only).
    pub fn top_coefficient(&self) -> Expr {
        assert_eq!(self.degree, self.dim, "not a top-degree form");
        self.terms.first().map_or_else(Expr::zero, |(c, _)| c.clone())
    }

    /// Apply a function to each coefficient (e.g. substitution that does not
    /// change the coordinates).
    pub fn map_coeffs(&self, mut f: impl FnMut(&Expr) -> Expr) -> FormExpr {
        let terms = self.terms.iter().map(|(c, idx)| (f(c), idx.clone())).collect();
        FormExpr::from_terms(self.dim, self.degree, terms)
    }
}

impl fmt::Display for FormExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (n, (coeff, idx)) in self.terms.iter().enumerate() {
            if n > 0 {
                write!(f, " + ")?;
            }
            if idx.is_empty() {
                write!(f, "{coeff}")?;
                continue;
            }
            if coeff.is_one() {
                // bare dx1^dx2
            } else {
                write!(f, "({coeff})*")?;
            }
            for (m, i) in idx.iter().enumerate() {
                if m > 0 {
                    write!(f, "^")?;
                }
                write!(f, "dx{i}")?;
            }
        }
        Ok(())
    }
}

/// A square matrix of homogeneous forms (connection and curvature matrices).
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixForm {
    pub size: usize,
    pub dim: usize,
    pub degree: usize,
    entries: Vec<FormExpr>,
}

impl MatrixForm {
    pub fn zeros(size: usize, dim: usize, degree: usize) -> Self {
        MatrixForm {
            size,
            dim,
            degree,
            entries: vec![FormExpr::zero(dim, degree); size * size],
        }
    }

    pub fn from_fn(
        size: usize,
        dim: usize,
        degree: usize,
        mut f: impl FnMut(usize, usize) -> FormExpr,
    ) -> Self {
        let mut entries = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let e = f(i, j);
                assert_eq!(e.dim(), dim);
                assert_eq!(e.degree(), degree);
                entries.push(e);
            }
        }
        MatrixForm { size, dim, degree, entries }
    }

    pub fn at(&self, i: usize, j: usize) -> &FormExpr {
        &self.entries[i * self.size + j]
    }

    pub fn add(&self, other: &MatrixForm) -> MatrixForm {
        assert_eq!((self.size, self.dim, self.degree), (other.size, other.dim, other.degree));
        MatrixForm::from_fn(self.size, self.dim, self.degree, |i, j| {
            self.at(i, j).add(other.at(i, j))
        })
    }

    pub fn sub(&self, other: &MatrixForm) -> MatrixForm {
        assert_eq!((self.size, self.dim, self.degree), (other.size, other.dim, other.degree));
        MatrixForm::from_fn(self.size, self.dim, self.degree, |i, j| {
            self.at(i, j).sub(other.at(i, j))
        })
    }

    /// Matrix product with wedge entries: `(A ^ B)_{ij} = sum_k A_{ik} ^ B_{kj}`.
    pub fn wedge_mul(&self, other: &MatrixForm) -> MatrixForm {
        assert_eq!(self.size, other.size);
        assert_eq!(self.dim, other.dim);
        MatrixForm::from_fn(self.size, self.dim, self.degree + other.degree, |i, j| {
            let mut acc = FormExpr::zero(self.dim, self.degree + other.degree);
            for k in 0..self.size {
                acc = acc.add(&self.at(i, k).wedge(other.at(k, j)));
            }
            acc
        })
    }

    pub fn exterior_derivative(&self) -> MatrixForm {
        MatrixForm::from_fn(self.size, self.dim, self.degree + 1, |i, j| {
            self.at(i, j).exterior_derivative()
        })
    }

    pub fn transpose(&self) -> MatrixForm {
        MatrixForm::from_fn(self.size, self.dim, self.degree, |i, j| self.at(j, i).clone())
    }

    pub fn map(&self, mut f: impl FnMut(&FormExpr) -> FormExpr) -> MatrixForm {
        let entries: Vec<FormExpr> = self.entries.iter().map(|e| f(e)).collect();
        let dim = entries.first().map_or(self.dim, FormExpr::dim);
        let degree = entries.first().map_or(self.degree, FormExpr::degree);
        assert!(entries.iter().all(|e| e.dim() == dim && e.degree() == degree));
        MatrixForm { size: self.size, dim, degree, entries }
    }

    /// Largest coefficient magnitude over all entries at a point.
    pub fn max_coeff_at(&self, point: &[f64]) -> Result<f64, EvalError> {
        let mut m = 0f64;
        for e in &self.entries {
            m = m.max(e.max_coeff_at(point)?);
        }
        Ok(m)
    }

    pub fn entries(&self) -> impl Iterator<Item = &FormExpr> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dx(dim: usize, i: u32) -> FormExpr {
        FormExpr::coordinate(dim, i)
    }

    #[test]
    fn wedge_is_anticommutative_on_coordinates() {
        let a = dx(3, 1).wedge(&dx(3, 2));
        let b = dx(3, 2).wedge(&dx(3, 1));
        assert_eq!(a.scale(&Expr::int(-1)), b);
        assert!(dx(3, 2).wedge(&dx(3, 2)).is_structurally_zero());
    }

    #[test]
    fn indices_canonicalize_with_signs() {
        let m = FormExpr::monomial(3, Expr::var(1), vec![3, 1]);
        let canon = dx(3, 1).wedge(&dx(3, 3)).scale(&Expr::neg(Expr::var(1)));
        assert_eq!(m, canon);
        assert_eq!(m.terms().len(), 1);
        assert_eq!(m.terms()[0].1, vec![1, 3]);
    }

    #[test]
    fn like_terms_merge_and_zeros_drop() {
        let a = FormExpr::monomial(2, Expr::int(2), vec![1, 2]);
        let b = FormExpr::monomial(2, Expr::int(-2), vec![2, 1]); // = +2 dx1^dx2
        let sum = a.add(&b);
        assert_eq!(sum.eval_top(&[0.0, 0.0]).unwrap(), 4.0);
        let cancel = a.add(&a.scale(&Expr::int(-1)));
        assert!(cancel.is_structurally_zero());
    }

    #[test]
    fn degree_beyond_dimension_vanishes() {
        let vol = dx(2, 1).wedge(&dx(2, 2));
        assert!(vol.wedge(&dx(2, 1)).is_structurally_zero());
    }

    #[test]
    fn exterior_derivative_of_a_product() {
        // d(x1*x2 dx1) = x1 dx2^dx1 = -x1 dx1^dx2
        let alpha = FormExpr::monomial(2, parse("x1*x2").unwrap(), vec![1]);
        let d = alpha.exterior_derivative();
        assert_eq!(d.terms().len(), 1);
        let got = d.eval_top(&[3.0, 5.0]).unwrap();
        assert_eq!(got, -3.0);
    }

    #[test]
    fn d_squared_vanishes_numerically() {
        let fns = ["sin(x1*x2)*x3", "exp(x1 - x2^2)", "sqrt(1 + x1^2 + x3^2)"];
        let pts = [[0.3, -0.4, 0.9], [1.0, 0.5, -0.25], [-0.7, 0.2, 0.1]];
        for src in fns {
            let f = FormExpr::scalar(3, parse(src).unwrap());
            let dd = f.exterior_derivative().exterior_derivative();
            for p in &pts {
                assert!(dd.max_coeff_at(p).unwrap() <= 1e-12, "d^2 {src} != 0");
            }
        }
    }

    #[test]
    fn wedge_is_associative_numerically() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rand_one_form = |dim: usize| {
            let coeffs: Vec<Expr> = (0..dim)
                .map(|_| {
                    Expr::add(
                        Expr::mul(Expr::float(rng.gen_range(-1.0..1.0)), Expr::var(1)),
                        Expr::mul(Expr::float(rng.gen_range(-1.0..1.0)), Expr::sin(Expr::var(2))),
                    )
                })
                .collect();
            FormExpr::one_form(dim, &coeffs)
        };
        for _ in 0..10 {
            let (a, b, c) = (rand_one_form(3), rand_one_form(3), rand_one_form(3));
            let left = a.wedge(&b).wedge(&c);
            let right = a.wedge(&b.wedge(&c));
            let diff = left.sub(&right);
            for p in [[0.2, 0.4, -0.3], [-0.9, 0.1, 0.8]] {
                assert!(diff.max_coeff_at(&p).unwrap() <= 1e-12);
            }
        }
    }

    #[test]
    fn pullback_along_polar_coordinates() {
        // F(r, t) = (r cos t, r sin t) pulls dx1^dx2 back to r dr^dt.
        let map = [parse("x1*cos(x2)").unwrap(), parse("x1*sin(x2)").unwrap()];
        let vol = dx(2, 1).wedge(&dx(2, 2));
        let pulled = vol.pullback(&map, 2);
        for (r, t) in [(0.5, 0.3), (1.25, -2.0), (2.0, 3.1)] {
            let got = pulled.eval_top(&[r, t]).unwrap();
            assert!((got - r).abs() <= 1e-12 * r.max(1.0), "got {got}, want {r}");
        }
    }

    #[test]
    fn pullback_commutes_with_d() {
        // Naturality: d(F* a) = F*(da), checked numerically.
        let map = [parse("x1^2 - x2").unwrap(), parse("x1*x2").unwrap()];
        let alpha = FormExpr::monomial(2, parse("sin(x1) + x2^2").unwrap(), vec![2]);
        let lhs = alpha.pullback(&map, 2).exterior_derivative();
        let rhs = alpha.exterior_derivative().pullback(&map, 2);
        let diff = lhs.sub(&rhs);
        for p in [[0.4, 0.7], [-1.1, 0.2], [0.0, -0.6]] {
            assert!(diff.max_coeff_at(&p).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn pullback_of_zero_form_is_composition() {
        let f = FormExpr::scalar(2, parse("x1 + x2^2").unwrap());
        let map = [parse("2*x1").unwrap(), parse("x1 - 1").unwrap()];
        let pulled = f.pullback(&map, 1);
        let got = pulled.terms()[0].0.eval(&[3.0]).unwrap();
        assert_eq!(got, 6.0 + 4.0);
    }

    #[test]
    fn restriction_to_a_slice_drops_conormal_terms() {
        // Include R^1 into R^2 as x2 = 0: dx2 pulls back to 0, coefficients
        // restrict.
        let incl = [Expr::var(1), Expr::zero()];
        let alpha = FormExpr::one_form(2, &[parse("x1 + x2").unwrap(), parse("x1^2").unwrap()]);
        let pulled = alpha.pullback(&incl, 1);
        assert_eq!(pulled.terms().len(), 1);
        assert_eq!(pulled.terms()[0].1, vec![1]);
        assert_eq!(pulled.terms()[0].0.eval(&[5.0]).unwrap(), 5.0);
    }

    #[test]
    fn matrix_wedge_multiplication() {
        // For 1-form matrices, (A ^ A)_{ij} picks up the commutator structure:
        // check a 2x2 example by hand.
        let a01 = FormExpr::monomial(2, Expr::var(1), vec![1]);
        let a10 = FormExpr::monomial(2, Expr::var(2), vec![2]);
        let z = FormExpr::zero(2, 1);
        let a = MatrixForm::from_fn(2, 2, 1, |i, j| match (i, j) {
            (0, 1) => a01.clone(),
            (1, 0) => a10.clone(),
            _ => z.clone(),
        });
        let sq = a.wedge_mul(&a);
        // (A^A)_{00} = a01 ^ a10 = x1*x2 dx1^dx2
        assert_eq!(sq.at(0, 0).eval_top(&[2.0, 3.0]).unwrap(), 6.0);
        // (A^A)_{11} = a10 ^ a01 = -x1*x2 dx1^dx2
        assert_eq!(sq.at(1, 1).eval_top(&[2.0, 3.0]).unwrap(), -6.0);
        assert!(sq.at(0, 1).is_structurally_zero());
    }

    #[test]
    fn display_is_readable() {
        let alpha = FormExpr::monomial(3, parse("x1 + 1").unwrap(), vec![1, 3]);
        assert_eq!(alpha.to_string(), "(x1 + 1)*dx1^dx3");
        assert_eq!(FormExpr::zero(3, 2).to_string(), "0");
        assert_eq!(dx(2, 2).to_string(), "dx2");
    }
}
