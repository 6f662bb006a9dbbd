//! Scalar expression trees over chart coordinates.
//!
//! An [`Expr`] is an immutable tree of arithmetic over variables `x1..xn`,
//! exact rational or floating-point constants, integer powers, and the unary
//! functions `sin`, `cos`, `exp`, `sqrt`. Trees are built through smart
//! constructors that fold constant subtrees exactly (rational arithmetic when
//! both operands are rational) and apply the usual unit laws (`0 + e`,
//! `1 * e`, `e^1`, ...). No other rewriting ever happens: algebraic identities
//! are established by evaluation at sampled points, not by a simplifier.
//!
//! Evaluation follows IEEE-754 semantics: intermediate infinities propagate
//! (so, e.g., `1/(1+exp(1/x1))` is well-defined arbitrarily close to the pole)
//! and the result is an error exactly when the final value is not finite or a
//! NaN was produced along the way (division `0/0`, `sqrt` of a negative).

mod parse;

pub mod form;

use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

pub use form::{FormExpr, MatrixForm};
pub(crate) use parse::factor_string;
pub use parse::{parse, ParseError};

/// A constant: exact rational or floating-point literal.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Rational(BigRational),
    Float(f64),
}

impl Scalar {
    pub fn from_int(n: i64) -> Self {
        Scalar::Rational(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn from_ratio(num: i64, den: i64) -> Self {
        Scalar::Rational(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Scalar::Rational(r) => r.to_f64().unwrap_or(f64::NAN),
            Scalar::Float(f) => *f,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Scalar::Rational(r) => r.is_zero(),
            Scalar::Float(f) => *f == 0.0,
        }
    }

    pub fn is_one(&self) -> bool {
        match self {
            Scalar::Rational(r) => r.is_one(),
            Scalar::Float(f) => *f == 1.0,
        }
    }

    /// Exact arithmetic when both sides are rational, float otherwise.
    fn binop(a: &Scalar, b: &Scalar, op: BinOp) -> Option<Scalar> {
        use Scalar::*;
        match (a, b) {
            (Rational(x), Rational(y)) => match op {
                BinOp::Add => Some(Rational(x + y)),
                BinOp::Sub => Some(Rational(x - y)),
                BinOp::Mul => Some(Rational(x * y)),
                BinOp::Div => {
                    if y.is_zero() {
                        None // keep the tree; evaluation reports the domain error
                    } else {
                        Some(Rational(x / y))
                    }
                }
            },
            _ => {
                let (x, y) = (a.to_f64(), b.to_f64());
                let v = match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                };
                // Fold only finite results; a non-finite constant has no
                // printable literal, and evaluation reports the domain error
                // from the intact tree.
                v.is_finite().then_some(Float(v))
            }
        }
    }

    fn neg(&self) -> Scalar {
        match self {
            Scalar::Rational(r) => Scalar::Rational(-r),
            Scalar::Float(f) => Scalar::Float(-f),
        }
    }

    fn pow(&self, n: i32) -> Option<Scalar> {
        match self {
            Scalar::Rational(r) => {
                if r.is_zero() && n < 0 {
                    return None;
                }
                let m = n.unsigned_abs();
                let num = r.numer().pow(m);
                let den = r.denom().pow(m);
                let p = BigRational::new(num, den);
                Some(Scalar::Rational(if n < 0 { p.recip() } else { p }))
            }
            Scalar::Float(f) => {
                let v = f.powi(n);
                v.is_finite().then_some(Scalar::Float(v))
            }
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// One node of an expression tree. Variables are 1-based (`Var(1)` is `x1`).
#[derive(Debug, PartialEq)]
pub enum Node {
    Const(Scalar),
    Var(u32),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, i32),
    Neg(Expr),
    Sin(Expr),
    Cos(Expr),
    Exp(Expr),
    Sqrt(Expr),
}

/// An immutable, cheaply clonable expression. Subtrees are shared, so
/// differentiation and substitution reuse untouched branches.
#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("expression references x{var} but the point has dimension {dim}")]
    VarOutOfRange { var: u32, dim: usize },
    #[error("evaluation domain error ({0})")]
    Domain(&'static str),
}

impl Expr {
    fn new(node: Node) -> Self {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(s: Scalar) -> Self {
        Expr::new(Node::Const(s))
    }

    pub fn int(n: i64) -> Self {
        Expr::constant(Scalar::from_int(n))
    }

    pub fn rational(num: i64, den: i64) -> Self {
        Expr::constant(Scalar::from_ratio(num, den))
    }

    pub fn float(f: f64) -> Self {
        Expr::constant(Scalar::Float(f))
    }

    pub fn zero() -> Self {
        Expr::int(0)
    }

    pub fn one() -> Self {
        Expr::int(1)
    }

    /// The variable `x{i}`; `i` must be >= 1.
    pub fn var(i: u32) -> Self {
        assert!(i >= 1, "variables are 1-based");
        Expr::new(Node::Var(i))
    }

    pub fn as_const(&self) -> Option<&Scalar> {
        match self.node() {
            Node::Const(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const().is_some_and(Scalar::is_zero)
    }

    pub fn is_one(&self) -> bool {
        self.as_const().is_some_and(Scalar::is_one)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(s) = Scalar::binop(x, y, BinOp::Add) {
                return Expr::constant(s);
            }
        }
        if a.is_zero() {
            return b;
        }
        if b.is_zero() {
            return a;
        }
        if let Node::Neg(x) = b.node() {
            if *x == a {
                return Expr::zero();
            }
        }
        if let Node::Neg(x) = a.node() {
            if *x == b {
                return Expr::zero();
            }
        }
        Expr::new(Node::Add(a, b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(s) = Scalar::binop(x, y, BinOp::Sub) {
                return Expr::constant(s);
            }
        }
        if b.is_zero() {
            return a;
        }
        if a == b {
            return Expr::zero();
        }
        if a.is_zero() {
            return Expr::neg(b);
        }
        Expr::new(Node::Sub(a, b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(s) = Scalar::binop(x, y, BinOp::Mul) {
                return Expr::constant(s);
            }
        }
        if a.is_zero() || b.is_zero() {
            return Expr::zero();
        }
        if a.is_one() {
            return b;
        }
        if b.is_one() {
            return a;
        }
        Expr::new(Node::Mul(a, b))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(s) = Scalar::binop(x, y, BinOp::Div) {
                return Expr::constant(s);
            }
        }
        if b.is_one() {
            return a;
        }
        if a.is_zero() && !b.is_zero() {
            return Expr::zero();
        }
        Expr::new(Node::Div(a, b))
    }

    pub fn pow(a: Expr, n: i32) -> Expr {
        if n == 0 {
            return Expr::one();
        }
        if n == 1 {
            return a;
        }
        if let Some(x) = a.as_const() {
            if let Some(s) = x.pow(n) {
                return Expr::constant(s);
            }
        }
        Expr::new(Node::Pow(a, n))
    }

    pub fn neg(a: Expr) -> Expr {
        if let Some(x) = a.as_const() {
            return Expr::constant(x.neg());
        }
        if let Node::Neg(inner) = a.node() {
            return inner.clone();
        }
        Expr::new(Node::Neg(a))
    }

    pub fn sin(a: Expr) -> Expr {
        Expr::new(Node::Sin(a))
    }

    pub fn cos(a: Expr) -> Expr {
        Expr::new(Node::Cos(a))
    }

    pub fn exp(a: Expr) -> Expr {
        Expr::new(Node::Exp(a))
    }

    pub fn sqrt(a: Expr) -> Expr {
        Expr::new(Node::Sqrt(a))
    }

    /// Sum of a sequence of expressions (empty sum is `0`).
    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
        terms.into_iter().fold(Expr::zero(), Expr::add)
    }

    /// Evaluate at a point, with IEEE-754 intermediate semantics. An error is
    /// returned when a NaN appears (e.g. `0/0`, `sqrt` of a negative value)
    /// or the final value is not finite.
    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        let v = self.eval_raw(point)?;
        if v.is_nan() {
            Err(EvalError::Domain("result is NaN"))
        } else if !v.is_finite() {
            Err(EvalError::Domain("result is not finite"))
        } else {
            Ok(v)
        }
    }

    fn eval_raw(&self, point: &[f64]) -> Result<f64, EvalError> {
        Ok(match self.node() {
            Node::Const(s) => s.to_f64(),
            Node::Var(i) => {
                let idx = (*i as usize) - 1;
                *point
                    .get(idx)
                    .ok_or(EvalError::VarOutOfRange { var: *i, dim: point.len() })?
            }
            Node::Add(a, b) => a.eval_raw(point)? + b.eval_raw(point)?,
            Node::Sub(a, b) => a.eval_raw(point)? - b.eval_raw(point)?,
            Node::Mul(a, b) => a.eval_raw(point)? * b.eval_raw(point)?,
            Node::Div(a, b) => a.eval_raw(point)? / b.eval_raw(point)?,
            Node::Pow(a, n) => a.eval_raw(point)?.powi(*n),
            Node::Neg(a) => -a.eval_raw(point)?,
            Node::Sin(a) => a.eval_raw(point)?.sin(),
            Node::Cos(a) => a.eval_raw(point)?.cos(),
            Node::Exp(a) => a.eval_raw(point)?.exp(),
            Node::Sqrt(a) => a.eval_raw(point)?.sqrt(),
        })
    }

    /// Exact partial derivative with respect to `x{var}`.
    pub fn differentiate(&self, var: u32) -> Expr {
        match self.node() {
            Node::Const(_) => Expr::zero(),
            Node::Var(i) => {
                if *i == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Add(a, b) => Expr::add(a.differentiate(var), b.differentiate(var)),
            Node::Sub(a, b) => Expr::sub(a.differentiate(var), b.differentiate(var)),
            Node::Mul(a, b) => Expr::add(
                Expr::mul(a.differentiate(var), b.clone()),
                Expr::mul(a.clone(), b.differentiate(var)),
            ),
            Node::Div(a, b) => Expr::div(
                Expr::sub(
                    Expr::mul(a.differentiate(var), b.clone()),
                    Expr::mul(a.clone(), b.differentiate(var)),
                ),
                Expr::pow(b.clone(), 2),
            ),
            Node::Pow(a, n) => Expr::mul(
                Expr::mul(Expr::int(*n as i64), Expr::pow(a.clone(), n - 1)),
                a.differentiate(var),
            ),
            Node::Neg(a) => Expr::neg(a.differentiate(var)),
            Node::Sin(a) => Expr::mul(Expr::cos(a.clone()), a.differentiate(var)),
            Node::Cos(a) => Expr::neg(Expr::mul(Expr::sin(a.clone()), a.differentiate(var))),
            Node::Exp(a) => Expr::mul(Expr::exp(a.clone()), a.differentiate(var)),
            Node::Sqrt(a) => Expr::div(
                a.differentiate(var),
                Expr::mul(Expr::int(2), Expr::sqrt(a.clone())),
            ),
        }
    }

    /// Replace variables by expressions. `subs(i)` returning `None` keeps
    /// `x{i}` untouched. Constant folding applies to the rebuilt tree.
    pub fn substitute(&self, subs: &dyn Fn(u32) -> Option<Expr>) -> Expr {
        match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(i) => subs(*i).unwrap_or_else(|| self.clone()),
            Node::Add(a, b) => Expr::add(a.substitute(subs), b.substitute(subs)),
            Node::Sub(a, b) => Expr::sub(a.substitute(subs), b.substitute(subs)),
            Node::Mul(a, b) => Expr::mul(a.substitute(subs), b.substitute(subs)),
            Node::Div(a, b) => Expr::div(a.substitute(subs), b.substitute(subs)),
            Node::Pow(a, n) => Expr::pow(a.substitute(subs), *n),
            Node::Neg(a) => Expr::neg(a.substitute(subs)),
            Node::Sin(a) => Expr::sin(a.substitute(subs)),
            Node::Cos(a) => Expr::cos(a.substitute(subs)),
            Node::Exp(a) => Expr::exp(a.substitute(subs)),
            Node::Sqrt(a) => Expr::sqrt(a.substitute(subs)),
        }
    }

    /// Substitute from a coordinate map: `x{i}` becomes `map[i-1]`.
    /// Variables beyond the map length are left untouched.
    pub fn compose(&self, map: &[Expr]) -> Expr {
        self.substitute(&|i| map.get((i - 1) as usize).cloned())
    }

    /// Largest variable index appearing in the tree (0 when constant).
    pub fn max_var(&self) -> u32 {
        match self.node() {
            Node::Const(_) => 0,
            Node::Var(i) => *i,
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.max_var().max(b.max_var())
            }
            Node::Pow(a, _) | Node::Neg(a) | Node::Sin(a) | Node::Cos(a) | Node::Exp(a)
            | Node::Sqrt(a) => a.max_var(),
        }
    }

    /// Node count, used by tests to keep randomized trees in bounds.
    pub fn size(&self) -> usize {
        match self.node() {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                1 + a.size() + b.size()
            }
            Node::Pow(a, _) | Node::Neg(a) | Node::Sin(a) | Node::Cos(a) | Node::Exp(a)
            | Node::Sqrt(a) => 1 + a.size(),
        }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

/// A rectangular matrix of expressions (transition maps, frames).
#[derive(Debug, Clone, PartialEq)]
pub struct ExprMatrix {
    pub rows: usize,
    pub cols: usize,
    entries: Vec<Expr>,
}

impl ExprMatrix {
    pub fn from_rows(rows: Vec<Vec<Expr>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged matrix");
        ExprMatrix { rows: r, cols: c, entries: rows.into_iter().flatten().collect() }
    }

    pub fn identity(n: usize) -> Self {
        ExprMatrix::from_fn(n, n, |i, j| if i == j { Expr::one() } else { Expr::zero() })
    }

    pub fn zeros(r: usize, c: usize) -> Self {
        ExprMatrix::from_fn(r, c, |_, _| Expr::zero())
    }

    pub fn from_fn(r: usize, c: usize, mut f: impl FnMut(usize, usize) -> Expr) -> Self {
        let mut entries = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                entries.push(f(i, j));
            }
        }
        ExprMatrix { rows: r, cols: c, entries }
    }

    pub fn at(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.cols + j]
    }

    pub fn map(&self, mut f: impl FnMut(&Expr) -> Expr) -> Self {
        ExprMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| f(e)).collect(),
        }
    }

    pub fn matmul(&self, other: &ExprMatrix) -> ExprMatrix {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        ExprMatrix::from_fn(self.rows, other.cols, |i, j| {
            Expr::sum((0..self.cols).map(|k| Expr::mul(self.at(i, k).clone(), other.at(k, j).clone())))
        })
    }

    /// Apply to a column vector of expressions.
    pub fn apply(&self, v: &[Expr]) -> Vec<Expr> {
        assert_eq!(self.cols, v.len(), "dimension mismatch");
        (0..self.rows)
            .map(|i| Expr::sum((0..self.cols).map(|j| Expr::mul(self.at(i, j).clone(), v[j].clone()))))
            .collect()
    }

    pub fn transpose(&self) -> ExprMatrix {
        ExprMatrix::from_fn(self.cols, self.rows, |i, j| self.at(j, i).clone())
    }

    pub fn compose(&self, map: &[Expr]) -> ExprMatrix {
        self.map(|e| e.compose(map))
    }

    pub fn eval(&self, point: &[f64]) -> Result<crate::linalg::RMat, EvalError> {
        let mut m = crate::linalg::RMat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = self.at(i, j).eval(point)?;
            }
        }
        Ok(m)
    }

    pub fn entries(&self) -> impl Iterator<Item = &Expr> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, pt: &[f64]) -> f64 {
        parse(src).unwrap().eval(pt).unwrap()
    }

    #[test]
    fn constant_folding_is_exact() {
        let e = parse("1/3 + 1/6").unwrap();
        assert_eq!(e, Expr::rational(1, 2));
        let e = parse("(2/3)^2").unwrap();
        assert_eq!(e, Expr::rational(4, 9));
        let e = parse("2^-2").unwrap();
        assert_eq!(e, Expr::rational(1, 4));
    }

    #[test]
    fn unit_laws_fold() {
        let x = Expr::var(1);
        assert_eq!(Expr::add(x.clone(), Expr::zero()), x);
        assert_eq!(Expr::mul(Expr::one(), x.clone()), x);
        assert_eq!(Expr::mul(Expr::zero(), x.clone()), Expr::zero());
        assert_eq!(Expr::pow(x.clone(), 1), x);
        assert_eq!(Expr::sub(x.clone(), x.clone()), Expr::zero());
        assert_eq!(Expr::neg(Expr::neg(x.clone())), x);
    }

    #[test]
    fn division_by_zero_constant_is_not_folded() {
        let e = parse("1/0").unwrap();
        assert!(e.as_const().is_none());
        assert_eq!(e.eval(&[]), Err(EvalError::Domain("result is not finite")));
    }

    #[test]
    fn evaluation_matches_direct_arithmetic() {
        assert_eq!(ev("sin(x1)*x2 + 3/2", &[0.7, 2.0]), 0.7f64.sin() * 2.0 + 1.5);
        assert_eq!(ev("x1^3 - x2/4", &[2.0, 8.0]), 6.0);
        assert_eq!(ev("exp(0)", &[]), 1.0);
        assert_eq!(ev("sqrt(x1^2 + x2^2)", &[3.0, 4.0]), 5.0);
    }

    #[test]
    fn evaluation_domain_errors() {
        let e = parse("sqrt(0 - x1)").unwrap();
        assert_eq!(e.eval(&[1.0]), Err(EvalError::Domain("result is NaN")));
        let e = parse("1/x1").unwrap();
        assert!(e.eval(&[0.0]).is_err());
        let e = parse("x3").unwrap();
        assert_eq!(e.eval(&[0.0]), Err(EvalError::VarOutOfRange { var: 3, dim: 1 }));
    }

    #[test]
    fn infinities_may_cancel_before_the_final_value() {
        // A smooth logistic step: the pole of 1/x1 is absorbed by exp.
        let e = parse("1/(1 + exp(1/x1))").unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 0.0);
        assert!((e.eval(&[-1e-3]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_examples() {
        let e = parse("x1^3").unwrap().differentiate(1);
        assert_eq!(e.eval(&[2.0]).unwrap(), 12.0);
        let e = parse("sin(x1*x2)").unwrap().differentiate(2);
        let got = e.eval(&[0.5, 0.25]).unwrap();
        assert!((got - 0.125f64.cos() * 0.5).abs() < 1e-15);
        // Derivative with respect to an absent variable vanishes.
        assert_eq!(parse("x1^2").unwrap().differentiate(2), Expr::zero());
    }

    #[test]
    fn derivative_of_quotient_and_sqrt() {
        let e = parse("x1/x2").unwrap().differentiate(2);
        assert!((e.eval(&[3.0, 2.0]).unwrap() + 0.75).abs() < 1e-15);
        let e = parse("sqrt(x1)").unwrap().differentiate(1);
        assert!((e.eval(&[4.0]).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn substitution_composes_charts() {
        // x1 -> y1 + 1/2, x2 -> -y2  (an affine chart change)
        let e = parse("x1^2 + x2").unwrap();
        let composed = e.compose(&[
            Expr::add(Expr::var(1), Expr::rational(1, 2)),
            Expr::neg(Expr::var(2)),
        ]);
        let got = composed.eval(&[0.5, 2.0]).unwrap();
        assert_eq!(got, 1.0 - 2.0);
    }

    #[test]
    fn substitution_by_constants_folds() {
        let e = parse("x1^2 + x2^2").unwrap();
        let at_zero = e.compose(&[Expr::zero(), Expr::zero()]);
        assert_eq!(at_zero, Expr::zero());
    }

    #[test]
    fn expr_matrix_apply_and_matmul() {
        let m = ExprMatrix::from_rows(vec![
            vec![Expr::zero(), Expr::neg(Expr::one())],
            vec![Expr::one(), Expr::zero()],
        ]);
        let v = m.apply(&[Expr::var(1), Expr::var(2)]);
        assert_eq!(v[0].eval(&[3.0, 4.0]).unwrap(), -4.0);
        assert_eq!(v[1].eval(&[3.0, 4.0]).unwrap(), 3.0);
        let m2 = m.matmul(&m);
        // Rotation by 90 degrees squared is -I.
        assert_eq!(m2.at(0, 0), &Expr::int(-1));
        assert_eq!(m2.at(0, 1), &Expr::zero());
    }
}
