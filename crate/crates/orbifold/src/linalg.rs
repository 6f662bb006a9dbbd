//! Small dense real matrices and the handful of numeric routines the rest of
//! the crate needs: Gauss-Jordan inverses, LU determinants, group averaging,
//! and pivoted Gram-Schmidt for extracting orthonormal bases. Matrix sizes
//! here are chart and fiber dimensions (single digits), so simplicity beats
//! asymptotics throughout.

use std::ops::{Index, IndexMut};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct RMat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl RMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RMat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = RMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged matrix");
        RMat { rows: r, cols: c, data: rows.into_iter().flatten().collect() }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = RMat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn matmul(&self, other: &RMat) -> RMat {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = RMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "dimension mismatch");
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> RMat {
        RMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn add(&self, other: &RMat) -> RMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        RMat::from_fn(self.rows, self.cols, |i, j| self[(i, j)] + other[(i, j)])
    }

    pub fn sub(&self, other: &RMat) -> RMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        RMat::from_fn(self.rows, self.cols, |i, j| self[(i, j)] - other[(i, j)])
    }

    pub fn scale(&self, s: f64) -> RMat {
        RMat::from_fn(self.rows, self.cols, |i, j| s * self[(i, j)])
    }

    /// Largest entry magnitude.
    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `tr(M)`.
    pub fn trace(&self) -> f64 {
        assert!(self.is_square());
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    /// `M^t` for `t >= 0` by repeated multiplication (exponents here are
    /// group element orders, i.e. tiny).
    pub fn pow(&self, t: usize) -> RMat {
        assert!(self.is_square());
        let mut acc = RMat::identity(self.rows);
        for _ in 0..t {
            acc = acc.matmul(self);
        }
        acc
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Determinant by LU with partial pivoting.
    pub fn det(&self) -> f64 {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut det = 1.0;
        for k in 0..n {
            let (pivot_row, pivot) = (k..n)
                .map(|i| (i, a[(i, k)].abs()))
                .max_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap();
            if pivot == 0.0 {
                return 0.0;
            }
            if pivot_row != k {
                for j in 0..n {
                    let tmp = a[(k, j)];
                    a[(k, j)] = a[(pivot_row, j)];
                    a[(pivot_row, j)] = tmp;
                }
                det = -det;
            }
            det *= a[(k, k)];
            for i in (k + 1)..n {
                let factor = a[(i, k)] / a[(k, k)];
                for j in k..n {
                    a[(i, j)] -= factor * a[(k, j)];
                }
            }
        }
        det
    }

    /// Inverse by Gauss-Jordan with partial pivoting; `None` when singular to
    /// working precision.
    pub fn inverse(&self) -> Option<RMat> {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = RMat::identity(n);
        for k in 0..n {
            let (pivot_row, pivot) = (k..n)
                .map(|i| (i, a[(i, k)].abs()))
                .max_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap();
            if pivot < 1e-13 {
                return None;
            }
            if pivot_row != k {
                for j in 0..n {
                    let tmp = a[(k, j)];
                    a[(k, j)] = a[(pivot_row, j)];
                    a[(pivot_row, j)] = tmp;
                    let tmp = inv[(k, j)];
                    inv[(k, j)] = inv[(pivot_row, j)];
                    inv[(pivot_row, j)] = tmp;
                }
            }
            let d = a[(k, k)];
            for j in 0..n {
                a[(k, j)] /= d;
                inv[(k, j)] /= d;
            }
            for i in 0..n {
                if i == k {
                    continue;
                }
                let factor = a[(i, k)];
                if factor == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[(i, j)] -= factor * a[(k, j)];
                    inv[(i, j)] -= factor * inv[(k, j)];
                }
            }
        }
        Some(inv)
    }

    /// `|| M^T M - I ||_inf`, the deviation from orthogonality.
    pub fn orthogonality_defect(&self) -> f64 {
        self.transpose().matmul(self).sub(&RMat::identity(self.cols)).norm_inf()
    }
}

impl Index<(usize, usize)> for RMat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        assert!(i < self.rows && j < self.cols, "index out of bounds");
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for RMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        assert!(i < self.rows && j < self.cols, "index out of bounds");
        &mut self.data[i * self.cols + j]
    }
}

/// Average of a family of matrices; for the matrices of a group action this
/// is the orthogonal projection onto the jointly fixed subspace.
pub fn average(mats: &[RMat]) -> RMat {
    assert!(!mats.is_empty());
    let mut acc = RMat::zeros(mats[0].rows, mats[0].cols);
    for m in mats {
        acc = acc.add(m);
    }
    acc.scale(1.0 / mats.len() as f64)
}

/// Orthonormal basis for the span of `vectors`, by pivoted Gram-Schmidt.
/// Deterministic: at every step the remaining vector of largest norm is
/// selected. Vectors with residual norm below `tol` are discarded.
pub fn orthonormal_span(vectors: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let mut pool: Vec<Vec<f64>> = vectors.to_vec();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    loop {
        let Some((best, norm)) = pool
            .iter()
            .enumerate()
            .map(|(i, v)| (i, dot(v, v).sqrt()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
        else {
            break;
        };
        if norm <= tol {
            break;
        }
        let mut v = pool.swap_remove(best);
        for b in &basis {
            let c = dot(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
        let n = dot(&v, &v).sqrt();
        if n <= tol {
            continue;
        }
        for x in v.iter_mut() {
            *x /= n;
        }
        basis.push(v);
    }
    basis
}

/// Orthonormal basis of the subspace fixed by every matrix in `mats`
/// (computed as the column space of the averaging projection).
pub fn fixed_subspace(mats: &[RMat], tol: f64) -> Vec<Vec<f64>> {
    let p = average(mats);
    let cols: Vec<Vec<f64>> = (0..p.cols).map(|j| p.col(j)).collect();
    orthonormal_span(&cols, tol)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Sign of a permutation of `0..n` given as an index array (+1.0 or -1.0).
pub fn permutation_sign(perm: &[usize]) -> f64 {
    let mut inversions = 0usize;
    for i in 0..perm.len() {
        for j in (i + 1)..perm.len() {
            if perm[i] > perm[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}
