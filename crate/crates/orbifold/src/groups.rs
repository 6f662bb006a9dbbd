//! Finite groups acting orthogonally on charts.
//!
//! A chart group is a list of abstract elements, each carrying an orthogonal
//! matrix for its action on the chart. The action need *not* be faithful:
//! several elements may carry the same matrix (that is exactly how unreduced
//! structures arise), in which case the multiplication table must be given
//! explicitly. When the matrices are pairwise distinct the table is derived
//! by matching products against the element list.
//!
//! All structural facts downstream (conjugacy classes, centralizers,
//! kernels, generated subgroups) are exact: they are computed on the integer
//! multiplication table, never by comparing floating-point matrices.

use crate::linalg::RMat;
use crate::report::Report;
use crate::TOL_MATRIX;

/// An abstract finite group together with its action on a chart.
#[derive(Debug, Clone)]
pub struct FiniteGroup {
    base: Vec<RMat>,
    /// Row-major: `table[i * n + j]` is the index of `g_i * g_j`.
    table: Vec<usize>,
    inv: Vec<usize>,
    identity: usize,
    dim: usize,
}

impl FiniteGroup {
    /// Validate `base` (with an optional explicit multiplication table) and
    /// construct the group. All violations are recorded in the report; the
    /// group is returned only when every check passes.
    pub fn analyze(base: Vec<RMat>, table: Option<Vec<Vec<usize>>>) -> (Report, Option<FiniteGroup>) {
        let mut report = Report::new("group");
        let n = base.len();
        if n == 0 {
            report.boolean("nonempty", false, "a chart group must contain at least the identity");
            return (report, None);
        }
        let dim = base[0].rows;
        if base.iter().any(|m| m.rows != dim || m.cols != dim) {
            report.boolean("dimensions", false, "all element matrices must be square of equal size");
            return (report, None);
        }

        let worst_orth = base.iter().map(RMat::orthogonality_defect).fold(0.0, f64::max);
        report.numeric("orthogonal", worst_orth, TOL_MATRIX, "max ||g^T g - I|| over elements");

        let table = match table {
            Some(t) => {
                if !Self::check_explicit_table(&mut report, &base, &t) {
                    return (report, None);
                }
                t.into_iter().flatten().collect::<Vec<usize>>()
            }
            None => match Self::derive_table(&mut report, &base) {
                Some(t) => t,
                None => return (report, None),
            },
        };

        // Identity: the unique two-sided unit of the table.
        let identity = (0..n).find(|&e| (0..n).all(|j| table[e * n + j] == j && table[j * n + e] == j));
        let Some(identity) = identity else {
            report.boolean("identity", false, "multiplication table has no two-sided identity");
            return (report, None);
        };
        let id_defect = base[identity].sub(&RMat::identity(dim)).norm_inf();
        report.numeric("identity-matrix", id_defect, TOL_MATRIX, "identity element must act as I");

        // Latin square property gives inverses; verify rather than assume.
        let mut inv = vec![usize::MAX; n];
        for i in 0..n {
            match (0..n).find(|&j| table[i * n + j] == identity && table[j * n + i] == identity) {
                Some(j) => inv[i] = j,
                None => {
                    report.boolean("inverses", false, format!("element {i} has no two-sided inverse"));
                    return (report, None);
                }
            }
        }
        report.boolean("inverses", true, "");

        let g = FiniteGroup { base, table, inv, identity, dim };
        if report.passed() {
            (report, Some(g))
        } else {
            (report, None)
        }
    }

    fn check_explicit_table(report: &mut Report, base: &[RMat], t: &[Vec<usize>]) -> bool {
        let n = base.len();
        if t.len() != n || t.iter().any(|row| row.len() != n) {
            report.boolean("table-shape", false, format!("table must be {n}x{n}"));
            return false;
        }
        if t.iter().flatten().any(|&k| k >= n) {
            report.boolean("table-entries", false, "table entry out of range");
            return false;
        }
        // Latin square: each row and column is a permutation.
        for i in 0..n {
            let mut row = vec![false; n];
            let mut col = vec![false; n];
            for j in 0..n {
                row[t[i][j]] = true;
                col[t[j][i]] = true;
            }
            if !(row.iter().all(|&b| b) && col.iter().all(|&b| b)) {
                report.boolean(
                    "table-cancellation",
                    false,
                    format!("row/column {i} of the table is not a permutation"),
                );
                return false;
            }
        }
        let mut assoc_ok = true;
        'outer: for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if t[t[i][j]][k] != t[i][t[j][k]] {
                        report.boolean(
                            "table-associativity",
                            false,
                            format!("({i}*{j})*{k} != {i}*({j}*{k})"),
                        );
                        assoc_ok = false;
                        break 'outer;
                    }
                }
            }
        }
        if assoc_ok {
            report.boolean("table-associativity", true, "");
        }
        // The matrices must represent the table.
        let mut worst = 0f64;
        for i in 0..n {
            for j in 0..n {
                let defect = base[i].matmul(&base[j]).sub(&base[t[i][j]]).norm_inf();
                worst = worst.max(defect);
            }
        }
        report.numeric("action-represents-table", worst, TOL_MATRIX, "max ||g_i g_j - g_{ij}||");
        assoc_ok
    }

    /// Derive the table by matching products against the element list. Only
    /// sound when matrices are pairwise distinct, which is checked first.
    fn derive_table(report: &mut Report, base: &[RMat]) -> Option<Vec<usize>> {
        let n = base.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if base[i].sub(&base[j]).norm_inf() <= TOL_MATRIX {
                    report.boolean(
                        "distinct-elements",
                        false,
                        format!(
                            "elements {i} and {j} have the same matrix; supply an explicit \
                             multiplication table for non-faithful actions"
                        ),
                    );
                    return None;
                }
            }
        }
        let mut table = vec![0usize; n * n];
        let mut worst = 0f64;
        for i in 0..n {
            for j in 0..n {
                let prod = base[i].matmul(&base[j]);
                let (k, defect) = (0..n)
                    .map(|k| (k, prod.sub(&base[k]).norm_inf()))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap();
                if defect > TOL_MATRIX {
                    report.boolean(
                        "closure",
                        false,
                        format!("product of elements {i} and {j} is not in the list (off by {defect:.3e})"),
                    );
                    return None;
                }
                worst = worst.max(defect);
                table[i * n + j] = k;
            }
        }
        report.numeric("closure", worst, TOL_MATRIX, "max distance from a product to its match");
        Some(table)
    }

    pub fn order(&self) -> usize {
        self.base.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    pub fn matrix(&self, i: usize) -> &RMat {
        &self.base[i]
    }

    pub fn matrices(&self) -> &[RMat] {
        &self.base
    }

    pub fn mul(&self, i: usize, j: usize) -> usize {
        self.table[i * self.order() + j]
    }

    pub fn inverse(&self, i: usize) -> usize {
        self.inv[i]
    }

    /// Order of the element `g_i` in the group.
    pub fn element_order(&self, i: usize) -> usize {
        let mut k = 1;
        let mut cur = i;
        while cur != self.identity {
            cur = self.mul(cur, i);
            k += 1;
        }
        k
    }

    /// Conjugacy classes as sorted index lists, ordered by smallest member.
    pub fn conjugacy_classes(&self) -> Vec<Vec<usize>> {
        let n = self.order();
        let mut seen = vec![false; n];
        let mut classes = Vec::new();
        for i in 0..n {
            if seen[i] {
                continue;
            }
            let mut class: Vec<usize> = (0..n)
                .map(|h| self.mul(self.mul(h, i), self.inv[h]))
                .collect();
            class.sort_unstable();
            class.dedup();
            for &c in &class {
                seen[c] = true;
            }
            classes.push(class);
        }
        classes
    }

    /// Index of the conjugacy class containing `g_i` (in the order produced
    /// by [`Self::conjugacy_classes`]).
    pub fn class_of(&self, i: usize) -> usize {
        self.conjugacy_classes()
            .iter()
            .position(|c| c.contains(&i))
            .expect("element is in some class")
    }

    pub fn centralizer(&self, i: usize) -> Vec<usize> {
        (0..self.order()).filter(|&h| self.mul(h, i) == self.mul(i, h)).collect()
    }

    /// Closure of a generating set, as a sorted index list.
    pub fn subgroup_generated(&self, generators: &[usize]) -> Vec<usize> {
        let mut members = vec![false; self.order()];
        members[self.identity] = true;
        let mut frontier = vec![self.identity];
        while let Some(h) = frontier.pop() {
            for &g in generators {
                for next in [self.mul(h, g), self.mul(g, h)] {
                    if !members[next] {
                        members[next] = true;
                        frontier.push(next);
                    }
                }
            }
        }
        (0..self.order()).filter(|&i| members[i]).collect()
    }

    /// If the subset (which must be a subgroup) is cyclic, return its order.
    pub fn cyclic_subgroup_order(&self, subgroup: &[usize]) -> Option<usize> {
        let closed = subgroup
            .iter()
            .all(|&i| subgroup.iter().all(|&j| subgroup.contains(&self.mul(i, j))));
        if !closed {
            return None;
        }
        subgroup
            .iter()
            .any(|&i| self.element_order(i) == subgroup.len())
            .then_some(subgroup.len())
    }

    /// Find the index of an element whose matrix matches `m`, if any.
    pub fn find_matrix(&self, m: &RMat, tol: f64) -> Option<usize> {
        let (best, defect) = (0..self.order())
            .map(|i| (i, self.base[i].sub(m).norm_inf()))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        (defect <= tol).then_some(best)
    }
}

/// A homomorphism between chart groups, stored as the image index of each
/// source element.
#[derive(Debug, Clone)]
pub struct Hom {
    pub map: Vec<usize>,
}

impl Hom {
    /// Check the homomorphism property and (as required for injections of
    /// charts) injectivity. Exact: works on multiplication tables.
    pub fn validate(&self, src: &FiniteGroup, dst: &FiniteGroup) -> Report {
        let mut report = Report::new("hom");
        if self.map.len() != src.order() {
            report.boolean(
                "shape",
                false,
                format!("map has {} entries for a group of order {}", self.map.len(), src.order()),
            );
            return report;
        }
        if self.map.iter().any(|&t| t >= dst.order()) {
            report.boolean("shape", false, "image index out of range");
            return report;
        }
        report.boolean("shape", true, "");
        let hom_ok = (0..src.order()).all(|i| {
            (0..src.order())
                .all(|j| self.map[src.mul(i, j)] == dst.mul(self.map[i], self.map[j]))
        });
        report.boolean("multiplicative", hom_ok, "lambda(gh) must equal lambda(g)lambda(h)");
        let mut image = self.map.clone();
        image.sort_unstable();
        image.dedup();
        report.boolean("injective", image.len() == self.map.len(), "distinct elements must map to distinct images");
        report
    }

    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }
}

/// A second orthogonal action of a group (e.g. on bundle fibers), aligned
/// with the element order of its [`FiniteGroup`].
#[derive(Debug, Clone)]
pub struct Representation {
    pub mats: Vec<RMat>,
}

impl Representation {
    pub fn dim(&self) -> usize {
        self.mats.first().map_or(0, |m| m.rows)
    }

    pub fn validate(&self, group: &FiniteGroup) -> Report {
        let mut report = Report::new("representation");
        if self.mats.len() != group.order() {
            report.boolean(
                "shape",
                false,
                format!("{} matrices for a group of order {}", self.mats.len(), group.order()),
            );
            return report;
        }
        let k = self.dim();
        if self.mats.iter().any(|m| m.rows != k || m.cols != k) {
            report.boolean("shape", false, "fiber matrices must be square of equal size");
            return report;
        }
        report.boolean("shape", true, "");
        let worst_orth = self.mats.iter().map(RMat::orthogonality_defect).fold(0.0, f64::max);
        report.numeric("orthogonal", worst_orth, TOL_MATRIX, "max ||r^T r - I||");
        let mut worst = self.mats[group.identity()].sub(&RMat::identity(k)).norm_inf();
        for i in 0..group.order() {
            for j in 0..group.order() {
                let defect = self.mats[i]
                    .matmul(&self.mats[j])
                    .sub(&self.mats[group.mul(i, j)])
                    .norm_inf();
                worst = worst.max(defect);
            }
        }
        report.numeric("multiplicative", worst, TOL_MATRIX, "max ||r_i r_j - r_{ij}||");
        report
    }

    /// Elements acting as the identity, i.e. the kernel of this action.
    pub fn kernel(&self, group: &FiniteGroup) -> Vec<usize> {
        let k = self.dim();
        let id = RMat::identity(k);
        (0..group.order())
            .filter(|&i| self.mats[i].sub(&id).norm_inf() <= TOL_MATRIX)
            .collect()
    }
}

/// Rotation of the plane by `theta`.
pub fn rotation2(theta: f64) -> RMat {
    let (s, c) = theta.sin_cos();
    RMat::from_rows(vec![vec![c, -s], vec![s, c]])
}

/// The cyclic group of planar rotations of order `m`.
pub fn cyclic_rotations2(m: usize) -> Vec<RMat> {
    (0..m)
        .map(|k| rotation2(2.0 * std::f64::consts::PI * k as f64 / m as f64))
        .collect()
}

/// The multiplication table of the cyclic group of order `m`.
pub fn cyclic_table(m: usize) -> Vec<Vec<usize>> {
    (0..m).map(|i| (0..m).map(|j| (i + j) % m).collect()).collect()
}

/// Build a validated group, panicking on invalid input (constructor for
/// code-defined groups; document-loaded groups go through [`FiniteGroup::analyze`]).
pub fn group_from_matrices(base: Vec<RMat>) -> FiniteGroup {
    let (report, g) = FiniteGroup::analyze(base, None);
    g.unwrap_or_else(|| panic!("invalid group:\n{report}"))
}

/// Build a validated group with an explicit table (for non-faithful actions).
pub fn group_from_table(base: Vec<RMat>, table: Vec<Vec<usize>>) -> FiniteGroup {
    let (report, g) = FiniteGroup::analyze(base, Some(table));
    g.unwrap_or_else(|| panic!("invalid group:\n{report}"))
}

/// The trivial group acting on a chart of dimension `dim`.
pub fn trivial_group(dim: usize) -> FiniteGroup {
    group_from_matrices(vec![RMat::identity(dim)])
}

/// Cyclic group of order `m` acting trivially on a chart of dimension `dim`
/// (the base action has full kernel; the structure lives in the table).
pub fn cyclic_trivial_action(m: usize, dim: usize) -> FiniteGroup {
    group_from_table(vec![RMat::identity(dim); m], cyclic_table(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s3_permutation_matrices() -> Vec<RMat> {
        // All six 3x3 permutation matrices.
        let perms: [[usize; 3]; 6] =
            [[0, 1, 2], [1, 0, 2], [0, 2, 1], [2, 1, 0], [1, 2, 0], [2, 0, 1]];
        perms
            .iter()
            .map(|p| RMat::from_fn(3, 3, |i, j| if p[j] == i { 1.0 } else { 0.0 }))
            .collect()
    }

    #[test]
    fn cyclic_rotation_group_derives_its_table() {
        let g = group_from_matrices(cyclic_rotations2(4));
        assert_eq!(g.order(), 4);
        assert_eq!(g.element_order(1), 4);
        assert_eq!(g.mul(1, 3), g.identity());
        assert_eq!(g.inverse(1), 3);
        // Abelian: four singleton classes.
        assert_eq!(g.conjugacy_classes().len(), 4);
        assert_eq!(g.cyclic_subgroup_order(&[0, 1, 2, 3]), Some(4));
    }

    #[test]
    fn symmetric_group_structure() {
        let g = group_from_matrices(s3_permutation_matrices());
        assert_eq!(g.order(), 6);
        let classes = g.conjugacy_classes();
        let mut sizes: Vec<usize> = classes.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 2, 3]);
        // Centralizer orders: |C(g)| * |class(g)| = |G|.
        for class in &classes {
            for &i in class {
                assert_eq!(g.centralizer(i).len() * class.len(), 6);
            }
        }
        // Generated subgroups: a transposition gives order 2, a 3-cycle order 3.
        let transposition = (0..6).find(|&i| g.element_order(i) == 2).unwrap();
        assert_eq!(g.subgroup_generated(&[transposition]).len(), 2);
        let three_cycle = (0..6).find(|&i| g.element_order(i) == 3).unwrap();
        assert_eq!(g.subgroup_generated(&[three_cycle]).len(), 3);
        // S3 is not cyclic.
        assert_eq!(g.cyclic_subgroup_order(&(0..6).collect::<Vec<_>>()), None);
    }

    #[test]
    fn non_faithful_actions_need_a_table() {
        let mats = vec![RMat::identity(2); 3];
        let (report, g) = FiniteGroup::analyze(mats, None);
        assert!(g.is_none());
        assert!(!report.passed());

        let g = cyclic_trivial_action(3, 2);
        assert_eq!(g.order(), 3);
        assert_eq!(g.element_order(1), 3);
        // The whole group is the kernel of the base action.
        let base_rep = Representation { mats: g.matrices().to_vec() };
        assert_eq!(base_rep.kernel(&g), vec![0, 1, 2]);
    }

    #[test]
    fn closure_violations_are_reported() {
        // Two rotations whose product is missing from the list.
        let mats = vec![rotation2(0.0), rotation2(2.0 * std::f64::consts::PI / 3.0)];
        let (report, g) = FiniteGroup::analyze(mats, None);
        assert!(g.is_none());
        assert!(report.failures().any(|c| c.name == "closure"));
    }

    #[test]
    fn bad_tables_are_rejected() {
        // Left-multiplication not cancellative.
        let t = vec![vec![0, 0], vec![1, 1]];
        let (report, g) = FiniteGroup::analyze(vec![RMat::identity(1); 2], Some(t));
        assert!(g.is_none());
        assert!(report.failures().any(|c| c.name == "table-cancellation"));
        // Latin square that is not associative: exists only at order >= 5;
        // instead check a table inconsistent with its matrices.
        let t = cyclic_table(2);
        let mats = vec![RMat::identity(1), RMat::from_rows(vec![vec![0.5]])];
        let (report, g) = FiniteGroup::analyze(mats, Some(t));
        assert!(g.is_none());
        assert!(!report.passed());
    }

    #[test]
    fn hom_validation() {
        let z3 = cyclic_trivial_action(3, 1);
        let s3 = group_from_matrices(s3_permutation_matrices());
        let three_cycle = (0..6).find(|&i| s3.element_order(i) == 3).unwrap();
        let sq = s3.mul(three_cycle, three_cycle);
        let good = Hom { map: vec![s3.identity(), three_cycle, sq] };
        assert!(good.validate(&z3, &s3).passed());
        let not_injective = Hom { map: vec![s3.identity(); 3] };
        assert!(!not_injective.validate(&z3, &s3).passed());
        let not_multiplicative = Hom {
            map: vec![s3.identity(), three_cycle, three_cycle],
        };
        assert!(!not_multiplicative.validate(&z3, &s3).passed());
    }

    #[test]
    fn find_matrix_locates_elements() {
        let g = group_from_matrices(cyclic_rotations2(3));
        let m = rotation2(2.0 * std::f64::consts::PI / 3.0);
        assert_eq!(g.find_matrix(&m, 1e-10), Some(1));
        assert_eq!(g.find_matrix(&rotation2(0.3), 1e-10), None);
    }
}
