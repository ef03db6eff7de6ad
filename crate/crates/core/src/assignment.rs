//! Row-matching cost matrices and an exact Hungarian solver.
//!
//! The row-permutation problem `min_P ‖P·W1 − W2‖_F²` is an assignment
//! problem over the pairwise squared distances between rows of `W1` and rows
//! of `W2`: expanding the norm leaves `‖W1‖² + ‖W2‖² + tr(P·K)` with
//! `K = −2·W1·W2ᵀ`, and only the trace term depends on `P`.

use std::fmt;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::svd::dot;

/// Bijective index map; as a matrix it gathers rows, `(P·X)[i] = X[map[i]]`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PermutationVec {
    map: Vec<usize>,
}

impl PermutationVec {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &p in &map {
            if p >= map.len() || seen[p] {
                return Err(Error::Validation(format!(
                    "index vector of length {} is not a permutation (bad entry {p})",
                    map.len()
                )));
            }
            seen[p] = true;
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &p) in self.map.iter().enumerate() {
            inv[p] = i;
        }
        Self { map: inv }
    }

    /// `i ↦ self(other(i))`; as matrices this is `other·self` under the
    /// row-gather convention.
    pub fn compose(&self, other: &PermutationVec) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "cannot compose permutations of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Self {
            map: other.map.iter().map(|&i| self.map[i]).collect(),
        })
    }

    /// `out[i] = x[map[i]]`.
    pub fn gather<T: Copy>(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.map.len());
        self.map.iter().map(|&p| x[p]).collect()
    }

    /// `out[map[i]] = x[i]`, the inverse of [`gather`](Self::gather).
    pub fn scatter<T: Copy + Default>(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.map.len());
        let mut out = vec![T::default(); x.len()];
        for (i, &p) in self.map.iter().enumerate() {
            out[p] = x[i];
        }
        out
    }

    /// `P·M`: rows gathered.
    pub fn permute_rows(&self, m: &DenseMatrix) -> DenseMatrix {
        assert_eq!(m.rows(), self.len(), "row permutation length");
        DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(self.map[i], j)])
    }

    /// `M·C`: columns gathered, `(M·C)[:, j] = M[:, map[j]]`.
    pub fn permute_cols(&self, m: &DenseMatrix) -> DenseMatrix {
        assert_eq!(m.cols(), self.len(), "column permutation length");
        DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, self.map[j])])
    }
}

impl fmt::Debug for PermutationVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Perm{:?}", self.map)
    }
}

/// Row-distance used for the assignment costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostKind {
    /// `Σ_k (W1[i][k] − W2[j][k])²`; the only form equivalent to the
    /// Frobenius objective.
    #[default]
    SquaredL2,
    /// `Σ_k |W1[i][k] − W2[j][k]|`.
    L1,
}

/// Square, finite assignment cost matrix. Need not be symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(DenseMatrix);

impl CostMatrix {
    pub fn new(d: DenseMatrix) -> Result<Self> {
        if d.rows() != d.cols() {
            return Err(Error::Validation(format!(
                "cost matrix must be square, got {}x{}",
                d.rows(),
                d.cols()
            )));
        }
        if !d.is_finite() {
            return Err(Error::Validation("cost matrix has non-finite entries".into()));
        }
        Ok(Self(d))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    /// `Σᵢ D[i][perm(i)]`, summed in row order.
    pub fn cost_of(&self, perm: &PermutationVec) -> f64 {
        (0..self.n()).map(|i| self.0[(i, perm.get(i))]).sum()
    }
}

pub fn build_cost_matrix(w1: &DenseMatrix, w2: &DenseMatrix) -> Result<CostMatrix> {
    build_cost_matrix_with(w1, w2, CostKind::SquaredL2)
}

pub fn build_cost_matrix_with(w1: &DenseMatrix, w2: &DenseMatrix, kind: CostKind) -> Result<CostMatrix> {
    if w1.shape() != w2.shape() {
        return Err(Error::Shape(format!(
            "cost matrix operands differ: {}x{} vs {}x{}",
            w1.rows(),
            w1.cols(),
            w2.rows(),
            w2.cols()
        )));
    }
    let n = w1.rows();
    let mut d = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let a = w1.row(i);
        for j in 0..n {
            let b = w2.row(j);
            d[(i, j)] = match kind {
                CostKind::SquaredL2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
                CostKind::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            };
        }
    }
    CostMatrix::new(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Row `i` is assigned to column `perm(i)`.
    pub perm: PermutationVec,
    pub objective: f64,
}

/// Minimum-cost perfect assignment by shortest augmenting paths with dual
/// potentials, O(n³). Rows are inserted in order; among equal reduced costs
/// the smallest column index wins, so results are deterministic.
pub fn hungarian(d: &CostMatrix) -> Assignment {
    let n = d.n();
    let cost = d.matrix();
    // 1-based with a virtual column 0 holding the row being inserted.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = cost.row(i0 - 1);
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut map = vec![0usize; n];
    for j in 1..=n {
        map[owner[j] - 1] = j - 1;
    }
    let perm = PermutationVec { map };
    let objective = d.cost_of(&perm);
    Assignment { perm, objective }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowMatch {
    /// Gather vector: `(P·W1)[i] = W1[perm(i)]`.
    pub perm: PermutationVec,
    /// `‖P·W1 − W2‖_F²` at the returned permutation.
    pub objective: f64,
}

/// Row permutation of `w1` that best matches `w2` in Frobenius norm.
pub fn solve_row_permutation(w1: &DenseMatrix, w2: &DenseMatrix) -> Result<RowMatch> {
    let d = build_cost_matrix(w1, w2)?;
    // Assignment sends row i of w1 to row σ(i) of w2; the gather vector is σ⁻¹.
    let perm = hungarian(&d).perm.inverse();
    let objective = permuted_distance_sq(&perm, w1, w2);
    Ok(RowMatch { perm, objective })
}

/// `‖P·W1 − W2‖_F²` without forming `P·W1`.
pub fn permuted_distance_sq(perm: &PermutationVec, w1: &DenseMatrix, w2: &DenseMatrix) -> f64 {
    (0..w2.rows())
        .map(|i| {
            w1.row(perm.get(i))
                .iter()
                .zip(w2.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

/// `tr(P·K)` with `K = −2·W1·W2ᵀ`, i.e. `−2 Σᵢ ⟨W1[perm(i)], W2[i]⟩`.
pub fn trace_objective(perm: &PermutationVec, w1: &DenseMatrix, w2: &DenseMatrix) -> Result<f64> {
    if w1.shape() != w2.shape() || perm.len() != w1.rows() {
        return Err(Error::Shape(format!(
            "trace objective needs equal shapes and a length-{} permutation, got {}x{}, {}x{}, {}",
            w1.rows(),
            w1.rows(),
            w1.cols(),
            w2.rows(),
            w2.cols(),
            perm.len()
        )));
    }
    Ok(-2.0 * (0..w1.rows()).map(|i| dot(w1.row(perm.get(i)), w2.row(i))).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn permutation_algebra() {
        let p = PermutationVec::new(vec![2, 0, 1]).unwrap();
        let inv = p.inverse();
        assert!(p.compose(&inv).unwrap().is_identity());
        assert!(inv.compose(&p).unwrap().is_identity());
        assert_eq!(p.gather(&[10, 20, 30]), vec![30, 10, 20]);
        assert_eq!(p.scatter(&p.gather(&[10, 20, 30])), vec![10, 20, 30]);
        assert!(PermutationVec::new(vec![0, 0, 1]).is_err());
        assert!(PermutationVec::new(vec![0, 3]).is_err());
    }

    #[test]
    fn self_distance_diagonal_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = DenseMatrix::random(5, 3, &mut rng);
        let d = build_cost_matrix(&w, &w).unwrap();
        assert!((0..5).all(|i| d.matrix()[(i, i)] == 0.0));
    }

    #[test]
    fn scalar_cost() {
        let d = build_cost_matrix(&DenseMatrix::from_rows(&[&[0.0]]), &DenseMatrix::from_rows(&[&[3.0]])).unwrap();
        assert_eq!(d.matrix()[(0, 0)], 9.0);
        let d1 = build_cost_matrix_with(
            &DenseMatrix::from_rows(&[&[0.0, 1.0]]),
            &DenseMatrix::from_rows(&[&[3.0, -1.0]]),
            CostKind::L1,
        )
        .unwrap();
        assert_eq!(d1.matrix()[(0, 0)], 5.0);
    }

    #[test]
    fn cost_matrix_shape_errors() {
        assert!(matches!(
            build_cost_matrix(&DenseMatrix::zeros(2, 3), &DenseMatrix::zeros(3, 2)),
            Err(Error::Shape(_))
        ));
        assert!(matches!(CostMatrix::new(DenseMatrix::zeros(2, 3)), Err(Error::Validation(_))));
        let mut bad = DenseMatrix::zeros(2, 2);
        bad[(0, 1)] = f64::NAN;
        assert!(matches!(CostMatrix::new(bad), Err(Error::Validation(_))));
    }

    #[test]
    fn identity_cost_forces_identity() {
        let d = CostMatrix::new(DenseMatrix::from_fn(5, 5, |i, j| if i == j { 0.0 } else { 1.0 })).unwrap();
        let a = hungarian(&d);
        assert!(a.perm.is_identity());
        assert_eq!(a.objective, 0.0);
    }

    #[test]
    fn two_by_two_enumerated() {
        // identity costs 4+3 = 7, swap costs 1+2 = 3
        let d = CostMatrix::new(DenseMatrix::from_rows(&[&[4.0, 1.0], &[2.0, 3.0]])).unwrap();
        let a = hungarian(&d);
        assert_eq!(a.perm.as_slice(), &[1, 0]);
        assert_eq!(a.objective, 3.0);
    }

    #[test]
    fn ties_are_deterministic() {
        let d = CostMatrix::new(DenseMatrix::from_fn(6, 6, |_, _| 2.5)).unwrap();
        let a = hungarian(&d);
        assert!(a.perm.is_identity());
        assert_eq!(hungarian(&d), a);
    }

    #[test]
    fn planted_row_shuffle_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w1 = DenseMatrix::random(7, 3, &mut rng);
        let mut map: Vec<usize> = (0..7).collect();
        map.shuffle(&mut rng);
        let planted = PermutationVec::new(map).unwrap();
        let w2 = planted.permute_rows(&w1);
        let m = solve_row_permutation(&w1, &w2).unwrap();
        assert_eq!(m.perm, planted);
        assert_eq!(m.objective, 0.0);

        let fixed = solve_row_permutation(&w1, &w1).unwrap();
        assert!(fixed.perm.is_identity());
    }

    #[test]
    fn trace_identity_algebra() {
        let i2 = DenseMatrix::identity(2);
        let id = PermutationVec::identity(2);
        let t = trace_objective(&id, &i2, &i2).unwrap();
        assert_eq!(t, -4.0);
        assert_eq!(t + 2.0 + 2.0, permuted_distance_sq(&id, &i2, &i2));
        assert!(trace_objective(&PermutationVec::identity(3), &i2, &i2).is_err());
    }
}
