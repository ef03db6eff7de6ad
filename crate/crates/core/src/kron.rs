//! Kronecker-product kernels.
//!
//! All vectorisations are row-major, matching [`DenseMatrix`] storage: for
//! `A` m1 x n1 and `B` m2 x n2, entry `((i1*m2 + i2), (j1*n2 + j2))` of
//! `A ⊗ B` is `A[i1][j1] * B[i2][j2]`.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::svd::truncated_svd;

/// Singular values below this fraction of the leading one produce zero terms.
pub const DEGENERATE_RATIO: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KronShape {
    pub m1: usize,
    pub n1: usize,
    pub m2: usize,
    pub n2: usize,
}

impl KronShape {
    pub fn new(m1: usize, n1: usize, m2: usize, n2: usize) -> Self {
        Self { m1, n1, m2, n2 }
    }

    pub fn rows(&self) -> usize {
        self.m1 * self.m2
    }

    pub fn cols(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn max_rank(&self) -> usize {
        (self.m1 * self.n1).min(self.m2 * self.n2)
    }

    /// Multiply-accumulate count of one compressed matvec at `rank`.
    pub fn matvec_macs(&self, rank: usize) -> u64 {
        let (m1, n1, m2, n2) = (self.m1 as u64, self.n1 as u64, self.m2 as u64, self.n2 as u64);
        rank as u64 * (m2 * n2 * n1 + m1 * n1 * m2)
    }

    pub fn check_matrix(&self, w: &DenseMatrix) -> Result<()> {
        if w.shape() != (self.rows(), self.cols()) {
            return Err(Error::Shape(format!(
                "matrix is {}x{} but the split ({}x{}) ⊗ ({}x{}) needs {}x{}",
                w.rows(),
                w.cols(),
                self.m1,
                self.n1,
                self.m2,
                self.n2,
                self.rows(),
                self.cols()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KronFactorPair {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
}

impl KronFactorPair {
    pub fn new(a: DenseMatrix, b: DenseMatrix) -> Self {
        Self { a, b }
    }

    pub fn shape(&self) -> KronShape {
        KronShape::new(self.a.rows(), self.a.cols(), self.b.rows(), self.b.cols())
    }
}

/// `Σᵢ Aᵢ ⊗ Bᵢ` with a common factor shape.
#[derive(Debug, Clone, PartialEq)]
pub struct KronSum {
    terms: Vec<KronFactorPair>,
}

impl KronSum {
    pub fn new(terms: Vec<KronFactorPair>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Validation("a Kronecker sum needs at least one term".into()))?
            .shape();
        if let Some(bad) = terms.iter().position(|t| t.shape() != first) {
            return Err(Error::Shape(format!(
                "term {bad} has shape {:?}, expected {first:?}",
                terms[bad].shape()
            )));
        }
        Ok(Self { terms })
    }

    pub fn single(a: DenseMatrix, b: DenseMatrix) -> Self {
        Self {
            terms: vec![KronFactorPair::new(a, b)],
        }
    }

    pub fn shape(&self) -> KronShape {
        self.terms[0].shape()
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[KronFactorPair] {
        &self.terms
    }

    pub fn terms_mut(&mut self) -> &mut [KronFactorPair] {
        &mut self.terms
    }

    pub fn parameter_count(&self) -> usize {
        let s = self.shape();
        self.rank() * (s.m1 * s.n1 + s.m2 * s.n2)
    }

    /// Entry `(i, j)` of the dense sum without materialising it.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let s = self.shape();
        let (i1, i2, j1, j2) = (i / s.m2, i % s.m2, j / s.n2, j % s.n2);
        self.terms.iter().map(|t| t.a[(i1, j1)] * t.b[(i2, j2)]).sum()
    }
}

fn check_split(w: &DenseMatrix, shape: KronShape) -> Result<()> {
    if [shape.m1, shape.n1, shape.m2, shape.n2].contains(&0) {
        return Err(Error::Shape("factor dimensions must be positive".into()));
    }
    shape.check_matrix(w)
}

/// Block rearrangement `R(W)`, shape `(m1*n1) x (m2*n2)`: row `i1*n1 + j1`
/// holds the `m2 x n2` block at block position `(i1, j1)`, flattened
/// row-major. `‖W − A⊗B‖_F = ‖R(W) − vec(A) vec(B)ᵀ‖_F`.
pub fn rearrange(w: &DenseMatrix, shape: KronShape) -> Result<DenseMatrix> {
    check_split(w, shape)?;
    let KronShape { m1, n1, m2, n2 } = shape;
    let mut out = DenseMatrix::zeros(m1 * n1, m2 * n2);
    for i1 in 0..m1 {
        for j1 in 0..n1 {
            let dst = out.row_mut(i1 * n1 + j1);
            for i2 in 0..m2 {
                let src = &w.row(i1 * m2 + i2)[j1 * n2..(j1 + 1) * n2];
                dst[i2 * n2..(i2 + 1) * n2].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`rearrange`].
pub fn unrearrange(r: &DenseMatrix, shape: KronShape) -> Result<DenseMatrix> {
    let KronShape { m1, n1, m2, n2 } = shape;
    if r.shape() != (m1 * n1, m2 * n2) {
        return Err(Error::Shape(format!(
            "rearranged matrix is {}x{}, expected {}x{}",
            r.rows(),
            r.cols(),
            m1 * n1,
            m2 * n2
        )));
    }
    let mut w = DenseMatrix::zeros(m1 * m2, n1 * n2);
    for i1 in 0..m1 {
        for j1 in 0..n1 {
            let src = r.row(i1 * n1 + j1);
            for i2 in 0..m2 {
                w.row_mut(i1 * m2 + i2)[j1 * n2..(j1 + 1) * n2]
                    .copy_from_slice(&src[i2 * n2..(i2 + 1) * n2]);
            }
        }
    }
    Ok(w)
}

/// Output of [`nearest_kron`].
#[derive(Debug, Clone)]
pub struct NearestKron {
    pub sum: KronSum,
    /// `‖W − Σ Aᵢ⊗Bᵢ‖_F`, evaluated directly.
    pub residual: f64,
    /// Leading singular values of `R(W)` that produced the terms.
    pub singular_values: Vec<f64>,
    /// Number of trailing terms that were zero-filled as degenerate.
    pub degenerate_terms: usize,
}

/// Best rank-`rank` Kronecker-sum approximation of `w` for the given split.
///
/// The terms come from the leading singular triplets of `R(W)` with the
/// singular value split evenly, `Aᵢ = √σᵢ·reshape(uᵢ)`, `Bᵢ = √σᵢ·reshape(vᵢ)`.
/// Signs are fixed so that the first entry of each `vec(Aᵢ)` whose magnitude
/// exceeds `1e-12·max|vec(Aᵢ)|` is positive.
pub fn nearest_kron(w: &DenseMatrix, shape: KronShape, rank: usize, seed: u64) -> Result<NearestKron> {
    check_split(w, shape)?;
    if rank == 0 || rank > shape.max_rank() {
        return Err(Error::Validation(format!(
            "rank {rank} outside 1..={} for split {shape:?}",
            shape.max_rank()
        )));
    }
    let r = rearrange(w, shape)?;
    let svd = truncated_svd(&r, rank, seed);
    let leading = svd.s.first().copied().unwrap_or(0.0);

    let mut terms = Vec::with_capacity(rank);
    let mut degenerate = 0;
    for k in 0..rank {
        let sigma = svd.s[k];
        if leading == 0.0 || sigma < DEGENERATE_RATIO * leading || degenerate > 0 {
            degenerate += 1;
            terms.push(KronFactorPair::new(
                DenseMatrix::zeros(shape.m1, shape.n1),
                DenseMatrix::zeros(shape.m2, shape.n2),
            ));
            continue;
        }
        let flip = if leading_sign_negative(&svd.u[k]) { -1.0 } else { 1.0 };
        let root = sigma.sqrt() * flip;
        let a = DenseMatrix::from_fn(shape.m1, shape.n1, |i, j| root * svd.u[k][i * shape.n1 + j]);
        let b = DenseMatrix::from_fn(shape.m2, shape.n2, |i, j| root * svd.v[k][i * shape.n2 + j]);
        terms.push(KronFactorPair::new(a, b));
    }
    let sum = KronSum { terms };
    let residual = kron_residual(w, &sum)?;
    Ok(NearestKron {
        sum,
        residual,
        singular_values: svd.s,
        degenerate_terms: degenerate,
    })
}

fn leading_sign_negative(u: &[f64]) -> bool {
    let peak = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    u.iter()
        .find(|x| x.abs() > 1e-12 * peak)
        .is_some_and(|&x| x < 0.0)
}

/// `‖W − Σ Aᵢ⊗Bᵢ‖_F` by blockwise accumulation.
pub fn kron_residual(w: &DenseMatrix, ks: &KronSum) -> Result<f64> {
    ks.shape().check_matrix(w)?;
    Ok(kron_residual_by(ks, |i, j| w[(i, j)]))
}

/// Residual against an implicit matrix given by an accessor, so gathered
/// (permuted) views never need to be copied.
pub fn kron_residual_by(ks: &KronSum, target: impl Fn(usize, usize) -> f64) -> f64 {
    let s = ks.shape();
    let mut acc = 0.0;
    for i1 in 0..s.m1 {
        for i2 in 0..s.m2 {
            let i = i1 * s.m2 + i2;
            for j1 in 0..s.n1 {
                for j2 in 0..s.n2 {
                    let j = j1 * s.n2 + j2;
                    let approx: f64 = ks.terms.iter().map(|t| t.a[(i1, j1)] * t.b[(i2, j2)]).sum();
                    let d = target(i, j) - approx;
                    acc += d * d;
                }
            }
        }
    }
    acc.sqrt()
}

/// Dense `Σ Aᵢ⊗Bᵢ`. For tests and reporting only.
pub fn kron_reconstruct(ks: &KronSum) -> DenseMatrix {
    let s = ks.shape();
    let mut out = DenseMatrix::zeros(s.rows(), s.cols());
    for t in &ks.terms {
        for i1 in 0..s.m1 {
            for j1 in 0..s.n1 {
                let a = t.a[(i1, j1)];
                if a == 0.0 {
                    continue;
                }
                for i2 in 0..s.m2 {
                    let row = out.row_mut(i1 * s.m2 + i2);
                    let dst = &mut row[j1 * s.n2..(j1 + 1) * s.n2];
                    for (d, &b) in dst.iter_mut().zip(t.b.row(i2)) {
                        *d += a * b;
                    }
                }
            }
        }
    }
    out
}

/// `(Σ Aᵢ⊗Bᵢ)·x` through `Z = A·X·Bᵀ` per term, with `X` the `n1 x n2`
/// row-major reshape of `x` and the output the row-major vec of `Z`.
pub fn kron_matvec(ks: &KronSum, x: &[f64]) -> Result<Vec<f64>> {
    let mut macs = 0;
    kron_matvec_counted(ks, x, &mut macs)
}

/// [`kron_matvec`] that adds the multiply-accumulates it performs to `macs`.
pub fn kron_matvec_counted(ks: &KronSum, x: &[f64], macs: &mut u64) -> Result<Vec<f64>> {
    let s = ks.shape();
    if x.len() != s.cols() {
        return Err(Error::Shape(format!(
            "input has length {}, expected {}",
            x.len(),
            s.cols()
        )));
    }
    let mut y = vec![0.0; s.rows()];
    let mut t = vec![0.0; s.n1 * s.m2];
    for term in &ks.terms {
        // t = X·Bᵀ, n1 x m2
        for j1 in 0..s.n1 {
            let xrow = &x[j1 * s.n2..(j1 + 1) * s.n2];
            for i2 in 0..s.m2 {
                t[j1 * s.m2 + i2] = xrow.iter().zip(term.b.row(i2)).map(|(a, b)| a * b).sum();
                *macs += s.n2 as u64;
            }
        }
        // y += A·t, m1 x m2
        for i1 in 0..s.m1 {
            let arow = term.a.row(i1);
            let yrow = &mut y[i1 * s.m2..(i1 + 1) * s.m2];
            for (j1, &a) in arow.iter().enumerate() {
                let trow = &t[j1 * s.m2..(j1 + 1) * s.m2];
                for (yv, tv) in yrow.iter_mut().zip(trow) {
                    *yv += a * tv;
                }
                *macs += s.m2 as u64;
            }
        }
    }
    Ok(y)
}

/// Column-wise [`kron_matvec`] over `x` with `n1*n2` rows.
pub fn kron_matmat(ks: &KronSum, x: &DenseMatrix) -> Result<DenseMatrix> {
    let s = ks.shape();
    if x.rows() != s.cols() {
        return Err(Error::Shape(format!(
            "right-hand side has {} rows, expected {}",
            x.rows(),
            s.cols()
        )));
    }
    let mut out = DenseMatrix::zeros(s.rows(), x.cols());
    let mut col = vec![0.0; x.rows()];
    for k in 0..x.cols() {
        for (i, c) in col.iter_mut().enumerate() {
            *c = x[(i, k)];
        }
        let y = kron_matvec(ks, &col)?;
        for (i, v) in y.into_iter().enumerate() {
            out[(i, k)] = v;
        }
    }
    Ok(out)
}
