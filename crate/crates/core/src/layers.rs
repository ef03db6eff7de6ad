//! Compressed layers: a permuted-Kronecker linear map and a Kronecker
//! factorised embedding table, both with gradients for their factors.
//!
//! Batches are matrices with one sample per row. Permutations are applied as
//! index gathers and scatters; neither the dense weight nor any permutation
//! matrix is ever built outside the `to_dense` oracles.

use crate::assignment::PermutationVec;
use crate::error::{Error, Result};
use crate::kron::{KronFactorPair, KronShape, KronSum};
use crate::matrix::DenseMatrix;
use crate::optimizer::PermutedKronDecomposition;
use crate::store::{Dtype, NamedTensor, NamedTensorFile};

/// Gradients for one compressed layer, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub a: Vec<DenseMatrix>,
    pub b: Vec<DenseMatrix>,
    pub bias: Option<Vec<f64>>,
}

impl GradientBundle {
    fn zeros_like(factors: &KronSum, bias: Option<usize>) -> Self {
        let s = factors.shape();
        let r = factors.rank();
        Self {
            a: vec![DenseMatrix::zeros(s.m1, s.n1); r],
            b: vec![DenseMatrix::zeros(s.m2, s.n2); r],
            bias: bias.map(|m| vec![0.0; m]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(&self.b).all(DenseMatrix::is_finite)
            && self.bias.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.a.iter().chain(&self.b).all(|m| m.as_slice().iter().all(|&v| v == 0.0))
            && self.bias.as_ref().is_none_or(|b| b.iter().all(|&v| v == 0.0))
    }

    /// Flattened gradients in the order `A0, B0, A1, B1, …, bias`, the same
    /// order as the layer's `params_mut`.
    pub fn into_flat(self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(2 * self.a.len() + 1);
        for (a, b) in self.a.into_iter().zip(self.b) {
            out.push(a.into_vec());
            out.push(b.into_vec());
        }
        if let Some(b) = self.bias {
            out.push(b);
        }
        out
    }
}

fn factor_params(factors: &mut KronSum) -> Vec<&mut [f64]> {
    let mut out = Vec::with_capacity(2 * factors.rank());
    for t in factors.terms_mut() {
        let KronFactorPair { a, b } = t;
        out.push(a.as_mut_slice());
        out.push(b.as_mut_slice());
    }
    out
}

/// `y = Pᵀ·(Σ Aᵢ⊗Bᵢ)·Cᵀ·x + bias`, the dense weight being the decomposition's
/// approximation of `W`. In index form: `y[P(i)] = Σⱼ K[i][j]·x[C(j)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLinear {
    pub decomposition: PermutedKronDecomposition,
    pub bias: Option<Vec<f64>>,
}

impl CompressedLinear {
    pub fn new(decomposition: PermutedKronDecomposition, bias: Option<Vec<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != decomposition.rows() {
                return Err(Error::Shape(format!(
                    "bias has length {}, layer has {} outputs",
                    b.len(),
                    decomposition.rows()
                )));
            }
            if !b.iter().all(|v| v.is_finite()) {
                return Err(Error::Validation("bias has non-finite entries".into()));
            }
        }
        Ok(Self { decomposition, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.decomposition.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.decomposition.rows()
    }

    pub fn shape(&self) -> KronShape {
        self.decomposition.shape()
    }

    pub fn parameter_count(&self) -> usize {
        self.decomposition.parameter_count() + self.bias.as_ref().map_or(0, Vec::len)
    }

    /// Multiply-accumulates of one compressed matvec, `r·(m2·n2·n1 + m1·n1·m2)`.
    /// Gathers and the bias add are not arithmetic on the weights and are
    /// not counted.
    pub fn matvec_cost(&self) -> u64 {
        self.shape().matvec_macs(self.decomposition.rank())
    }

    /// Cost of the equivalent dense matvec, `2·m·n`.
    pub fn dense_matvec_cost(&self) -> u64 {
        2 * self.out_dim() as u64 * self.in_dim() as u64
    }

    /// Dense weight `Pᵀ·K·Cᵀ` (test oracle and export only).
    pub fn to_dense(&self) -> DenseMatrix {
        self.decomposition.approximation()
    }

    fn check_batch(&self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input has length {}, layer expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut macs = 0;
        self.forward_counted(x, &mut macs)
    }

    /// [`forward`](Self::forward) that adds its multiply-accumulates to `macs`.
    pub fn forward_counted(&self, x: &DenseMatrix, macs: &mut u64) -> Result<DenseMatrix> {
        self.check_batch(x)?;
        let d = &self.decomposition;
        let mut out = DenseMatrix::zeros(x.rows(), self.out_dim());
        for s in 0..x.rows() {
            let xg = d.col_perm.gather(x.row(s));
            let z = crate::kron::kron_matvec_counted(&d.factors, &xg, macs)?;
            let y = out.row_mut(s);
            for (i, zi) in z.into_iter().enumerate() {
                y[d.row_perm.get(i)] = zi;
            }
            if let Some(b) = &self.bias {
                y.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
            }
        }
        Ok(out)
    }

    /// Gradients of `Σ ⟨upstream, forward(x)⟩` with respect to every factor,
    /// the bias and the input. Permutations are held fixed.
    pub fn backward(&self, x: &DenseMatrix, upstream: &DenseMatrix) -> Result<(GradientBundle, DenseMatrix)> {
        self.check_batch(x)?;
        if upstream.rows() != x.rows() || upstream.cols() != self.out_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                x.rows(),
                self.out_dim()
            )));
        }
        let d = &self.decomposition;
        let s = d.shape();
        let mut grads = GradientBundle::zeros_like(&d.factors, self.bias.as_ref().map(Vec::len));
        let mut dx = DenseMatrix::zeros(x.rows(), self.in_dim());
        let mut t = vec![0.0; s.m1 * s.n2];
        let mut dxg = vec![0.0; self.in_dim()];

        for row in 0..x.rows() {
            let xg = d.col_perm.gather(x.row(row));
            let gz = d.row_perm.gather(upstream.row(row));
            dxg.iter_mut().for_each(|v| *v = 0.0);
            for (k, term) in d.factors.terms().iter().enumerate() {
                let (a, b) = (&term.a, &term.b);
                // t = G·B, m1 x n2
                for i1 in 0..s.m1 {
                    let trow = &mut t[i1 * s.n2..(i1 + 1) * s.n2];
                    trow.iter_mut().for_each(|v| *v = 0.0);
                    for i2 in 0..s.m2 {
                        let g = gz[i1 * s.m2 + i2];
                        trow.iter_mut().zip(b.row(i2)).for_each(|(tv, bv)| *tv += g * bv);
                    }
                }
                // dA += t·Xᵀ and dX += Aᵀ·t
                let da = &mut grads.a[k];
                for i1 in 0..s.m1 {
                    let trow = &t[i1 * s.n2..(i1 + 1) * s.n2];
                    for j1 in 0..s.n1 {
                        let xrow = &xg[j1 * s.n2..(j1 + 1) * s.n2];
                        da[(i1, j1)] += trow.iter().zip(xrow).map(|(p, q)| p * q).sum::<f64>();
                        let aij = a[(i1, j1)];
                        dxg[j1 * s.n2..(j1 + 1) * s.n2]
                            .iter_mut()
                            .zip(trow)
                            .for_each(|(dv, tv)| *dv += aij * tv);
                    }
                }
                // dB += Gᵀ·(A·X)
                let db = &mut grads.b[k];
                for i1 in 0..s.m1 {
                    let mut ax = vec![0.0; s.n2];
                    for j1 in 0..s.n1 {
                        let aij = a[(i1, j1)];
                        ax.iter_mut()
                            .zip(&xg[j1 * s.n2..(j1 + 1) * s.n2])
                            .for_each(|(v, xv)| *v += aij * xv);
                    }
                    for i2 in 0..s.m2 {
                        let g = gz[i1 * s.m2 + i2];
                        db.row_mut(i2).iter_mut().zip(&ax).for_each(|(v, p)| *v += g * p);
                    }
                }
            }
            let dxrow = dx.row_mut(row);
            for (j, v) in dxg.iter().enumerate() {
                dxrow[d.col_perm.get(j)] = *v;
            }
            if let Some(gb) = &mut grads.bias {
                gb.iter_mut().zip(upstream.row(row)).for_each(|(g, u)| *g += u);
            }
        }
        Ok((grads, dx))
    }

    /// Trainable parameters in the order `A0, B0, A1, B1, …, bias`.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = factor_params(&mut self.decomposition.factors);
        if let Some(b) = &mut self.bias {
            out.push(b.as_mut_slice());
        }
        out
    }

    /// Decomposition tensors plus `<name>.bias` when present.
    pub fn to_tensors(&self, name: &str, dtype: Dtype) -> Result<Vec<NamedTensor>> {
        let mut out = self.decomposition.to_tensors(name, dtype)?;
        if let Some(b) = &self.bias {
            out.push(NamedTensor::from_vector(format!("{name}.bias"), b, dtype)?);
        }
        Ok(out)
    }

    pub fn from_tensors(file: &NamedTensorFile, name: &str) -> Result<Self> {
        let decomposition = PermutedKronDecomposition::from_tensors(file, name)?;
        let bias = file.get(&format!("{name}.bias")).map(NamedTensor::to_vector).transpose()?;
        Self::new(decomposition, bias)
    }
}

/// Embedding table stored as `Σ Aᵢ⊗Bᵢ` with `v = m1·m2` rows and
/// `d = n1·n2` columns. With `B` of shape `1 x f`, row `t` is `A[t]⊗B[0]`.
/// Optional row and column permutations follow the same convention as
/// [`CompressedLinear`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedEmbedding {
    pub decomposition: PermutedKronDecomposition,
    inv_rows: PermutationVec,
}

impl CompressedEmbedding {
    /// Unpermuted embedding table `A⊗B` (or its sum form).
    pub fn new(factors: KronSum) -> Self {
        let s = factors.shape();
        let d = PermutedKronDecomposition::new(
            PermutationVec::identity(s.rows()),
            PermutationVec::identity(s.cols()),
            factors,
            false,
            f64::NAN,
        )
        .expect("identity permutations always fit");
        Self::from_decomposition(d)
    }

    pub fn from_decomposition(decomposition: PermutedKronDecomposition) -> Self {
        let inv_rows = decomposition.row_perm.inverse();
        Self { decomposition, inv_rows }
    }

    pub fn vocab(&self) -> usize {
        self.decomposition.rows()
    }

    pub fn dim(&self) -> usize {
        self.decomposition.cols()
    }

    /// Column count of `B`, the factor by which `A` is narrower than the table.
    pub fn reduction_factor(&self) -> usize {
        self.decomposition.shape().n2
    }

    pub fn parameter_count(&self) -> usize {
        self.decomposition.parameter_count()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.decomposition.approximation()
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Shape("empty batch of token ids".into()));
        }
        match ids.iter().find(|&&t| t >= self.vocab()) {
            Some(t) => Err(Error::Validation(format!(
                "token id {t} out of range for vocabulary of {}",
                self.vocab()
            ))),
            None => Ok(()),
        }
    }

    /// One `d`-vector per id, each built in `O(r·d)`.
    pub fn lookup(&self, ids: &[usize]) -> Result<DenseMatrix> {
        self.check_ids(ids)?;
        let d = &self.decomposition;
        let s = d.shape();
        let mut out = DenseMatrix::zeros(ids.len(), self.dim());
        for (row, &t) in ids.iter().enumerate() {
            let i = self.inv_rows.get(t);
            let (i1, i2) = (i / s.m2, i % s.m2);
            let y = out.row_mut(row);
            for term in d.factors.terms() {
                let brow = term.b.row(i2);
                for (j1, &a) in term.a.row(i1).iter().enumerate() {
                    for (j2, &b) in brow.iter().enumerate() {
                        y[d.col_perm.get(j1 * s.n2 + j2)] += a * b;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gradients of `Σ ⟨upstream, lookup(ids)⟩` with respect to the factors.
    pub fn backward(&self, ids: &[usize], upstream: &DenseMatrix) -> Result<GradientBundle> {
        self.check_ids(ids)?;
        if upstream.rows() != ids.len() || upstream.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                ids.len(),
                self.dim()
            )));
        }
        let d = &self.decomposition;
        let s = d.shape();
        let mut grads = GradientBundle::zeros_like(&d.factors, None);
        for (row, &t) in ids.iter().enumerate() {
            let i = self.inv_rows.get(t);
            let (i1, i2) = (i / s.m2, i % s.m2);
            let gk = d.col_perm.gather(upstream.row(row));
            for (k, term) in d.factors.terms().iter().enumerate() {
                for j1 in 0..s.n1 {
                    let g = &gk[j1 * s.n2..(j1 + 1) * s.n2];
                    grads.a[k][(i1, j1)] += g.iter().zip(term.b.row(i2)).map(|(p, q)| p * q).sum::<f64>();
                    let a = term.a[(i1, j1)];
                    grads.b[k].row_mut(i2).iter_mut().zip(g).for_each(|(v, gv)| *v += a * gv);
                }
            }
        }
        Ok(grads)
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        factor_params(&mut self.decomposition.factors)
    }
}
