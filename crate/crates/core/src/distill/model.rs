//! Small multilayer perceptron whose linear layers are either dense or
//! compressed.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::layers::CompressedLinear;
use crate::matrix::DenseMatrix;
use crate::store::{Dtype, NamedTensor, NamedTensorFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

/// `y = x·Wᵀ + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLinear {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl DenseLinear {
    pub fn new(weight: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias has length {}, weight has {} rows",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut y = x.matmul(&self.weight.transpose())?;
        for r in 0..y.rows() {
            y.row_mut(r).iter_mut().zip(&self.bias).for_each(|(v, b)| *v += b);
        }
        Ok(y)
    }

    fn backward(&self, x: &DenseMatrix, dz: &DenseMatrix) -> Result<(Vec<Vec<f64>>, DenseMatrix)> {
        let dw = dz.transpose().matmul(x)?;
        let mut db = vec![0.0; self.bias.len()];
        for r in 0..dz.rows() {
            db.iter_mut().zip(dz.row(r)).for_each(|(g, v)| *g += v);
        }
        let dx = dz.matmul(&self.weight)?;
        Ok((vec![dw.into_vec(), db], dx))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Dense(DenseLinear),
    Compressed(CompressedLinear),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayer {
    pub name: String,
    pub kind: LayerKind,
    pub activation: Activation,
}

impl ModelLayer {
    pub fn in_dim(&self) -> usize {
        match &self.kind {
            LayerKind::Dense(d) => d.weight.cols(),
            LayerKind::Compressed(c) => c.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match &self.kind {
            LayerKind::Dense(d) => d.weight.rows(),
            LayerKind::Compressed(c) => c.out_dim(),
        }
    }

    pub fn is_compressed(&self) -> bool {
        matches!(self.kind, LayerKind::Compressed(_))
    }

    pub fn parameter_count(&self) -> usize {
        match &self.kind {
            LayerKind::Dense(d) => d.weight.len() + d.bias.len(),
            LayerKind::Compressed(c) => c.parameter_count(),
        }
    }

    fn linear(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        match &self.kind {
            LayerKind::Dense(d) => d.forward(x),
            LayerKind::Compressed(c) => c.forward(x),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match &mut self.kind {
            LayerKind::Dense(d) => vec![d.weight.as_mut_slice(), d.bias.as_mut_slice()],
            LayerKind::Compressed(c) => c.params_mut(),
        }
    }
}

/// Layers applied in order; the last one emits logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    layers: Vec<ModelLayer>,
}

impl ToyModel {
    pub fn new(layers: Vec<ModelLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("a model needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer `{}` emits {} values but `{}` expects {}",
                    w[0].name,
                    w[0].out_dim(),
                    w[1].name,
                    w[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if layers[..i].iter().any(|p| p.name == l.name) {
                return Err(Error::Validation(format!("duplicate layer name `{}`", l.name)));
            }
        }
        Ok(Self { layers })
    }

    /// Dense MLP `dims[0] → … → dims[last]` with layers `fc0, fc1, …`,
    /// ReLU between layers, He-normal weights and zero biases.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Validation(format!("invalid layer widths {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive std");
                let weight = DenseMatrix::from_fn(w[1], w[0], |_, _| normal.sample(rng));
                ModelLayer {
                    name: format!("fc{i}"),
                    kind: LayerKind::Dense(DenseLinear { weight, bias: vec![0.0; w[1]] }),
                    activation: if i == last { Activation::Identity } else { Activation::Relu },
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[ModelLayer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&ModelLayer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(ModelLayer::parameter_count).sum()
    }

    /// Replaces the weight of a dense layer by `compressed`, which must carry
    /// the layer's bias if it is to keep one.
    pub fn swap_in(&mut self, name: &str, compressed: CompressedLinear) -> Result<()> {
        let layer = self
            .layers
            .iter_mut()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::Reference(name.to_string()))?;
        if compressed.in_dim() != layer.in_dim() || compressed.out_dim() != layer.out_dim() {
            return Err(Error::Shape(format!("replacement for `{name}` has the wrong shape")));
        }
        layer.kind = LayerKind::Compressed(compressed);
        Ok(())
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.forward_cached(x)?.pop().expect("non-empty"))
    }

    /// Inputs to every layer followed by the logits.
    fn forward_cached(&self, x: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut acts = vec![x.clone()];
        for l in &self.layers {
            let mut z = l.linear(acts.last().expect("non-empty"))?;
            if l.activation == Activation::Relu {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Logits and the gradients of `Σ ⟨dlogits, logits⟩` for all parameters,
    /// in [`params_mut`](Self::params_mut) order. `dlogits` is produced from
    /// the returned logits by `grad_fn`.
    pub fn forward_backward<F>(&self, x: &DenseMatrix, grad_fn: F) -> Result<(DenseMatrix, Vec<Vec<f64>>)>
    where
        F: FnOnce(&DenseMatrix) -> Result<DenseMatrix>,
    {
        let acts = self.forward_cached(x)?;
        let logits = acts.last().expect("non-empty").clone();
        let mut upstream = grad_fn(&logits)?;
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (k, l) in self.layers.iter().enumerate().rev() {
            if l.activation == Activation::Relu {
                let out = &acts[k + 1];
                upstream
                    .as_mut_slice()
                    .iter_mut()
                    .zip(out.as_slice())
                    .for_each(|(g, &a)| {
                        if a <= 0.0 {
                            *g = 0.0
                        }
                    });
            }
            let input = &acts[k];
            let (grads, dx) = match &l.kind {
                LayerKind::Dense(d) => d.backward(input, &upstream)?,
                LayerKind::Compressed(c) => {
                    let (g, dx) = c.backward(input, &upstream)?;
                    (g.into_flat(), dx)
                }
            };
            per_layer.push(grads);
            upstream = dx;
        }
        per_layer.reverse();
        Ok((logits, per_layer.into_iter().flatten().collect()))
    }

    /// All trainable parameters: dense weights and biases, compressed
    /// factors and biases. Permutations are not included.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn predict(&self, x: &DenseMatrix) -> Result<Vec<usize>> {
        let logits = self.forward(x)?;
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
            })
            .collect())
    }

    pub fn accuracy(&self, x: &DenseMatrix, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        if pred.len() != labels.len() {
            return Err(Error::Shape("label count does not match the batch".into()));
        }
        let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// Checkpoint tensors: `<layer>` and `<layer>.bias` for dense layers, the
    /// decomposition tensors and `<layer>.bias` for compressed ones.
    pub fn to_tensors(&self) -> Result<NamedTensorFile> {
        let mut file = NamedTensorFile::new();
        for l in &self.layers {
            match &l.kind {
                LayerKind::Dense(d) => {
                    file.push(NamedTensor::from_matrix(l.name.clone(), &d.weight, Dtype::F64))?;
                    file.push(NamedTensor::from_vector(format!("{}.bias", l.name), &d.bias, Dtype::F64)?)?;
                }
                LayerKind::Compressed(c) => {
                    for t in c.to_tensors(&l.name, Dtype::F64)? {
                        file.push(t)?;
                    }
                }
            }
        }
        Ok(file)
    }

    /// Reads a checkpoint written by [`to_tensors`](Self::to_tensors) for a
    /// model laid out like [`mlp`](Self::mlp): layers `fc0, fc1, …`, ReLU on
    /// all but the last.
    pub fn from_tensors(file: &NamedTensorFile) -> Result<Self> {
        let mut layers = Vec::new();
        loop {
            let name = format!("fc{}", layers.len());
            let kind = if let Some(w) = file.get(&name) {
                let bias = file
                    .get(&format!("{name}.bias"))
                    .ok_or_else(|| Error::Reference(format!("{name}.bias")))?
                    .to_vector()?;
                LayerKind::Dense(DenseLinear::new(w.to_matrix()?, bias)?)
            } else if file.get(&format!("{name}.A.0")).is_some() {
                LayerKind::Compressed(CompressedLinear::from_tensors(file, &name)?)
            } else {
                break;
            };
            layers.push(ModelLayer { name, kind, activation: Activation::Relu });
        }
        if let Some(last) = layers.last_mut() {
            last.activation = Activation::Identity;
        }
        Self::new(layers)
    }
}
