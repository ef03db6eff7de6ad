//! Distillation loss: `λ·CE(softmax(s), y) + (1−λ)·τ²·CE(softmax(t/τ), softmax(s/τ))`,
//! averaged over the batch.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Hyperparameters of a distillation run.
#[derive(Debug, Clone, PartialEq)]
pub struct KdConfig {
    /// Weight of the hard-label term, in `[0, 1]`.
    pub lambda: f64,
    pub temperature: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            temperature: 1.0,
            epochs: 5,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Validation(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Validation(format!("temperature {} must be positive", self.temperature)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning rate {} must be non-negative", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Validation("betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn log_softmax(z: &[f64], scale: f64) -> Vec<f64> {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v * scale));
    let lse = z.iter().map(|&v| (v * scale - max).exp()).sum::<f64>().ln() + max;
    z.iter().map(|&v| v * scale - lse).collect()
}

/// Loss and its gradient with respect to the student logits.
pub fn kd_loss(
    student: &DenseMatrix,
    teacher: &DenseMatrix,
    labels: &[usize],
    cfg: &KdConfig,
) -> Result<(f64, DenseMatrix)> {
    cfg.validate()?;
    if student.shape() != teacher.shape() || labels.len() != student.rows() {
        return Err(Error::Shape(format!(
            "student logits {:?}, teacher logits {:?}, {} labels",
            student.shape(),
            teacher.shape(),
            labels.len()
        )));
    }
    let classes = student.cols();
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Validation(format!("label {y} out of range for {classes} classes")));
    }
    let (lambda, tau) = (cfg.lambda, cfg.temperature);
    let inv = 1.0 / student.rows() as f64;
    let mut loss = 0.0;
    let mut grad = DenseMatrix::zeros(student.rows(), classes);
    for (r, &y) in labels.iter().enumerate() {
        let s = student.row(r);
        let g = grad.row_mut(r);
        if lambda > 0.0 {
            let ls = log_softmax(s, 1.0);
            loss -= lambda * ls[y];
            for (k, gv) in g.iter_mut().enumerate() {
                let onehot = if k == y { 1.0 } else { 0.0 };
                *gv += lambda * (ls[k].exp() - onehot);
            }
        }
        if lambda < 1.0 {
            let ls = log_softmax(s, 1.0 / tau);
            let lt = log_softmax(teacher.row(r), 1.0 / tau);
            let w = (1.0 - lambda) * tau * tau;
            for k in 0..classes {
                let qt = lt[k].exp();
                loss -= w * qt * ls[k];
                g[k] += w / tau * (ls[k].exp() - qt);
            }
        }
    }
    grad.scale(inv);
    Ok((loss * inv, grad))
}
