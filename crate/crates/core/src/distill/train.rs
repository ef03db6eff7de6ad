//! Training steps and the layer-by-layer compress-then-distill schedule.

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adamw::AdamW;
use super::data::{select_rows, SyntheticDataset};
use super::loss::{kd_loss, KdConfig};
use super::model::{LayerKind, ToyModel};
use crate::error::{Error, Result};
use crate::layers::CompressedLinear;
use crate::matrix::DenseMatrix;
use crate::optimizer::decompose;
use crate::store::CompressionPlan;

pub fn optimizer_for(cfg: &KdConfig) -> AdamW {
    AdamW::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
}

fn loss_and_grads(
    model: &ToyModel,
    x: &DenseMatrix,
    labels: &[usize],
    teacher: Option<&ToyModel>,
    cfg: &KdConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (cfg, teacher_logits) = match teacher {
        Some(t) => (cfg.clone(), t.forward(x)?),
        None => (KdConfig { lambda: 1.0, ..cfg.clone() }, DenseMatrix::zeros(x.rows(), model.classes())),
    };
    let mut loss = f64::NAN;
    let (_, grads) = model.forward_backward(x, |logits| {
        let (l, g) = kd_loss(logits, &teacher_logits, labels, &cfg)?;
        loss = l;
        Ok(g)
    })?;
    Ok((loss, grads))
}

/// One AdamW update of every trainable parameter of `model` on one batch.
/// Without a teacher the loss is plain cross-entropy. Returns the batch loss
/// before the update.
pub fn train_step(
    model: &mut ToyModel,
    x: &DenseMatrix,
    labels: &[usize],
    teacher: Option<&ToyModel>,
    cfg: &KdConfig,
    opt: &mut AdamW,
) -> Result<f64> {
    let (loss, grads) = loss_and_grads(model, x, labels, teacher, cfg)?;
    if !loss.is_finite() || !grads.iter().flatten().all(|g| g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite training loss {loss} at optimizer step {} (batch of {})",
            opt.steps() + 1,
            x.rows()
        )));
    }
    opt.step(model.params_mut(), &grads)?;
    Ok(loss)
}

/// One pass over `x` in shuffled mini-batches; returns the mean batch loss.
pub fn train_epoch(
    model: &mut ToyModel,
    x: &DenseMatrix,
    labels: &[usize],
    teacher: Option<&ToyModel>,
    cfg: &KdConfig,
    opt: &mut AdamW,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut batches = 0;
    for idx in order.chunks(cfg.batch_size) {
        let bx = select_rows(x, idx);
        let by: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        total += train_step(model, &bx, &by, teacher, cfg, opt)?;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Trains `model` from its current weights on hard labels only.
pub fn train_supervised(model: &mut ToyModel, data: &SyntheticDataset, cfg: &KdConfig) -> Result<()> {
    cfg.validate()?;
    let mut opt = optimizer_for(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.epochs {
        train_epoch(model, &data.train_x, &data.train_y, None, cfg, &mut opt, &mut rng)?;
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    /// 0 for the teacher, then one per schedule entry.
    pub iteration: usize,
    /// Optimizer steps taken so far in this iteration.
    pub step: u64,
    /// Distillation loss: over the training set at step 0, mean batch loss
    /// of the epoch afterwards.
    pub loss: f64,
    pub accuracy: f64,
    pub params: usize,
    /// Sum of decomposition residuals of the layers compressed this iteration.
    pub residual: f64,
}

impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iteration={} step={} loss={} accuracy={} params={} residual={}",
            self.iteration, self.step, self.loss, self.accuracy, self.params, self.residual
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCompression {
    pub iteration: usize,
    pub layer: String,
    pub residual: f64,
    pub rel_residual: f64,
    pub params_before: usize,
    pub params_after: usize,
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub student: ToyModel,
    pub log: Vec<MetricsRecord>,
    pub compressions: Vec<LayerCompression>,
}

impl DistillOutcome {
    pub fn total_residual(&self) -> f64 {
        self.compressions.iter().map(|c| c.residual).sum()
    }
}

fn check_schedule(teacher: &ToyModel, plan: &CompressionPlan, schedule: &[Vec<String>]) -> Result<()> {
    let mut seen = HashSet::new();
    for (i, subset) in schedule.iter().enumerate() {
        if subset.is_empty() {
            return Err(Error::Validation(format!("schedule entry {} is empty", i + 1)));
        }
        for name in subset {
            let layer = teacher
                .layer(name)
                .ok_or_else(|| Error::Validation(format!("schedule names unknown layer `{name}`")))?;
            if layer.is_compressed() || !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!("layer `{name}` is already compressed")));
            }
            let entry = plan
                .get(name)
                .ok_or_else(|| Error::Validation(format!("layer `{name}` has no compression plan")))?;
            entry.check_shape(layer.out_dim(), layer.in_dim())?;
        }
    }
    Ok(())
}

fn evaluate(model: &ToyModel, teacher: &ToyModel, data: &SyntheticDataset, cfg: &KdConfig) -> Result<(f64, f64)> {
    let (loss, _) = kd_loss(
        &model.forward(&data.train_x)?,
        &teacher.forward(&data.train_x)?,
        &data.train_y,
        cfg,
    )?;
    Ok((loss, model.accuracy(&data.test_x, &data.test_y)?))
}

/// Compresses the layers of `teacher` in the order given by `schedule`,
/// distilling the partially compressed student against the frozen teacher
/// for `cfg.epochs` epochs after each step. `after_iteration` sees the
/// student at the end of every iteration.
pub fn iterative_compress_distill_with<F>(
    teacher: &ToyModel,
    plan: &CompressionPlan,
    schedule: &[Vec<String>],
    cfg: &KdConfig,
    data: &SyntheticDataset,
    mut after_iteration: F,
) -> Result<DistillOutcome>
where
    F: FnMut(usize, &ToyModel) -> Result<()>,
{
    cfg.validate()?;
    check_schedule(teacher, plan, schedule)?;
    let mut student = teacher.clone();
    let (loss, accuracy) = evaluate(&student, teacher, data, cfg)?;
    let mut log = vec![MetricsRecord {
        iteration: 0,
        step: 0,
        loss,
        accuracy,
        params: student.parameter_count(),
        residual: 0.0,
    }];
    let mut compressions = Vec::new();

    for (k, subset) in schedule.iter().enumerate() {
        let iteration = k + 1;
        let mut residual = 0.0;
        for name in subset {
            let entry = plan.get(name).expect("checked");
            let layer = student.layer(name).expect("checked");
            let LayerKind::Dense(dense) = &layer.kind else {
                unreachable!("checked")
            };
            let (d, _) = decompose(&dense.weight, entry, cfg.seed)?;
            let norm = dense.weight.frobenius_norm();
            residual += d.residual;
            let compressed = CompressedLinear::new(d, Some(dense.bias.clone()))?;
            compressions.push(LayerCompression {
                iteration,
                layer: name.clone(),
                residual: compressed.decomposition.residual,
                rel_residual: if norm > 0.0 { compressed.decomposition.residual / norm } else { 0.0 },
                params_before: layer.parameter_count(),
                params_after: compressed.parameter_count(),
            });
            student.swap_in(name, compressed)?;
        }
        let (loss, accuracy) = evaluate(&student, teacher, data, cfg)?;
        log.push(MetricsRecord {
            iteration,
            step: 0,
            loss,
            accuracy,
            params: student.parameter_count(),
            residual,
        });

        let mut opt = optimizer_for(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(iteration as u64));
        for _ in 0..cfg.epochs {
            let loss = train_epoch(&mut student, &data.train_x, &data.train_y, Some(teacher), cfg, &mut opt, &mut rng)?;
            log.push(MetricsRecord {
                iteration,
                step: opt.steps(),
                loss,
                accuracy: student.accuracy(&data.test_x, &data.test_y)?,
                params: student.parameter_count(),
                residual,
            });
        }
        after_iteration(iteration, &student)?;
    }
    Ok(DistillOutcome { student, log, compressions })
}

pub fn iterative_compress_distill(
    teacher: &ToyModel,
    plan: &CompressionPlan,
    schedule: &[Vec<String>],
    cfg: &KdConfig,
    data: &SyntheticDataset,
) -> Result<DistillOutcome> {
    iterative_compress_distill_with(teacher, plan, schedule, cfg, data, |_, _| Ok(()))
}
