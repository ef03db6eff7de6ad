//! The default end-to-end experiment: train a dense teacher on Gaussian
//! blobs, then compress its two hidden layers one per iteration and distill.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{DatasetConfig, SyntheticDataset};
use super::loss::KdConfig;
use super::model::ToyModel;
use super::train::{iterative_compress_distill_with, train_supervised, DistillOutcome};
use crate::error::{Error, Result};
use crate::store::{save_tensors, CompressionPlan, PlanEntry};

#[derive(Debug, Clone)]
pub struct DemoConfig {
    pub seed: u64,
    pub data: DatasetConfig,
    /// Layer widths of the teacher, input first.
    pub dims: Vec<usize>,
    pub teacher: KdConfig,
    pub student: KdConfig,
    pub use_permutations: bool,
    /// Where to write `teacher.pktn` and `student-<i>.pktn`, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
}

impl DemoConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            data: DatasetConfig { seed, ..DatasetConfig::default() },
            dims: vec![64, 64, 64, 8],
            teacher: KdConfig { epochs: 10, learning_rate: 3e-3, lambda: 1.0, seed, ..KdConfig::default() },
            student: KdConfig { epochs: 15, learning_rate: 1e-2, seed, ..KdConfig::default() },
            use_permutations: true,
            checkpoint_dir: None,
        }
    }

    /// Hidden layers `fc0 … fc{k-2}` split as square Kronecker factors,
    /// one per schedule entry. The output layer stays dense.
    pub fn plan_and_schedule(&self) -> Result<(CompressionPlan, Vec<Vec<String>>)> {
        let mut entries = Vec::new();
        let mut schedule = Vec::new();
        for (i, w) in self.dims.windows(2).enumerate().take(self.dims.len().saturating_sub(2)) {
            let (a, b) = (square_split(w[1]), square_split(w[0]));
            let name = format!("fc{i}");
            entries.push(
                PlanEntry::new(name.clone(), (a.0, b.0), (a.1, b.1)).with_permutations(self.use_permutations),
            );
            schedule.push(vec![name]);
        }
        Ok((CompressionPlan::new(entries)?, schedule))
    }
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self::with_seed(0)
    }
}

/// `n = p·q` with `p ≤ q` as close as possible.
fn square_split(n: usize) -> (usize, usize) {
    let mut p = (n as f64).sqrt() as usize;
    while p > 1 && n % p != 0 {
        p -= 1;
    }
    (p.max(1), n / p.max(1))
}

#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub teacher: ToyModel,
    pub teacher_accuracy: f64,
    /// Test accuracy right after the last compression, before its distillation.
    pub raw_accuracy: f64,
    pub student_accuracy: f64,
    pub teacher_params: usize,
    pub student_params: usize,
    pub distill: DistillOutcome,
}

impl DemoOutcome {
    pub fn compression_ratio(&self) -> f64 {
        self.teacher_params as f64 / self.student_params as f64
    }
}

pub fn run_demo(cfg: &DemoConfig) -> Result<DemoOutcome> {
    let data = SyntheticDataset::generate(&cfg.data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut teacher = ToyModel::mlp(&cfg.dims, &mut rng)?;
    train_supervised(&mut teacher, &data, &cfg.teacher)?;
    let teacher_accuracy = teacher.accuracy(&data.test_x, &data.test_y)?;

    let mut last_good: Option<PathBuf> = None;
    if let Some(dir) = &cfg.checkpoint_dir {
        let path = dir.join("teacher.pktn");
        save_tensors(&teacher.to_tensors()?, &path)?;
        last_good = Some(path);
    }
    let (plan, schedule) = cfg.plan_and_schedule()?;
    let result = iterative_compress_distill_with(&teacher, &plan, &schedule, &cfg.student, &data, |i, student| {
        if let Some(dir) = &cfg.checkpoint_dir {
            let path = dir.join(format!("student-{i}.pktn"));
            save_tensors(&student.to_tensors()?, &path)?;
            last_good = Some(path);
        }
        Ok(())
    });
    let distill = match result {
        Ok(d) => d,
        Err(Error::Numerical(msg)) => {
            let at = last_good.map_or_else(|| "none written".to_string(), |p| p.display().to_string());
            return Err(Error::Numerical(format!("{msg}; last good checkpoint: {at}")));
        }
        Err(e) => return Err(e),
    };
    let raw_accuracy = distill
        .log
        .iter()
        .rev()
        .find(|r| r.step == 0)
        .map_or(teacher_accuracy, |r| r.accuracy);
    let student_accuracy = distill.student.accuracy(&data.test_x, &data.test_y)?;
    Ok(DemoOutcome {
        teacher_params: teacher.parameter_count(),
        student_params: distill.student.parameter_count(),
        teacher,
        teacher_accuracy,
        raw_accuracy,
        student_accuracy,
        distill,
    })
}
