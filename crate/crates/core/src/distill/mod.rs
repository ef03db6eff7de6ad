//! Knowledge distillation of partially compressed toy classifiers.

pub mod adamw;
pub mod data;
pub mod demo;
pub mod loss;
pub mod model;
pub mod train;

pub use adamw::AdamW;
pub use data::{DatasetConfig, SyntheticDataset};
pub use demo::{run_demo, DemoConfig, DemoOutcome};
pub use loss::{kd_loss, KdConfig};
pub use model::{Activation, DenseLinear, LayerKind, ModelLayer, ToyModel};
pub use train::{
    iterative_compress_distill, iterative_compress_distill_with, optimizer_for, train_epoch, train_step,
    train_supervised, DistillOutcome, LayerCompression, MetricsRecord,
};
