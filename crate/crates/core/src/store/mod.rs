//! Tensor container and compression-plan documents.

mod container;
mod plan;

pub use container::{
    load_tensors, save_tensors, Dtype, NamedTensor, NamedTensorFile, TensorData, FORMAT_VERSION, MAGIC,
};
pub use plan::{
    parse_plan, parse_sidecar, CompressionPlan, DecompositionRecord, PlanEntry, DEFAULT_ITERS, DEFAULT_KICKS,
    DEFAULT_RANK,
};
