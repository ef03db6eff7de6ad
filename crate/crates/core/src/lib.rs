//! Permutation-enhanced Kronecker decomposition of weight matrices.
//!
//! A weight matrix `W` (m x n) is approximated as `P·W·C ≈ Σᵢ Aᵢ⊗Bᵢ`, where
//! `P` and `C` are row and column permutations found by Hungarian assignment
//! and the Kronecker factors come from a truncated SVD of the block
//! rearrangement of `P·W·C`. The crate also provides the compressed layer
//! kernels that evaluate such factorizations without materialising them, and
//! a small distillation trainer that compresses a toy classifier layer by
//! layer.

pub mod assignment;
pub mod distill;
pub mod error;
pub mod kron;
pub mod layers;
pub mod matrix;
pub mod optimizer;
pub mod store;
pub mod svd;

pub use assignment::{
    build_cost_matrix, build_cost_matrix_with, hungarian, solve_row_permutation, trace_objective, Assignment,
    CostKind, CostMatrix, PermutationVec, RowMatch,
};
pub use error::{Error, Result};
pub use kron::{
    kron_matmat, kron_matvec, kron_reconstruct, nearest_kron, rearrange, unrearrange, KronFactorPair, KronShape,
    KronSum, NearestKron,
};
pub use layers::{CompressedEmbedding, CompressedLinear, GradientBundle};
pub use matrix::DenseMatrix;
pub use optimizer::{decompose, objective, OptimizerTrace, PermutedKronDecomposition, Phase, TraceRecord};
pub use store::{
    load_tensors, parse_plan, save_tensors, CompressionPlan, Dtype, NamedTensor, NamedTensorFile, PlanEntry,
};
