//! Generalized Kronecker product decomposition (GKPD) of N-dimensional
//! tensors, reconstruction-free Kronecker convolution, and factor-shape
//! search under memory and FLOPs budgets.
//!
//! The central identity: rearranging a tensor of shape `a * b` into the
//! matrix of its flattened `b`-shaped patches maps `kron(A, B)` to the
//! rank-one matrix `vec(A) vec(B)^T` without changing the Frobenius norm.
//! The best `r`-term sum of Kronecker products is therefore a truncated SVD.

pub mod cli;
pub mod complexity;
pub mod decompose;
pub mod error;
pub mod kronconv;
pub mod linalg;
pub mod report;
pub mod tensor;
pub mod tensor_file;

pub use complexity::{
    count_macs_direct, count_macs_kron, enumerate_candidates, flops_reduction, memory_reduction,
    select_configuration, ConfigCandidate, InputGeometry, SearchBudget, Selection,
};
pub use decompose::{
    gkpd_solve, rearrange_a, rearrange_b, rearrange_w, reconstruct, reconstruction_error,
    FactorShapePair, GkpdDecomposition,
};
pub use error::{Error, Result};
pub use kronconv::{
    conv2d_direct, kron_conv_forward, kron_conv_sum_forward, kron_matvec, reindex_check,
    ConvFactorPair, ConvGeometry,
};
pub use linalg::{svd_full, svd_truncated, Matrix, SvdResult};
pub use tensor::{frobenius_norm, kron, split_index, unfold, DenseTensor, MultiIndex};
