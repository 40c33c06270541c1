//! Tensor-network compression and singular-value analysis for images.
//!
//! The crate covers four tensor-network formats (CP, Tucker, hierarchical
//! Tucker and tensor train), 8-bit subtensor quantization, the TT-SVD decay
//! slope used as a robustness measure, and a robust TT-SVD residual test that
//! flags strong additive perturbations.

pub mod analysis;
pub mod detect;
pub mod formats;
pub mod quantize;
pub mod svd;
pub mod tensor;
pub mod tnz;

pub use formats::{NetworkFormat, NetworkLayout, RankPolicy, TensorNetwork};
pub use svd::{RobustBinConfig, SlopeEstimate, SvdError, SvdFactors, Truncation};
pub use tensor::{DenseTensor, Matrix, TensorError};
