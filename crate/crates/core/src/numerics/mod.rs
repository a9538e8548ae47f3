//! Dense matrices, layer primitives with backward passes, Adam, and the RNG.

pub mod adam;
pub mod gradcheck;
pub mod matrix;
pub mod ops;
pub mod rng;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheck};
pub use matrix::{dot, matmul, matmul_backward, matmul_nt, matmul_tn, norm, Matrix, Scalar};
pub use ops::{
    leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward, BatchNorm, BatchNormCache,
    BatchStats, Mode,
};
pub use rng::Rng;
