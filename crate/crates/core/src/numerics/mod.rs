//! Deterministic RNG, dense linear algebra, and activation functions.

pub mod activations;
pub mod matrix;
pub mod rng;

pub use activations::{gelu, gelu_grad, sigmoid, sigmoid_grad};
pub use matrix::{axpy, dot, hadamard, norm, Matrix};
pub use rng::{Rng, Stream};
