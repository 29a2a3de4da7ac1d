//! Dense tensors with a tape-based reverse-mode autodiff engine.
//!
//! The crate covers exactly what a small U-Net + AlexNet-style classifier
//! needs: strided/padded 2-D convolution, transposed convolution, max and
//! adaptive average pooling, ReLU, sigmoid, inverted dropout, fully connected
//! layers, channel concatenation, mean squared error, log-softmax with
//! negative log likelihood, and the Adam optimizer.
//!
//! All kernels are generic over [`Element`] so the same code runs in `f32`
//! for training and in `f64` for gradient verification.

mod element;
mod error;
mod fpu;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod loss;
mod nn;
mod optim;
mod tensor;

pub use element::Element;
pub use error::TensorError;
pub use fpu::FlushDenormals;
pub use graph::{Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
