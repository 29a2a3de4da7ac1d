//! NANet: a denoising U-Net autoencoder feeding an AlexNet-style classifier,
//! trained jointly on clean Morse-code images and evaluated under uniform,
//! Gaussian and salt-and-pepper noise.

pub mod checkpoint;
pub mod dataset;
mod error;
pub mod eval;
pub mod gradcam;
pub mod image;
pub mod metrics;
pub mod model;
pub mod morse;
pub mod rng;
pub mod train;

pub use error::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;
