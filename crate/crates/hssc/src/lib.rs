//! Learned compression of hyperspectral image cubes.
//!
//! This crate implements a complete spatio-spectral codec: a convolutional
//! encoder maps a cube of `B` spectral bands to a compact latent image, the
//! latent is quantized and arithmetic-coded into a real bitstream under a
//! learned probability model, and a generator network (trained adversarially
//! against a conditional discriminator) reconstructs the cube. Everything is
//! self-contained: tensors, layers, backpropagation, the entropy coder, the
//! training loop, metrics, synthetic data and a command-line frontend.
//!
//! The implementation favors verifiability over raw speed. All math runs in
//! `f64`, every backward pass is validated against central differences, and
//! every file format is byte-exact and documented next to its reader.

pub mod cli;
pub mod codec;
pub mod coding;
pub mod error;
pub mod evalio;
pub mod grad_check;
pub mod layers;
pub mod networks;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
