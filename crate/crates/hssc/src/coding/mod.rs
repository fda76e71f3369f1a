//! Quantization, probability modeling and entropy coding of latents.
//!
//! The pipeline from a continuous latent image to bytes runs through three
//! stages that this module keeps deliberately separate:
//!
//! 1. [`quantize`] rounds latents to integers on the shared symmetric
//!    support;
//! 2. [`FactorizedEntropyModel`] assigns each integer a probability through a
//!    small monotone network per channel, learned jointly with the codec so
//!    the rate term of the training objective is the true code length;
//! 3. [`RangeEncoder`]/[`RangeDecoder`] turn symbols and integer frequency
//!    tables (built by [`apportion`]) into the actual byte stream.
//!
//! Encoder and decoder rebuild the frequency tables independently from the
//! same model parameters, so the only thing transmitted is the coded payload.

mod freq;
mod model;
mod quant;
mod range;
mod stream;

pub use freq::{apportion, CumTable};
pub use model::{FactorizedEntropyModel, RateLossCache, PROB_FLOOR};
pub use quant::{quantize, symbol_of, value_of, QuantStats};
pub use range::{RangeDecoder, RangeEncoder, MAX_TOTAL};
pub use stream::{decode_latents, encode_latents};

/// Half-width of the symmetric integer support for quantized latents.
pub const LATENT_BOUND: i32 = 64;

/// Number of coded symbols: every integer in `[-LATENT_BOUND, LATENT_BOUND]`.
pub const NUM_SYMBOLS: usize = 2 * LATENT_BOUND as usize + 1;
