//! Coding whole latent grids.
//!
//! [`encode_latents`] and [`decode_latents`] connect the learned probability
//! model to the range coder: each channel's pmf becomes an integer frequency
//! table, and the symbols stream through in channel-major, row-major order.
//! Both sides rebuild the tables from the model parameters alone, so the
//! payload carries nothing but coded symbols. The two are exact inverses for
//! any model state, which is the property that makes the bottleneck lossless.

use crate::coding::freq::{apportion, CumTable};
use crate::coding::model::FactorizedEntropyModel;
use crate::coding::range::{RangeDecoder, RangeEncoder, MAX_TOTAL};
use crate::coding::{symbol_of, value_of, LATENT_BOUND};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_grid(model: &FactorizedEntropyModel, shape: &[usize]) -> Result<usize> {
    if shape.len() < 2 || shape[0] != model.channels() {
        return Err(Error::ShapeMismatch {
            op: "latent coding",
            left: vec![model.channels()],
            right: shape.to_vec(),
        });
    }
    Ok(shape.iter().skip(1).product())
}

fn channel_table(model: &FactorizedEntropyModel, channel: usize) -> Result<CumTable> {
    let pmf = model.pmf(channel)?;
    CumTable::new(&apportion(&pmf, MAX_TOTAL)?)
}

/// Entropy-codes a quantized latent grid shaped `[channels, ...]`.
pub fn encode_latents(model: &FactorizedEntropyModel, q: &Tensor) -> Result<Vec<u8>> {
    let spatial = check_grid(model, q.shape())?;
    let mut enc = RangeEncoder::new();
    for c in 0..model.channels() {
        let table = channel_table(model, c)?;
        for e in 0..spatial {
            let v = q.data()[c * spatial + e];
            if v.fract() != 0.0 || v.abs() > f64::from(LATENT_BOUND) {
                return Err(Error::codec(format!(
                    "latent value {v} is not a symbol on the coder support"
                )));
            }
            let (cum, freq) = table.entry(symbol_of(v));
            enc.encode(cum, freq, table.total());
        }
    }
    Ok(enc.finish())
}

/// Decodes a latent grid of the given shape from a coded payload.
///
/// The model must hold bit-identical parameters to the encoding side; the
/// tables are rebuilt, not transmitted.
pub fn decode_latents(
    model: &FactorizedEntropyModel,
    bytes: &[u8],
    shape: &[usize],
) -> Result<Tensor> {
    let spatial = check_grid(model, shape)?;
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Tensor::zeros(shape)?;
    for c in 0..model.channels() {
        let table = channel_table(model, c)?;
        for e in 0..spatial {
            let slot = dec.target(table.total())?;
            let symbol = table.find(slot);
            let (cum, freq) = table.entry(symbol);
            dec.decode(cum, freq, table.total())?;
            out.data_mut()[c * spatial + e] = value_of(symbol);
        }
    }
    Ok(out)
}
