//! Latent quantization.
//!
//! Latents are rounded half away from zero to integers and clamped to the
//! symmetric support `[-LATENT_BOUND, LATENT_BOUND]` the entropy model and
//! coder share. Clamping events are counted so callers can notice a model
//! whose latents have outgrown the support.
//!
//! During training the rounding is bypassed in the backward direction: the
//! quantizer's Jacobian is taken as the identity (straight-through), so the
//! gradient of anything downstream of `quantize` flows to the unquantized
//! latent unchanged. That convention lives in the training loop; this module
//! only provides the forward mapping.

use crate::coding::LATENT_BOUND;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct QuantStats {
    /// Elements that hit the clamp.
    pub saturated: usize,
    /// Total elements quantized.
    pub count: usize,
}

/// Rounds every element half away from zero and clamps it to the coder
/// support.
pub fn quantize(y: &Tensor) -> (Tensor, QuantStats) {
    let bound = f64::from(LATENT_BOUND);
    let mut saturated = 0usize;
    let mut q = y.clone();
    for v in q.data_mut() {
        let r = v.round();
        *v = if r > bound {
            saturated += 1;
            bound
        } else if r < -bound {
            saturated += 1;
            -bound
        } else {
            r
        };
    }
    let stats = QuantStats {
        saturated,
        count: y.numel(),
    };
    (q, stats)
}

/// Maps a quantized value to its symbol index in `[0, 2 * LATENT_BOUND]`.
pub fn symbol_of(q: f64) -> usize {
    (q as i64 + i64::from(LATENT_BOUND)) as usize
}

/// Inverse of [`symbol_of`].
pub fn value_of(symbol: usize) -> f64 {
    symbol as f64 - f64::from(LATENT_BOUND)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::NUM_SYMBOLS;

    #[test]
    fn rounds_half_away_from_zero() {
        let y = Tensor::new(&[7], vec![0.5, -0.5, 2.5, -2.5, 1.4, -1.6, 0.0]).unwrap();
        let (q, stats) = quantize(&y);
        assert_eq!(q.data(), &[1.0, -1.0, 3.0, -3.0, 1.0, -2.0, 0.0]);
        assert_eq!(stats.saturated, 0);
        assert_eq!(stats.count, 7);
    }

    #[test]
    fn clamps_and_counts_saturation() {
        let y = Tensor::new(&[4], vec![100.0, -900.0, 64.4, -64.6]).unwrap();
        let (q, stats) = quantize(&y);
        assert_eq!(q.data(), &[64.0, -64.0, 64.0, -64.0]);
        // 64.4 rounds to 64 inside the support; -64.6 rounds to -65 and
        // clamps.
        assert_eq!(stats.saturated, 3);
    }

    #[test]
    fn symbol_mapping_is_a_bijection_over_the_support() {
        for s in 0..NUM_SYMBOLS {
            assert_eq!(symbol_of(value_of(s)), s);
        }
        assert_eq!(symbol_of(-64.0), 0);
        assert_eq!(symbol_of(0.0), 64);
        assert_eq!(symbol_of(64.0), NUM_SYMBOLS - 1);
    }
}
