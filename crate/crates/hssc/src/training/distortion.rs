//! The distortion term of the training objective.
//!
//! Distortion between an original cube and its reconstruction is a weighted
//! sum of three differentiable pieces: mean squared error, `1 - SSIM`, and
//! the random-feature perceptual distance. All three are always evaluated,
//! so the cubes must be at least as large as the SSIM window.

use crate::error::{Error, Result};
use crate::evalio::ssim::{ssim_backward, ssim_forward, SsimCache};
use crate::tensor::Tensor;
use crate::training::features::{FeatureCache, FeatureDistance};
use crate::training::LossWeights;

/// The individual pieces of one distortion evaluation, before weighting.
#[derive(Debug, Clone, Copy)]
pub struct DistortionTerms {
    pub mse: f64,
    pub ssim: f64,
    pub features: f64,
    /// The weighted sum the objective uses.
    pub value: f64,
}

pub struct DistortionCache {
    ssim: SsimCache,
    features: FeatureCache,
    /// Reconstruction minus original, for the MSE gradient.
    diff: Tensor,
}

/// Evaluates the weighted distortion between `x` and its reconstruction
/// `recon`, keeping what the backward pass needs.
pub fn distortion(
    proxy: &FeatureDistance,
    x: &Tensor,
    recon: &Tensor,
    weights: &LossWeights,
) -> Result<(DistortionTerms, DistortionCache)> {
    if x.shape() != recon.shape() {
        return Err(Error::ShapeMismatch {
            op: "distortion",
            left: x.shape().to_vec(),
            right: recon.shape().to_vec(),
        });
    }
    let diff = recon.sub(x)?;
    let mse = diff.data().iter().map(|d| d * d).sum::<f64>() / diff.numel() as f64;
    let (ssim_value, ssim_cache) = ssim_forward(x, recon)?;
    let (feat, feat_cache) = proxy.forward(x, recon)?;
    let value = weights.theta1 * mse + weights.theta2 * (1.0 - ssim_value) + weights.theta3 * feat;
    Ok((
        DistortionTerms {
            mse,
            ssim: ssim_value,
            features: feat,
            value,
        },
        DistortionCache {
            ssim: ssim_cache,
            features: feat_cache,
            diff,
        },
    ))
}

/// Gradient of `d_value * distortion` with respect to the reconstruction.
pub fn distortion_backward(
    proxy: &mut FeatureDistance,
    cache: &DistortionCache,
    weights: &LossWeights,
    d_value: f64,
) -> Result<Tensor> {
    let n = cache.diff.numel() as f64;
    let mut grad = cache.diff.scale(d_value * weights.theta1 * 2.0 / n);
    // The objective carries 1 - SSIM, so the SSIM gradient enters negated.
    grad.add_assign(&ssim_backward(&cache.ssim, -d_value * weights.theta2))?;
    grad.add_assign(&proxy.backward(&cache.features, d_value * weights.theta3)?)?;
    Ok(grad)
}
