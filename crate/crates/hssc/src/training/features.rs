//! Random-feature perceptual distance.
//!
//! A fixed three-layer convolutional feature extractor maps both images
//! through band -> 8 -> 8 -> 8 channel 3x3 stages with ReLU between them.
//! After each stage the features are unit-normalized along the channel axis
//! and the squared differences are averaged, so the distance compares the
//! direction of local feature responses rather than their magnitude. This
//! keeps the "distance in feature space" structure of learned perceptual
//! metrics without any pretrained weights: the extractor is seeded from a
//! constant, frozen, and identical in every build.
//!
//! The extractor's weights never train. Its conv layers still accumulate
//! gradients internally during the backward pass (the layer code computes
//! them along the way); they are cleared on every call and no optimizer ever
//! sees them.

use crate::error::{Error, Result};
use crate::layers::{relu, relu_backward, Conv2d};
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Width of every feature stage.
pub const FEATURE_CHANNELS: usize = 8;
/// Seed of the frozen extractor. Changing it redefines the distance, so it
/// is fixed for the life of the format.
const FEATURE_SEED: u64 = 2_718_281_828;
/// Keeps the channel normalization finite where all features are zero.
const NORM_EPS: f64 = 1e-10;

/// One image's trip through the extractor: per stage the pre-activation,
/// the post-ReLU features, the per-position norms and the normalized
/// features.
struct Pass {
    pre: Vec<Tensor>,
    act: Vec<Tensor>,
    norms: Vec<Vec<f64>>,
    unit: Vec<Tensor>,
}

/// What the backward pass needs: both trips plus the input that produced
/// the second one.
pub struct FeatureCache {
    reference: Pass,
    candidate: Pass,
    input: Tensor,
}

/// Frozen random-feature extractor for a fixed band count.
#[derive(Debug, Clone)]
pub struct FeatureDistance {
    convs: Vec<Conv2d>,
}

impl FeatureDistance {
    /// Builds the extractor for images with `bands` channels. Two calls with
    /// the same band count produce bit-identical weights.
    pub fn new(bands: usize) -> FeatureDistance {
        let master = Prng::new(FEATURE_SEED);
        let widths = [bands, FEATURE_CHANNELS, FEATURE_CHANNELS, FEATURE_CHANNELS];
        let convs = (0..3)
            .map(|i| {
                let mut rng = master.fork(1 + i as u64);
                let id = format!("feat.c{}", i + 1);
                Conv2d::new(&mut rng, &id, widths[i], widths[i + 1], 3, 1)
            })
            .collect();
        FeatureDistance { convs }
    }

    pub fn bands(&self) -> usize {
        self.convs[0].c_in()
    }

    /// Unit-normalizes along the channel axis at every spatial position,
    /// returning the normalized tensor and the per-position norms.
    fn normalize(x: &Tensor) -> (Tensor, Vec<f64>) {
        let channels = x.shape()[0];
        let plane = x.numel() / channels;
        let mut out = x.clone();
        let mut norms = vec![0.0; plane];
        for (p, norm) in norms.iter_mut().enumerate() {
            let mut s = 0.0;
            for c in 0..channels {
                let v = x.data()[c * plane + p];
                s += v * v;
            }
            *norm = (s + NORM_EPS).sqrt();
            for c in 0..channels {
                out.data_mut()[c * plane + p] /= *norm;
            }
        }
        (out, norms)
    }

    fn run(&self, x: &Tensor) -> Result<Pass> {
        let mut pass = Pass {
            pre: Vec::with_capacity(3),
            act: Vec::with_capacity(3),
            norms: Vec::with_capacity(3),
            unit: Vec::with_capacity(3),
        };
        let mut cur = x.clone();
        for conv in &self.convs {
            let pre = conv.forward(&cur)?;
            let act = relu(&pre);
            let (unit, norms) = Self::normalize(&act);
            cur = act.clone();
            pass.pre.push(pre);
            pass.act.push(act);
            pass.norms.push(norms);
            pass.unit.push(unit);
        }
        Ok(pass)
    }

    /// Mean squared difference of unit-normalized features, averaged over
    /// the three stages. Zero exactly when both inputs match.
    pub fn forward(&self, x: &Tensor, y: &Tensor) -> Result<(f64, FeatureCache)> {
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                op: "feature distance",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        if x.ndim() != 3 || x.shape()[0] != self.bands() {
            return Err(Error::config(format!(
                "feature distance expects [{}, height, width] cubes, got {:?}",
                self.bands(),
                x.shape()
            )));
        }
        let reference = self.run(x)?;
        let candidate = self.run(y)?;
        let mut total = 0.0;
        for l in 0..3 {
            let a = reference.unit[l].data();
            let b = candidate.unit[l].data();
            let sq: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
            total += sq / a.len() as f64;
        }
        Ok((
            total / 3.0,
            FeatureCache {
                reference,
                candidate,
                input: y.clone(),
            },
        ))
    }

    /// Gradient of `d_value * distance` with respect to the second forward
    /// argument. The first argument is treated as the fixed reference.
    pub fn backward(&mut self, cache: &FeatureCache, d_value: f64) -> Result<Tensor> {
        let mut d_act: Option<Tensor> = None;
        for l in (0..3).rev() {
            let unit_y = &cache.candidate.unit[l];
            let unit_x = &cache.reference.unit[l];
            let channels = unit_y.shape()[0];
            let plane = unit_y.numel() / channels;
            let scale = d_value * 2.0 / (3.0 * unit_y.numel() as f64);
            // Tap contribution through the normalization: for n = f / r the
            // pullback of dn is (dn - n (n . dn)) / r per position.
            let mut d_feat = Tensor::zeros(unit_y.shape())?;
            for p in 0..plane {
                let r = cache.candidate.norms[l][p];
                let mut dot = 0.0;
                for c in 0..channels {
                    let dn = scale * (unit_y.data()[c * plane + p] - unit_x.data()[c * plane + p]);
                    dot += unit_y.data()[c * plane + p] * dn;
                }
                for c in 0..channels {
                    let i = c * plane + p;
                    let dn = scale * (unit_y.data()[i] - unit_x.data()[i]);
                    d_feat.data_mut()[i] = (dn - unit_y.data()[i] * dot) / r;
                }
            }
            if let Some(from_above) = d_act.take() {
                d_feat.add_assign(&from_above)?;
            }
            let d_pre = relu_backward(&cache.candidate.pre[l], &d_feat);
            let below = if l == 0 {
                &cache.input
            } else {
                &cache.candidate.act[l - 1]
            };
            d_act = Some(self.convs[l].backward(below, &d_pre)?);
        }
        for conv in &mut self.convs {
            conv.weight.zero_grad();
            conv.bias.zero_grad();
        }
        Ok(d_act.expect("three stages were walked"))
    }
}
