//! The conditioned discriminator: scores reconstructions against originals.
//!
//! The latent grid is the condition. A small convolution lifts it to a
//! feature map, nearest-neighbor upsampling by 16 brings it to image
//! resolution, and the features are concatenated in front of the image's
//! bands. Four leaky-rectified 4x4 convolutions (three stride 2, one
//! stride 1) and a 1x1 sigmoid head produce a grid of patch probabilities
//! at one eighth of the image resolution.

use crate::error::{Error, Result};
use crate::layers::{
    leaky_relu, leaky_relu_backward, nn_upsample, nn_upsample_backward, sigmoid,
    sigmoid_backward, Conv2d, LEAKY_SLOPE,
};
use crate::networks::config::{ModelConfig, DISC_BASE, DISC_Y_BASE, SPATIAL_FACTOR};
use crate::networks::parts::{concat_channels, split_channels};
use crate::rng::Prng;
use crate::tensor::{Parameter, Tensor};

const FORK_Y_CONV: u64 = 300;
const FORK_STAGE: u64 = 301;
const FORK_OUT: u64 = 305;

#[derive(Debug, Clone)]
pub struct DiscriminatorNet {
    img_bands: usize,
    latent_channels: usize,
    y_channels: usize,
    y_conv: Conv2d,
    stages: Vec<Conv2d>,
    out: Conv2d,
}

#[derive(Debug, Clone)]
pub struct DiscCache {
    y: Tensor,
    /// Latent feature map before its rectifier.
    f_pre: Tensor,
    /// Inputs to each stage convolution; `stage_x[0]` is the concatenation.
    stage_x: Vec<Tensor>,
    /// Pre-rectifier outputs of each stage.
    pre: Vec<Tensor>,
    out_x: Tensor,
    prob: Tensor,
}

impl DiscCache {
    /// The probability grid this cache belongs to.
    pub fn prob(&self) -> &Tensor {
        &self.prob
    }
}

impl DiscriminatorNet {
    pub fn new(cfg: &ModelConfig, master: &Prng) -> DiscriminatorNet {
        let bands = cfg.input_bands();
        let latent = cfg.latent_channels();
        let y_channels = cfg.scaled(DISC_Y_BASE);
        let w: Vec<usize> = DISC_BASE.iter().map(|&b| cfg.scaled(b)).collect();

        let y_conv = Conv2d::new(
            &mut master.fork(FORK_Y_CONV),
            "disc.y_conv",
            latent,
            y_channels,
            3,
            1,
        );
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            let c_in = if i == 0 { y_channels + bands } else { w[i - 1] };
            let stride = if i < 3 { 2 } else { 1 };
            stages.push(Conv2d::new(
                &mut master.fork(FORK_STAGE + i as u64),
                &format!("disc.stage{}", i + 1),
                c_in,
                w[i],
                4,
                stride,
            ));
        }
        let out = Conv2d::new(&mut master.fork(FORK_OUT), "disc.out", w[3], 1, 1, 1);

        DiscriminatorNet {
            img_bands: bands,
            latent_channels: latent,
            y_channels,
            y_conv,
            stages,
            out,
        }
    }

    /// Patch probabilities for an image cube under its latent condition:
    /// `[bands, H, W]` and `[latent, H/16, W/16]` to `[1, H/8, W/8]`.
    pub fn forward(&self, x: &Tensor, y: &Tensor) -> Result<(Tensor, DiscCache)> {
        if x.ndim() != 3 || x.shape()[0] != self.img_bands {
            return Err(Error::ShapeMismatch {
                op: "discriminator image",
                left: vec![self.img_bands],
                right: x.shape().to_vec(),
            });
        }
        if y.ndim() != 3
            || y.shape()[0] != self.latent_channels
            || y.shape()[1] * SPATIAL_FACTOR != x.shape()[1]
            || y.shape()[2] * SPATIAL_FACTOR != x.shape()[2]
        {
            return Err(Error::ShapeMismatch {
                op: "discriminator condition",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }

        let f_pre = self.y_conv.forward(y)?;
        let f = leaky_relu(&f_pre, LEAKY_SLOPE);
        let up = nn_upsample(&f, SPATIAL_FACTOR)?;
        let cat = concat_channels(&up, x)?;

        let mut stage_x = Vec::with_capacity(self.stages.len());
        let mut pre = Vec::with_capacity(self.stages.len());
        let mut cur = cat;
        for conv in &self.stages {
            let p = conv.forward(&cur)?;
            let next = leaky_relu(&p, LEAKY_SLOPE);
            stage_x.push(cur);
            pre.push(p);
            cur = next;
        }
        let logit = self.out.forward(&cur)?;
        let prob = sigmoid(&logit);

        Ok((
            prob.clone(),
            DiscCache {
                y: y.clone(),
                f_pre,
                stage_x,
                pre,
                out_x: cur,
                prob,
            },
        ))
    }

    /// Gradients with respect to both inputs, given the gradient of a
    /// scalar loss with respect to the probability grid.
    pub fn backward(&mut self, cache: &DiscCache, dprob: &Tensor) -> Result<(Tensor, Tensor)> {
        let dlogit = sigmoid_backward(&cache.prob, dprob);
        let mut d = self.out.backward(&cache.out_x, &dlogit)?;
        for (conv, (x_in, p)) in self
            .stages
            .iter_mut()
            .zip(cache.stage_x.iter().zip(&cache.pre))
            .rev()
        {
            let dp = leaky_relu_backward(p, &d, LEAKY_SLOPE);
            d = conv.backward(x_in, &dp)?;
        }
        let (dup, dx) = split_channels(&d, self.y_channels)?;
        let df = nn_upsample_backward(&dup, SPATIAL_FACTOR, cache.f_pre.shape())?;
        let df_pre = leaky_relu_backward(&cache.f_pre, &df, LEAKY_SLOPE);
        let dy = self.y_conv.backward(&cache.y, &df_pre)?;
        Ok((dx, dy))
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.y_conv.weight);
        f(&self.y_conv.bias);
        for conv in &self.stages {
            f(&conv.weight);
            f(&conv.bias);
        }
        f(&self.out.weight);
        f(&self.out.bias);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.y_conv.weight);
        f(&mut self.y_conv.bias);
        for conv in &mut self.stages {
            f(&mut conv.weight);
            f(&mut conv.bias);
        }
        f(&mut self.out.weight);
        f(&mut self.out.bias);
    }
}
