//! Channel normalization.
//!
//! Normalizes across the channel axis independently at every trailing
//! position: for a `[C, ...]` tensor, each column of `C` values is shifted
//! to zero mean and scaled to unit variance, then an affine per-channel gain
//! and offset are applied. Unlike batch normalization there are no running
//! statistics, so train and eval behavior coincide and outputs never depend
//! on batch composition. Works unchanged on `[C, H, W]` planes and
//! `[C, D, H, W]` volumes.

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

#[derive(Debug, Clone)]
pub struct ChannelNorm {
    pub gain: Parameter,
    pub offset: Parameter,
    pub eps: f64,
}

/// Intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ChannelNormCache {
    /// Normalized pre-affine values, same shape as the input.
    xhat: Tensor,
    /// Reciprocal standard deviation per trailing position.
    inv_std: Vec<f64>,
}

impl ChannelNorm {
    /// Gain starts at one and offset at zero, so a fresh layer is the plain
    /// normalization.
    pub fn new(id: &str, channels: usize) -> ChannelNorm {
        ChannelNorm {
            gain: Parameter::new(
                format!("{id}.gain"),
                Tensor::full(&[channels], 1.0).expect("norm gain shape"),
            ),
            offset: Parameter::new(
                format!("{id}.offset"),
                Tensor::zeros(&[channels]).expect("norm offset shape"),
            ),
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gain.value.shape()[0]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.ndim() < 2 || x.shape()[0] != self.channels() {
            return Err(Error::ShapeMismatch {
                op: "channel_norm",
                left: vec![self.channels()],
                right: x.shape().to_vec(),
            });
        }
        x.assert_finite("channel_norm input")
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ChannelNormCache)> {
        self.check_input(x)?;
        let c = self.channels();
        let spatial = x.numel() / c;
        let xd = x.data();
        let mut xhat = vec![0.0; x.numel()];
        let mut out = vec![0.0; x.numel()];
        let mut inv_std = vec![0.0; spatial];
        let inv_c = 1.0 / c as f64;
        let gain = self.gain.value.data();
        let offset = self.offset.value.data();
        for p in 0..spatial {
            let mut mean = 0.0;
            for ch in 0..c {
                mean += xd[ch * spatial + p];
            }
            mean *= inv_c;
            let mut var = 0.0;
            for ch in 0..c {
                let d = xd[ch * spatial + p] - mean;
                var += d * d;
            }
            var *= inv_c;
            let s = 1.0 / (var + self.eps).sqrt();
            inv_std[p] = s;
            for ch in 0..c {
                let h = (xd[ch * spatial + p] - mean) * s;
                xhat[ch * spatial + p] = h;
                out[ch * spatial + p] = gain[ch] * h + offset[ch];
            }
        }
        let y = Tensor::new(x.shape(), out)?;
        y.assert_finite("channel_norm output")?;
        Ok((
            y,
            ChannelNormCache {
                xhat: Tensor::new(x.shape(), xhat)?,
                inv_std,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ChannelNormCache, dy: &Tensor) -> Result<Tensor> {
        if dy.shape() != cache.xhat.shape() {
            return Err(Error::ShapeMismatch {
                op: "channel_norm backward",
                left: cache.xhat.shape().to_vec(),
                right: dy.shape().to_vec(),
            });
        }
        let c = self.channels();
        let spatial = dy.numel() / c;
        let dyd = dy.data();
        let xh = cache.xhat.data();
        let gain = self.gain.value.data();
        let inv_c = 1.0 / c as f64;
        let dgain = self.gain.grad.data_mut();
        for ch in 0..c {
            let mut acc = 0.0;
            for p in 0..spatial {
                acc += dyd[ch * spatial + p] * xh[ch * spatial + p];
            }
            dgain[ch] += acc;
        }
        let doffset = self.offset.grad.data_mut();
        for ch in 0..c {
            let mut acc = 0.0;
            for p in 0..spatial {
                acc += dyd[ch * spatial + p];
            }
            doffset[ch] += acc;
        }
        let mut dx = vec![0.0; dy.numel()];
        for p in 0..spatial {
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for ch in 0..c {
                let dh = dyd[ch * spatial + p] * gain[ch];
                m1 += dh;
                m2 += dh * xh[ch * spatial + p];
            }
            m1 *= inv_c;
            m2 *= inv_c;
            let s = cache.inv_std[p];
            for ch in 0..c {
                let dh = dyd[ch * spatial + p] * gain[ch];
                dx[ch * spatial + p] = s * (dh - m1 - xh[ch * spatial + p] * m2);
            }
        }
        Tensor::new(dy.shape(), dx)
    }
}
