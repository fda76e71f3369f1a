//! Squeeze-excitation channel attention.
//!
//! The block computes one scale per channel from globally pooled features:
//! mean-pool over all trailing positions, a two-layer bottleneck MLP
//! (reduction rounded up), and a sigmoid. The input is then multiplied
//! channel-wise by the resulting scale vector. The scales are part of the
//! forward result so callers can log them or test against them, and the two
//! MLP weight matrices are the exact target set of the training-time l1
//! penalty, selected by their `.fc1.weight` / `.fc2.weight` registry ids.

use crate::error::{Error, Result};
use crate::layers::activ::sigmoid_scalar;
use crate::rng::Prng;
use crate::tensor::{Parameter, Tensor};

/// Dense layer on plain vectors; weight layout `[n_out, n_in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new(rng: &mut Prng, id: &str, n_in: usize, n_out: usize) -> Linear {
        let bound = (6.0 / n_in as f64).sqrt();
        let wdata = (0..n_out * n_in).map(|_| rng.range(-bound, bound)).collect();
        Linear {
            weight: Parameter::new(
                format!("{id}.weight"),
                Tensor::new(&[n_out, n_in], wdata).expect("linear weight shape"),
            ),
            bias: Parameter::new(
                format!("{id}.bias"),
                Tensor::zeros(&[n_out]).expect("linear bias shape"),
            ),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        let (n_out, n_in) = (self.n_out(), self.n_in());
        debug_assert_eq!(x.len(), n_in);
        let w = self.weight.value.data();
        let b = self.bias.value.data();
        (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                b[o] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates weight/bias gradients and writes the input gradient.
    pub fn backward_vec(&mut self, x: &[f64], dy: &[f64], dx: &mut [f64]) {
        let (n_out, n_in) = (self.n_out(), self.n_in());
        debug_assert_eq!(x.len(), n_in);
        debug_assert_eq!(dy.len(), n_out);
        debug_assert_eq!(dx.len(), n_in);
        let dw = self.weight.grad.data_mut();
        for o in 0..n_out {
            let g = dy[o];
            let row = &mut dw[o * n_in..(o + 1) * n_in];
            for (wi, xi) in row.iter_mut().zip(x) {
                *wi += g * xi;
            }
        }
        let db = self.bias.grad.data_mut();
        for (bi, g) in db.iter_mut().zip(dy) {
            *bi += g;
        }
        let w = self.weight.value.data();
        dx.fill(0.0);
        for o in 0..n_out {
            let g = dy[o];
            let row = &w[o * n_in..(o + 1) * n_in];
            for (di, wi) in dx.iter_mut().zip(row) {
                *di += g * wi;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeBlock {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Forward intermediates: pooled means, bottleneck pre-activation and
/// activation, and the final channel scales.
#[derive(Debug, Clone)]
pub struct SeCache {
    pooled: Vec<f64>,
    pre1: Vec<f64>,
    hidden: Vec<f64>,
    scale: Vec<f64>,
}

impl SeCache {
    /// The per-channel multipliers applied to the input, each in (0, 1).
    pub fn scale(&self) -> &[f64] {
        &self.scale
    }
}

impl SeBlock {
    /// `reduction` divides the channel count for the bottleneck width,
    /// rounding up so one channel still gets a one-wide bottleneck.
    pub fn new(rng: &mut Prng, id: &str, channels: usize, reduction: usize) -> SeBlock {
        let hidden = channels.div_ceil(reduction);
        SeBlock {
            fc1: Linear::new(rng, &format!("{id}.fc1"), channels, hidden),
            fc2: Linear::new(rng, &format!("{id}.fc2"), hidden, channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.fc1.n_in()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.ndim() < 2 || x.shape()[0] != self.channels() {
            return Err(Error::ShapeMismatch {
                op: "se_block",
                left: vec![self.channels()],
                right: x.shape().to_vec(),
            });
        }
        x.assert_finite("se_block input")
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, SeCache)> {
        self.check_input(x)?;
        let c = self.channels();
        let spatial = x.numel() / c;
        let inv = 1.0 / spatial as f64;
        let xd = x.data();
        let pooled: Vec<f64> = (0..c)
            .map(|ch| xd[ch * spatial..(ch + 1) * spatial].iter().sum::<f64>() * inv)
            .collect();
        let pre1 = self.fc1.forward_vec(&pooled);
        let hidden: Vec<f64> = pre1.iter().map(|&v| v.max(0.0)).collect();
        let pre2 = self.fc2.forward_vec(&hidden);
        let scale: Vec<f64> = pre2.iter().map(|&v| sigmoid_scalar(v)).collect();
        let mut out = vec![0.0; x.numel()];
        for ch in 0..c {
            let s = scale[ch];
            let src = &xd[ch * spatial..(ch + 1) * spatial];
            let dst = &mut out[ch * spatial..(ch + 1) * spatial];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v * s;
            }
        }
        let y = Tensor::new(x.shape(), out)?;
        y.assert_finite("se_block output")?;
        Ok((
            y,
            SeCache {
                pooled,
                pre1,
                hidden,
                scale,
            },
        ))
    }

    /// `x` must be the exact forward input.
    pub fn backward(&mut self, x: &Tensor, cache: &SeCache, dy: &Tensor) -> Result<Tensor> {
        if dy.shape() != x.shape() {
            return Err(Error::ShapeMismatch {
                op: "se_block backward",
                left: x.shape().to_vec(),
                right: dy.shape().to_vec(),
            });
        }
        let c = self.channels();
        let spatial = x.numel() / c;
        let xd = x.data();
        let dyd = dy.data();
        // Scale path: the scalar gradient per channel.
        let mut dscale = vec![0.0; c];
        for ch in 0..c {
            let mut acc = 0.0;
            for p in 0..spatial {
                acc += dyd[ch * spatial + p] * xd[ch * spatial + p];
            }
            dscale[ch] = acc;
        }
        let dpre2: Vec<f64> = dscale
            .iter()
            .zip(&cache.scale)
            .map(|(&g, &s)| g * s * (1.0 - s))
            .collect();
        let mut dhidden = vec![0.0; cache.hidden.len()];
        self.fc2.backward_vec(&cache.hidden, &dpre2, &mut dhidden);
        let dpre1: Vec<f64> = dhidden
            .iter()
            .zip(&cache.pre1)
            .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
            .collect();
        let mut dpooled = vec![0.0; c];
        self.fc1.backward_vec(&cache.pooled, &dpre1, &mut dpooled);
        // Input gradient: direct multiply path plus the pooled path.
        let inv = 1.0 / spatial as f64;
        let mut dx = vec![0.0; x.numel()];
        for ch in 0..c {
            let s = cache.scale[ch];
            let dp = dpooled[ch] * inv;
            for p in 0..spatial {
                dx[ch * spatial + p] = dyd[ch * spatial + p] * s + dp;
            }
        }
        Tensor::new(x.shape(), dx)
    }
}
