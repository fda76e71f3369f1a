//! The analysis network: maps an image cube to a compact latent grid.
//!
//! Five convolution stages take `[bands, H, W]` down to
//! `[latent, H/16, W/16]`: a stride-1 7x7 front, four stride-2 3x3
//! downsamplers, and a stride-1 3x3 projection onto the latent channels.
//! Every stage ends in a channel norm and a rectifier, so latents are
//! nonnegative. The variant decides the trimmings: squeeze-excitation
//! blocks after the input and the norms, or 3D convolutions that treat the
//! spectral axis as a true data dimension.

use crate::error::{Error, Result};
use crate::layers::{ChannelNorm, Conv2d, Conv3d, SeBlock, SeCache};
use crate::networks::config::{Conv3dPlacement, ModelConfig, SePlacement, Variant, ENC_BASE, SPATIAL_FACTOR};
use crate::networks::parts::{visit_se, visit_se_mut, AnyConv, Stage, StageCache};
use crate::rng::Prng;
use crate::tensor::{Parameter, Tensor};

/// Initialization streams; fixed so that a layer's weights do not depend on
/// which optional blocks exist around it.
const FORK_FRONT: u64 = 100;
const FORK_DOWN: u64 = 101;
const FORK_TAIL: u64 = 105;
const FORK_SE_INPUT: u64 = 110;
const FORK_SE_DOWN: u64 = 111;

#[derive(Debug, Clone)]
pub struct EncoderNet {
    in_bands: usize,
    latent_channels: usize,
    /// The front convolution runs on the spectral volume.
    volume_front: bool,
    /// The downsampling stack runs on the spectral volume too.
    volume_all: bool,
    se_input: Option<SeBlock>,
    front: Stage,
    downs: Vec<Stage>,
    tail: Stage,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    input: Option<Tensor>,
    se_input: Option<SeCache>,
    front: StageCache,
    downs: Vec<StageCache>,
    tail: StageCache,
}

impl EncoderNet {
    pub fn new(cfg: &ModelConfig, master: &Prng) -> EncoderNet {
        let bands = cfg.input_bands();
        let w: Vec<usize> = ENC_BASE.iter().map(|&b| cfg.scaled(b)).collect();
        let latent = cfg.latent_channels();
        let volume_front = cfg.variant == Variant::ThreeD;
        let volume_all =
            volume_front && cfg.conv3d_placement == Conv3dPlacement::All;

        // Every placement includes the input site; the wider two add one
        // block after each downsampling stage's norm.
        let se_on_input = cfg.variant == Variant::Se;
        let se_on_downs = se_on_input && cfg.se_placement != SePlacement::EncoderInitial;

        let front_conv = if volume_front {
            AnyConv::C3(Conv3d::new(
                &mut master.fork(FORK_FRONT),
                "enc.front",
                1,
                w[0],
                7,
                7,
                1,
            ))
        } else {
            AnyConv::C2(Conv2d::new(
                &mut master.fork(FORK_FRONT),
                "enc.front",
                bands,
                w[0],
                7,
                1,
            ))
        };
        let front = Stage {
            conv: front_conv,
            norm: ChannelNorm::new("enc.front.norm", w[0]),
            se: None,
        };

        let mut downs = Vec::with_capacity(4);
        for i in 0..4 {
            let id = format!("enc.down{}", i + 1);
            let rng = &mut master.fork(FORK_DOWN + i as u64);
            let conv = if volume_all {
                AnyConv::C3(Conv3d::new(rng, &id, w[i], w[i + 1], 3, 3, 2))
            } else {
                // After a volume front the spectral axis is folded into the
                // channels, so the first plane stage consumes bands * width.
                let c_in = if i == 0 && volume_front {
                    w[0] * bands
                } else {
                    w[i]
                };
                AnyConv::C2(Conv2d::new(rng, &id, c_in, w[i + 1], 3, 2))
            };
            let se = if se_on_downs {
                Some(SeBlock::new(
                    &mut master.fork(FORK_SE_DOWN + i as u64),
                    &format!("{id}.se"),
                    w[i + 1],
                    cfg.se_reduction,
                ))
            } else {
                None
            };
            downs.push(Stage {
                conv,
                norm: ChannelNorm::new(&format!("{id}.norm"), w[i + 1]),
                se,
            });
        }

        let tail_in = if volume_all { w[4] * bands } else { w[4] };
        let tail = Stage {
            conv: AnyConv::C2(Conv2d::new(
                &mut master.fork(FORK_TAIL),
                "enc.tail",
                tail_in,
                latent,
                3,
                1,
            )),
            norm: ChannelNorm::new("enc.tail.norm", latent),
            se: None,
        };

        let se_input = if se_on_input {
            Some(SeBlock::new(
                &mut master.fork(FORK_SE_INPUT),
                "enc.se_in",
                bands,
                cfg.se_reduction,
            ))
        } else {
            None
        };

        EncoderNet {
            in_bands: bands,
            latent_channels: latent,
            volume_front,
            volume_all,
            se_input,
            front,
            downs,
            tail,
        }
    }

    pub fn in_bands(&self) -> usize {
        self.in_bands
    }

    pub fn latent_channels(&self) -> usize {
        self.latent_channels
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if x.ndim() != 3 || s[0] != self.in_bands {
            return Err(Error::ShapeMismatch {
                op: "encoder input",
                left: vec![self.in_bands],
                right: s.to_vec(),
            });
        }
        if s[1] % SPATIAL_FACTOR != 0 || s[2] % SPATIAL_FACTOR != 0 {
            return Err(Error::config(format!(
                "encoder input {}x{} is not a multiple of {}",
                s[1], s[2], SPATIAL_FACTOR
            )));
        }
        Ok(())
    }

    /// `[bands, H, W]` to `[latent, H/16, W/16]` plus everything the
    /// backward pass needs.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, EncoderCache)> {
        self.check_input(x)?;
        let (h, w) = (x.shape()[1], x.shape()[2]);

        let (cur, input, se_input) = match &self.se_input {
            Some(se) => {
                let (s, cache) = se.forward(x)?;
                (s, Some(x.clone()), Some(cache))
            }
            None => (x.clone(), None, None),
        };

        let cur = if self.volume_front {
            cur.reshape(&[1, self.in_bands, h, w])?
        } else {
            cur
        };
        let (mut cur, front) = self.front.forward(&cur)?;
        if self.volume_front && !self.volume_all {
            let c = cur.shape()[0];
            cur = cur.reshape(&[c * self.in_bands, h, w])?;
        }

        let mut downs = Vec::with_capacity(self.downs.len());
        for stage in &self.downs {
            let (next, cache) = stage.forward(&cur)?;
            cur = next;
            downs.push(cache);
        }

        if self.volume_all {
            let s = cur.shape().to_vec();
            cur = cur.reshape(&[s[0] * s[1], s[2], s[3]])?;
        }
        let (y, tail) = self.tail.forward(&cur)?;

        Ok((
            y,
            EncoderCache {
                input,
                se_input,
                front,
                downs,
                tail,
            },
        ))
    }

    /// Gradient of a scalar loss with respect to the input cube, given its
    /// gradient `dy` with respect to the latent. Accumulates parameter
    /// gradients along the way.
    pub fn backward(&mut self, cache: &EncoderCache, dy: &Tensor) -> Result<Tensor> {
        let mut d = self.tail.backward(&cache.tail, dy)?;
        if self.volume_all {
            let s = d.shape().to_vec();
            d = d.reshape(&[s[0] / self.in_bands, self.in_bands, s[1], s[2]])?;
        }
        for (stage, sc) in self.downs.iter_mut().zip(&cache.downs).rev() {
            d = stage.backward(sc, &d)?;
        }
        if self.volume_front && !self.volume_all {
            let s = d.shape().to_vec();
            d = d.reshape(&[s[0] / self.in_bands, self.in_bands, s[1], s[2]])?;
        }
        let mut d = self.front.backward(&cache.front, &d)?;
        if self.volume_front {
            let s = d.shape().to_vec();
            d = d.reshape(&[s[1], s[2], s[3]])?;
        }
        match (&mut self.se_input, &cache.input, &cache.se_input) {
            (Some(se), Some(x), Some(sc)) => se.backward(x, sc, &d),
            _ => Ok(d),
        }
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        if let Some(se) = &self.se_input {
            visit_se(se, f);
        }
        self.front.visit(f);
        for stage in &self.downs {
            stage.visit(f);
        }
        self.tail.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        if let Some(se) = &mut self.se_input {
            visit_se_mut(se, f);
        }
        self.front.visit_mut(f);
        for stage in &mut self.downs {
            stage.visit_mut(f);
        }
        self.tail.visit_mut(f);
    }
}
