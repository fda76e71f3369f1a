//! The synthesis network: decodes a latent grid back into an image cube.
//!
//! A normed 3x3 head lifts the latent onto the widest channel count, nine
//! residual blocks refine it under a long additive skip, four stride-2
//! transposed convolutions rebuild the spatial resolution, and a 7x7 back
//! projection produces the cube. There is no output activation; the codec
//! clamps to [0, 1] when it writes pixels. Variants mirror the encoder:
//! squeeze-excitation after the upsampling norms, or 3D stages on the
//! spectral volume.

use crate::error::{Error, Result};
use crate::layers::{
    ChannelNorm, ChannelNormCache, Conv2d, Conv3d, ConvT2d, ConvT3d, ResidualBlock,
    ResidualBlock3d, SeBlock,
};
use crate::networks::config::{Conv3dPlacement, ModelConfig, SePlacement, Variant, ENC_BASE};
use crate::networks::parts::{AnyBlock, AnyBlockCache, AnyConv, Stage, StageCache};
use crate::rng::Prng;
use crate::tensor::{Parameter, Tensor};

const FORK_HEAD: u64 = 200;
const FORK_BLOCK: u64 = 201;
const FORK_UP: u64 = 210;
const FORK_BACK: u64 = 214;
const FORK_SE_UP: u64 = 220;

#[derive(Debug, Clone)]
pub struct GeneratorNet {
    out_bands: usize,
    latent_channels: usize,
    /// The back convolution runs on the spectral volume.
    volume_back: bool,
    /// Blocks and upsampling stages run on the spectral volume too.
    volume_all: bool,
    norm_in: ChannelNorm,
    head_conv: Conv2d,
    head_norm: ChannelNorm,
    blocks: Vec<AnyBlock>,
    ups: Vec<Stage>,
    back: AnyConv,
}

#[derive(Debug, Clone)]
pub struct GeneratorCache {
    norm_in: ChannelNormCache,
    /// Head convolution input (the normed latent).
    head_x: Tensor,
    head_norm: ChannelNormCache,
    blocks: Vec<AnyBlockCache>,
    ups: Vec<StageCache>,
    /// Back convolution input.
    back_x: Tensor,
}

impl GeneratorNet {
    pub fn new(cfg: &ModelConfig, master: &Prng) -> GeneratorNet {
        let bands = cfg.input_bands();
        let w: Vec<usize> = ENC_BASE.iter().map(|&b| cfg.scaled(b)).collect();
        let latent = cfg.latent_channels();
        let volume_back = cfg.variant == Variant::ThreeD;
        let volume_all =
            volume_back && cfg.conv3d_placement == Conv3dPlacement::All;
        let se_on_ups = cfg.variant == Variant::Se
            && cfg.se_placement == SePlacement::EncoderAndGenerator;

        // On volume arms the head still works on planes; it emits every
        // band's channels at once and the volume is unfolded after it.
        let head_out = if volume_all { w[4] * bands } else { w[4] };
        let head_conv = Conv2d::new(
            &mut master.fork(FORK_HEAD),
            "gen.head",
            latent,
            head_out,
            3,
            1,
        );

        let mut blocks = Vec::with_capacity(9);
        for i in 0..9 {
            let id = format!("gen.block{}", i + 1);
            let rng = &mut master.fork(FORK_BLOCK + i as u64);
            blocks.push(if volume_all {
                AnyBlock::Vol(ResidualBlock3d::new(rng, &id, w[4]))
            } else {
                AnyBlock::Flat(ResidualBlock::new(rng, &id, w[4]))
            });
        }

        let mut ups = Vec::with_capacity(4);
        for i in 0..4 {
            let (c_in, c_out) = (w[4 - i], w[3 - i]);
            let id = format!("gen.up{}", i + 1);
            let rng = &mut master.fork(FORK_UP + i as u64);
            let conv = if volume_all {
                AnyConv::T3(ConvT3d::new(rng, &id, c_in, c_out, 3, 3, 2))
            } else {
                // Before a volume back projection the last plane stage must
                // emit every band's channels.
                let c_out_eff = if i == 3 && volume_back {
                    c_out * bands
                } else {
                    c_out
                };
                AnyConv::T2(ConvT2d::new(rng, &id, c_in, c_out_eff, 3, 2))
            };
            let norm_ch = if i == 3 && volume_back && !volume_all {
                c_out * bands
            } else {
                c_out
            };
            let se = if se_on_ups {
                Some(SeBlock::new(
                    &mut master.fork(FORK_SE_UP + i as u64),
                    &format!("{id}.se"),
                    norm_ch,
                    cfg.se_reduction,
                ))
            } else {
                None
            };
            ups.push(Stage {
                conv,
                norm: ChannelNorm::new(&format!("{id}.norm"), norm_ch),
                se,
            });
        }

        let back = if volume_back {
            AnyConv::C3(Conv3d::new(
                &mut master.fork(FORK_BACK),
                "gen.back",
                w[0],
                1,
                7,
                7,
                1,
            ))
        } else {
            AnyConv::C2(Conv2d::new(
                &mut master.fork(FORK_BACK),
                "gen.back",
                w[0],
                bands,
                7,
                1,
            ))
        };

        GeneratorNet {
            out_bands: bands,
            latent_channels: latent,
            volume_back,
            volume_all,
            norm_in: ChannelNorm::new("gen.norm_in", latent),
            head_conv,
            head_norm: ChannelNorm::new("gen.head.norm", head_out),
            blocks,
            ups,
            back,
        }
    }

    pub fn out_bands(&self) -> usize {
        self.out_bands
    }

    /// `[latent, h, w]` to `[bands, 16h, 16w]`, unclamped.
    pub fn forward(&self, y: &Tensor) -> Result<(Tensor, GeneratorCache)> {
        if y.ndim() != 3 || y.shape()[0] != self.latent_channels {
            return Err(Error::ShapeMismatch {
                op: "generator input",
                left: vec![self.latent_channels],
                right: y.shape().to_vec(),
            });
        }
        let (h, w) = (y.shape()[1], y.shape()[2]);

        let (head_x, norm_in) = self.norm_in.forward(y)?;
        let c = self.head_conv.forward(&head_x)?;
        let (h0_flat, head_norm) = self.head_norm.forward(&c)?;
        let h0 = if self.volume_all {
            let ch = h0_flat.shape()[0] / self.out_bands;
            h0_flat.reshape(&[ch, self.out_bands, h, w])?
        } else {
            h0_flat
        };

        let mut cur = h0.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(&cur)?;
            cur = next;
            blocks.push(cache);
        }
        cur = cur.add(&h0)?;

        let mut ups = Vec::with_capacity(self.ups.len());
        for stage in &self.ups {
            let (next, cache) = stage.forward(&cur)?;
            cur = next;
            ups.push(cache);
        }

        let back_x = if self.volume_back && !self.volume_all {
            let s = cur.shape().to_vec();
            cur.reshape(&[s[0] / self.out_bands, self.out_bands, s[1], s[2]])?
        } else {
            cur
        };
        let mut out = self.back.forward(&back_x)?;
        if self.volume_back {
            let s = out.shape().to_vec();
            out = out.reshape(&[s[1], s[2], s[3]])?;
        }

        Ok((
            out,
            GeneratorCache {
                norm_in,
                head_x,
                head_norm,
                blocks,
                ups,
                back_x,
            },
        ))
    }

    /// Gradient with respect to the latent, given the gradient of a scalar
    /// loss with respect to the output cube.
    pub fn backward(&mut self, cache: &GeneratorCache, dout: &Tensor) -> Result<Tensor> {
        let d = if self.volume_back {
            let s = dout.shape().to_vec();
            dout.reshaped(&[1, s[0], s[1], s[2]])?
        } else {
            dout.clone()
        };
        let mut d = self.back.backward(&cache.back_x, &d)?;
        if self.volume_back && !self.volume_all {
            let s = d.shape().to_vec();
            d = d.reshape(&[s[0] * s[1], s[2], s[3]])?;
        }
        for (stage, sc) in self.ups.iter_mut().zip(&cache.ups).rev() {
            d = stage.backward(sc, &d)?;
        }
        // The long skip feeds the chain output directly, so its gradient
        // lands both on the block stack and on the head.
        let d_skip = d.clone();
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            d = block.backward(bc, &d)?;
        }
        d.add_assign(&d_skip)?;
        if self.volume_all {
            let s = d.shape().to_vec();
            d = d.reshape(&[s[0] * s[1], s[2], s[3]])?;
        }
        let dc = self.head_norm.backward(&cache.head_norm, &d)?;
        let dn = self.head_conv.backward(&cache.head_x, &dc)?;
        self.norm_in.backward(&cache.norm_in, &dn)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.norm_in.gain);
        f(&self.norm_in.offset);
        f(&self.head_conv.weight);
        f(&self.head_conv.bias);
        f(&self.head_norm.gain);
        f(&self.head_norm.offset);
        for block in &self.blocks {
            block.visit(f);
        }
        for stage in &self.ups {
            stage.visit(f);
        }
        self.back.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.norm_in.gain);
        f(&mut self.norm_in.offset);
        f(&mut self.head_conv.weight);
        f(&mut self.head_conv.bias);
        f(&mut self.head_norm.gain);
        f(&mut self.head_norm.offset);
        for block in &mut self.blocks {
            block.visit_mut(f);
        }
        for stage in &mut self.ups {
            stage.visit_mut(f);
        }
        self.back.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad_check::{grad_check, GradCheckOpts};
    use crate::tensor::Parameters;

    fn tiny(variant: Variant, bands: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(variant, bands);
        cfg.width_scale = 0.0625;
        cfg.seed = 17;
        cfg
    }

    fn random_latent(rng: &mut Prng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.range(0.0, 2.0)).collect()).unwrap()
    }

    #[test]
    fn plane_variant_shapes() {
        let cfg = tiny(Variant::Opt, 3);
        let gen = GeneratorNet::new(&cfg, &Prng::new(cfg.seed));
        let y = random_latent(&mut Prng::new(1), &[cfg.latent_channels(), 2, 3]);
        let (x, _) = gen.forward(&y).unwrap();
        assert_eq!(x.shape(), &[3, 32, 48]);
    }

    #[test]
    fn volume_variants_shapes() {
        for placement in [Conv3dPlacement::FirstAndLast, Conv3dPlacement::All] {
            let mut cfg = tiny(Variant::ThreeD, 2);
            cfg.conv3d_placement = placement;
            let gen = GeneratorNet::new(&cfg, &Prng::new(cfg.seed));
            let y = random_latent(&mut Prng::new(2), &[cfg.latent_channels(), 2, 2]);
            let (x, _) = gen.forward(&y).unwrap();
            assert_eq!(x.shape(), &[2, 32, 32]);
        }
    }

    #[test]
    fn excitation_sites_only_in_the_widest_placement() {
        let count_fc = |cfg: &ModelConfig| {
            let gen = GeneratorNet::new(cfg, &Prng::new(0));
            let mut n = 0;
            gen.visit(&mut |p| {
                if p.id.ends_with("fc1.weight") {
                    n += 1;
                }
            });
            n
        };
        let mut cfg = tiny(Variant::Se, 3);
        cfg.se_placement = SePlacement::EncoderAndGenerator;
        assert_eq!(count_fc(&cfg), 4);
        cfg.se_placement = SePlacement::EncoderAll;
        assert_eq!(count_fc(&cfg), 0);
        assert_eq!(count_fc(&tiny(Variant::Opt, 3)), 0);
    }

    struct Probe {
        gen: GeneratorNet,
        y: Parameter,
        proj: Vec<f64>,
    }

    impl Parameters for Probe {
        fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
            self.gen.visit(f);
            f(&self.y);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
            self.gen.visit_mut(f);
            f(&mut self.y);
        }
    }

    fn run_grad_check(cfg: &ModelConfig, latent_hw: usize) {
        let gen = GeneratorNet::new(cfg, &Prng::new(cfg.seed));
        let mut rng = Prng::new(77);
        let y = random_latent(
            &mut rng,
            &[cfg.latent_channels(), latent_hw, latent_hw],
        );
        let proj: Vec<f64> = (0..64).map(|_| rng.range(-1.0, 1.0)).collect();
        let mut probe = Probe {
            gen,
            y: Parameter::new("y", y),
            proj,
        };
        let report = grad_check(
            &mut probe,
            |p| {
                let (x, _) = p.gen.forward(&p.y.value)?;
                Ok(x.data().iter().zip(p.proj.iter().cycle()).map(|(a, b)| a * b).sum())
            },
            |p| {
                let (x, cache) = p.gen.forward(&p.y.value)?;
                let grad: Vec<f64> = p.proj.iter().cycle().take(x.numel()).copied().collect();
                let dx = Tensor::new(x.shape(), grad)?;
                let dy = p.gen.backward(&cache, &dx)?;
                p.y.accumulate(&dy)?;
                Ok(x.data().iter().zip(p.proj.iter().cycle()).map(|(a, b)| a * b).sum())
            },
            &GradCheckOpts {
                eps: 1e-5,
                max_per_param: Some(4),
                sample_seed: 13,
                ..GradCheckOpts::default()
            },
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report}");
    }

    // The long skip and the volume folds are wiring this net adds on top of
    // the layer stack; check gradients flow through both correctly.
    #[test]
    fn plane_generator_grad_check() {
        run_grad_check(&tiny(Variant::Opt, 2), 1);
    }

    #[test]
    fn volume_generator_grad_check() {
        for placement in [Conv3dPlacement::FirstAndLast, Conv3dPlacement::All] {
            let mut cfg = tiny(Variant::ThreeD, 2);
            cfg.conv3d_placement = placement;
            run_grad_check(&cfg, 1);
        }
    }
}
