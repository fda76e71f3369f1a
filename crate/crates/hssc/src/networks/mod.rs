//! The codec's networks: encoder, generator, discriminator, latent prior.
//!
//! [`ModelBundle::build`] assembles all four from a [`ModelConfig`] and a
//! master seed. Each layer initializes from its own counter-based stream,
//! so a layer's starting weights depend only on the seed and its own
//! position, not on which optional blocks the variant adds elsewhere. Two
//! builds from equal configs are bit-identical, which the codec relies on:
//! the decoder rebuilds the encoder's entropy tables from the config alone.

mod ckpt;
pub mod config;
pub mod discriminator;
pub mod encoder;
pub mod generator;
mod parts;

pub use ckpt::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{
    Conv3dPlacement, ModelConfig, SePlacement, Variant, DISC_BASE, DISC_Y_BASE, ENC_BASE,
    LATENT_BASE, SPATIAL_FACTOR,
};
pub use discriminator::{DiscCache, DiscriminatorNet};
pub use encoder::{EncoderCache, EncoderNet};
pub use generator::{GeneratorCache, GeneratorNet};

use crate::coding::FactorizedEntropyModel;
use crate::error::Result;
use crate::rng::Prng;
use crate::tensor::{Parameter, Parameters};

const FORK_PRIOR: u64 = 400;

/// The networks that share one optimizer during training: everything except
/// the discriminator.
#[derive(Debug, Clone)]
pub struct CodecNets {
    pub encoder: EncoderNet,
    pub generator: GeneratorNet,
    pub prior: FactorizedEntropyModel,
}

impl Parameters for CodecNets {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.encoder.visit(f);
        self.generator.visit(f);
        self.prior.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.encoder.visit_mut(f);
        self.generator.visit_mut(f);
        self.prior.visit_mut(f);
    }
}

/// A complete model: config plus all networks, in registry order.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub nets: CodecNets,
    pub disc: DiscriminatorNet,
}

impl ModelBundle {
    pub fn build(config: &ModelConfig) -> Result<ModelBundle> {
        config.validate()?;
        let master = Prng::new(config.seed);
        Ok(ModelBundle {
            config: config.clone(),
            nets: CodecNets {
                encoder: EncoderNet::new(config, &master),
                generator: GeneratorNet::new(config, &master),
                prior: FactorizedEntropyModel::new(
                    &mut master.fork(FORK_PRIOR),
                    config.latent_channels(),
                ),
            },
            disc: DiscriminatorNet::new(config, &master),
        })
    }
}

impl Parameters for ModelBundle {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.nets.visit(f);
        self.disc.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.nets.visit_mut(f);
        self.disc.visit_mut(f);
    }
}

impl Parameters for DiscriminatorNet {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        DiscriminatorNet::visit(self, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        DiscriminatorNet::visit_mut(self, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn tiny(variant: Variant) -> ModelConfig {
        let mut cfg = ModelConfig::new(variant, 3);
        cfg.width_scale = 0.0625;
        cfg.seed = 5;
        cfg
    }

    fn param_bits(bundle: &ModelBundle) -> Vec<u64> {
        let mut bits = Vec::new();
        bundle.visit(&mut |p| bits.extend(p.value.data().iter().map(|v| v.to_bits())));
        bits
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let cfg = tiny(Variant::Se);
        let a = ModelBundle::build(&cfg).unwrap();
        let b = ModelBundle::build(&cfg).unwrap();
        assert_eq!(param_bits(&a), param_bits(&b));
    }

    #[test]
    fn seed_changes_every_network() {
        let mut cfg = tiny(Variant::Opt);
        let a = ModelBundle::build(&cfg).unwrap();
        cfg.seed = 6;
        let b = ModelBundle::build(&cfg).unwrap();
        // Norm gains and offsets initialize deterministically, so compare
        // only the random draws.
        let mut changed = 0;
        let mut a_convs = Vec::new();
        a.visit(&mut |p| {
            if p.id.ends_with(".weight") {
                a_convs.push(p.value.data()[0]);
            }
        });
        let mut i = 0;
        b.visit(&mut |p| {
            if p.id.ends_with(".weight") {
                if a_convs[i] != p.value.data()[0] {
                    changed += 1;
                }
                i += 1;
            }
        });
        assert_eq!(changed, i);
    }

    #[test]
    fn registry_ids_are_unique() {
        let bundle = ModelBundle::build(&tiny(Variant::Se)).unwrap();
        let ids = bundle.param_ids();
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), ids.len());
    }

    #[test]
    fn shared_layers_ignore_optional_neighbors() {
        // The excitation variant adds blocks around the shared stack; the
        // stack's own weights must not move.
        let opt = ModelBundle::build(&tiny(Variant::Opt)).unwrap();
        let se = ModelBundle::build(&tiny(Variant::Se)).unwrap();
        let collect = |b: &ModelBundle| {
            let mut m = Vec::new();
            b.visit(&mut |p| {
                if !p.id.contains(".se") && !p.id.contains("fc") {
                    m.push((p.id.clone(), p.value.data().to_vec()));
                }
            });
            m
        };
        assert_eq!(collect(&opt), collect(&se));
    }

    #[test]
    fn round_trip_through_all_networks() {
        for variant in [Variant::Opt, Variant::Se, Variant::ThreeD] {
            let cfg = tiny(variant);
            let bundle = ModelBundle::build(&cfg).unwrap();
            let mut rng = Prng::new(2);
            let x = Tensor::new(
                &[3, 32, 32],
                (0..3 * 32 * 32).map(|_| rng.uniform()).collect(),
            )
            .unwrap();
            let (y, _) = bundle.nets.encoder.forward(&x).unwrap();
            let (xr, _) = bundle.nets.generator.forward(&y).unwrap();
            assert_eq!(xr.shape(), x.shape());
            let (prob, _) = bundle.disc.forward(&xr, &y).unwrap();
            assert_eq!(prob.shape(), &[1, 4, 4]);
        }
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// Pushes every excitation block toward the identity: zero weights and
    /// a large positive gate bias, so each block multiplies by sigmoid(20).
    fn neutralize_excitations(bundle: &mut ModelBundle) {
        bundle.visit_mut(&mut |p| {
            if p.id.ends_with("fc1.weight")
                || p.id.ends_with("fc2.weight")
                || p.id.ends_with("fc1.bias")
            {
                p.value.data_mut().fill(0.0);
            } else if p.id.ends_with("fc2.bias") {
                p.value.data_mut().fill(20.0);
            }
        });
    }

    // With its excitations gating at one, the se variant is the plain
    // network: per-layer init streams make the shared weights identical,
    // and the residual sigmoid(20) shortfall stays below microscale.
    #[test]
    fn neutralized_excitations_match_the_plain_variant() {
        let opt = ModelBundle::build(&tiny(Variant::Opt)).unwrap();
        let mut se = ModelBundle::build(&tiny(Variant::Se)).unwrap();
        neutralize_excitations(&mut se);

        let mut rng = Prng::new(8);
        let x = Tensor::new(
            &[3, 32, 32],
            (0..3 * 32 * 32).map(|_| rng.uniform()).collect(),
        )
        .unwrap();
        let (y_opt, _) = opt.nets.encoder.forward(&x).unwrap();
        let (y_se, _) = se.nets.encoder.forward(&x).unwrap();
        assert!(max_abs_diff(&y_opt, &y_se) <= 1e-6);

        let (x_opt, _) = opt.nets.generator.forward(&y_opt).unwrap();
        let (x_se, _) = se.nets.generator.forward(&y_opt).unwrap();
        assert!(max_abs_diff(&x_opt, &x_se) <= 1e-6);
    }

    // On a single-band cube only the center depth tap of a 7x7x7 kernel
    // ever touches data; with the plane weights planted there, the volume
    // variant must reproduce the plane variant.
    #[test]
    fn volume_on_one_band_matches_plane() {
        let mut cfg2 = tiny(Variant::Opt);
        cfg2.bands = 1;
        let mut cfg3 = tiny(Variant::ThreeD);
        cfg3.bands = 1;
        let opt = ModelBundle::build(&cfg2).unwrap();
        let mut vol = ModelBundle::build(&cfg3).unwrap();

        let mut front2 = None;
        let mut front2_bias = None;
        let mut back2 = None;
        let mut back2_bias = None;
        opt.visit(&mut |p| match p.id.as_str() {
            "enc.front.weight" => front2 = Some(p.value.clone()),
            "enc.front.bias" => front2_bias = Some(p.value.clone()),
            "gen.back.weight" => back2 = Some(p.value.clone()),
            "gen.back.bias" => back2_bias = Some(p.value.clone()),
            _ => {}
        });
        let plant = |vol_w: &mut Tensor, plane: &Tensor| {
            vol_w.data_mut().fill(0.0);
            let s = plane.shape().to_vec();
            for o in 0..s[0] {
                for i in 0..s[1] {
                    for ky in 0..s[2] {
                        for kx in 0..s[3] {
                            vol_w.set(&[o, i, 3, ky, kx], plane.at(&[o, i, ky, kx]));
                        }
                    }
                }
            }
        };
        vol.visit_mut(&mut |p| match p.id.as_str() {
            "enc.front.weight" => plant(&mut p.value, front2.as_ref().unwrap()),
            "enc.front.bias" => p
                .value
                .data_mut()
                .copy_from_slice(front2_bias.as_ref().unwrap().data()),
            "gen.back.weight" => plant(&mut p.value, back2.as_ref().unwrap()),
            "gen.back.bias" => p
                .value
                .data_mut()
                .copy_from_slice(back2_bias.as_ref().unwrap().data()),
            _ => {}
        });

        let mut rng = Prng::new(9);
        let x = Tensor::new(&[1, 32, 32], (0..32 * 32).map(|_| rng.uniform()).collect()).unwrap();
        let (y2, _) = opt.nets.encoder.forward(&x).unwrap();
        let (y3, _) = vol.nets.encoder.forward(&x).unwrap();
        assert!(max_abs_diff(&y2, &y3) <= 1e-6);

        let (r2, _) = opt.nets.generator.forward(&y2).unwrap();
        let (r3, _) = vol.nets.generator.forward(&y2).unwrap();
        assert!(max_abs_diff(&r2, &r3) <= 1e-6);
    }

    // Frozen from a run of this implementation; a change here means the
    // architecture itself changed shape.
    #[test]
    fn parameter_counts_are_stable() {
        let expect = [
            (Variant::Opt, 658_367usize),
            (Variant::Se, 664_664),
            (Variant::ThreeD, 661_109),
        ];
        for (variant, want) in expect {
            let bundle = ModelBundle::build(&tiny(variant)).unwrap();
            assert_eq!(bundle.param_count(), want, "{variant}");
        }
    }
}
