//! The two training objectives.
//!
//! [`loss_egp`] drives the encoder, generator and prior: rate times the
//! controller's lambda, plus distortion, plus the adversarial term, plus the
//! L1 penalty on squeeze-excitation weights. [`loss_d`] drives the
//! discriminator alone on the standard real/fake log loss. Each function
//! accumulates gradients only into its own parameter group; the other
//! group's parameters are either borrowed immutably or swept clean before
//! returning, and tests pin both directions.
//!
//! Quantization sits between the encoder and everything downstream. Its
//! backward convention is straight-through: gradients that arrive at the
//! quantized latents flow to the unquantized encoder outputs unchanged.
//! [`loss_egp_unquantized`] evaluates the same objective with rounding
//! skipped, which is the form finite differences can verify.

use crate::coding::quantize;
use crate::error::{Error, Result};
use crate::networks::{CodecNets, DiscriminatorNet};
use crate::tensor::{Parameters, Tensor};
use crate::training::distortion::{distortion, distortion_backward, DistortionTerms};
use crate::training::features::FeatureDistance;
use crate::training::LossWeights;

/// Discriminator outputs are clamped to this band before any logarithm.
const PROB_EPS: f64 = 1e-7;

/// One evaluation of the encoder/generator/prior objective.
#[derive(Debug, Clone, Copy)]
pub struct EgpOutcome {
    /// The full objective value.
    pub loss: f64,
    /// Batch-mean rate in bits per band-pixel.
    pub rate_bpp: f64,
    /// Batch-mean distortion terms.
    pub distortion: DistortionTerms,
    /// The rate weight the controller picked for this batch.
    pub lambda: f64,
    /// Batch-mean `-log D` on reconstructions, before weighting by beta.
    pub adversarial: f64,
    /// Unweighted sum of `|w|` over squeeze-excitation fc weights.
    pub se_l1: f64,
    /// Latent elements that hit the quantizer clamp, summed over the batch.
    pub saturated: usize,
}

fn check_term(value: f64, term: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::non_finite(format!("{term} term in the objective")))
    }
}

/// True for the parameters the squeeze-excitation L1 penalty covers.
fn is_se_weight(id: &str) -> bool {
    id.ends_with(".fc1.weight") || id.ends_with(".fc2.weight")
}

/// Sum of `|w|` over the penalized weights, and the penalty's subgradient
/// added directly into the parameter gradients (scaled by `coeff`).
fn apply_se_penalty(nets: &mut CodecNets, coeff: f64) -> f64 {
    let mut total = 0.0;
    nets.visit_mut(&mut |p| {
        if !is_se_weight(&p.id) {
            return;
        }
        let values = p.value.data();
        let grads = p.grad.data_mut();
        for (g, v) in grads.iter_mut().zip(values) {
            total += v.abs();
            // Subgradient of |v|, zero at the origin.
            if *v > 0.0 {
                *g += coeff;
            } else if *v < 0.0 {
                *g -= coeff;
            }
        }
    });
    total
}

/// Objective for the encoder, generator and prior on one batch.
///
/// `beta` is the adversarial weight actually in force (the pretrain stage
/// passes zero, the adversarial stage passes `weights.beta`); with zero the
/// discriminator is never evaluated. Gradients accumulate into `nets` only.
/// The discriminator participates in the forward and backward pass when
/// `beta > 0`, but its own gradient accumulators are cleared before
/// returning: it learns exclusively from [`loss_d`].
pub fn loss_egp(
    nets: &mut CodecNets,
    disc: &mut DiscriminatorNet,
    proxy: &mut FeatureDistance,
    batch: &[&Tensor],
    weights: &LossWeights,
    beta: f64,
    r_t: f64,
) -> Result<EgpOutcome> {
    egp_impl(nets, disc, proxy, batch, weights, beta, r_t, true)
}

/// [`loss_egp`] with rounding replaced by the identity.
///
/// Training never calls this. It exists for gradient verification: the
/// straight-through backward is the exact analytic gradient of this rounding-
/// free path, so central differences can check the whole chain here, encoder
/// parameters included. On the rounded path the true local derivative through
/// the generator is zero almost everywhere and no finite-difference check can
/// agree with the straight-through convention.
pub fn loss_egp_unquantized(
    nets: &mut CodecNets,
    disc: &mut DiscriminatorNet,
    proxy: &mut FeatureDistance,
    batch: &[&Tensor],
    weights: &LossWeights,
    beta: f64,
    r_t: f64,
) -> Result<EgpOutcome> {
    egp_impl(nets, disc, proxy, batch, weights, beta, r_t, false)
}

#[allow(clippy::too_many_arguments)]
fn egp_impl(
    nets: &mut CodecNets,
    disc: &mut DiscriminatorNet,
    proxy: &mut FeatureDistance,
    batch: &[&Tensor],
    weights: &LossWeights,
    beta: f64,
    r_t: f64,
    rounded: bool,
) -> Result<EgpOutcome> {
    if batch.is_empty() {
        return Err(Error::usage("training batch is empty"));
    }
    let n = batch.len() as f64;
    let mut forwards = Vec::with_capacity(batch.len());
    let mut rate_sum = 0.0;
    let mut dist_sum = (0.0, 0.0, 0.0, 0.0);
    let mut adv_sum = 0.0;
    let mut saturated = 0usize;
    for &x in batch {
        let (y, enc_cache) = nets.encoder.forward(x)?;
        let q = if rounded {
            let (q, stats) = quantize(&y);
            saturated += stats.saturated;
            q
        } else {
            y
        };
        let (bits, rate_cache) = nets.prior.rate_loss(&q)?;
        let rate = check_term(bits, "rate")? / x.numel() as f64;
        let (recon, gen_cache) = nets.generator.forward(&q)?;
        let (terms, dist_cache) = distortion(proxy, x, &recon, weights)?;
        check_term(terms.value, "distortion")?;
        let disc_pass = if beta > 0.0 {
            let (prob, cache) = disc.forward(&recon, &q)?;
            let a = prob
                .data()
                .iter()
                .map(|p| -p.clamp(PROB_EPS, 1.0 - PROB_EPS).ln())
                .sum::<f64>()
                / prob.numel() as f64;
            adv_sum += check_term(a, "adversarial")?;
            Some((prob, cache))
        } else {
            None
        };
        rate_sum += rate;
        dist_sum.0 += terms.mse;
        dist_sum.1 += terms.ssim;
        dist_sum.2 += terms.features;
        dist_sum.3 += terms.value;
        forwards.push((x, enc_cache, rate_cache, gen_cache, dist_cache, disc_pass));
    }

    let rate_bpp = rate_sum / n;
    let lambda = weights.lambda_select(rate_bpp, r_t)?;

    for (x, enc_cache, rate_cache, gen_cache, dist_cache, disc_pass) in forwards {
        let mut d_recon = distortion_backward(proxy, &dist_cache, weights, 1.0 / n)?;
        let mut d_latent_extra: Option<Tensor> = None;
        if let Some((prob, cache)) = disc_pass {
            let mut d_prob = Tensor::zeros(prob.shape())?;
            let scale = -beta / (prob.numel() as f64 * n);
            for (dp, p) in d_prob.data_mut().iter_mut().zip(prob.data()) {
                // Outside the clamp band the log is flat.
                if *p > PROB_EPS && *p < 1.0 - PROB_EPS {
                    *dp = scale / p;
                }
            }
            let (d_recon_adv, d_latent_adv) = disc.backward(&cache, &d_prob)?;
            d_recon.add_assign(&d_recon_adv)?;
            d_latent_extra = Some(d_latent_adv);
        }
        let mut d_latent = nets.generator.backward(&gen_cache, &d_recon)?;
        let d_bits = lambda / (x.numel() as f64 * n);
        d_latent.add_assign(&nets.prior.rate_loss_backward(&rate_cache, d_bits)?)?;
        if let Some(extra) = d_latent_extra {
            d_latent.add_assign(&extra)?;
        }
        // Straight-through: the latent gradient passes the quantizer as-is.
        nets.encoder.backward(&enc_cache, &d_latent)?;
    }

    let se_l1 = apply_se_penalty(nets, weights.l1_se);
    // The discriminator helped compute the adversarial gradient but must not
    // learn from it.
    disc.zero_grads();

    let distortion_mean = DistortionTerms {
        mse: dist_sum.0 / n,
        ssim: dist_sum.1 / n,
        features: dist_sum.2 / n,
        value: dist_sum.3 / n,
    };
    let adversarial = adv_sum / n;
    let loss = check_term(
        lambda * rate_bpp + distortion_mean.value + beta * adversarial + weights.l1_se * se_l1,
        "total",
    )?;
    Ok(EgpOutcome {
        loss,
        rate_bpp,
        distortion: distortion_mean,
        lambda,
        adversarial,
        se_l1,
        saturated,
    })
}

/// Discriminator objective on one batch: `-log D` on originals plus
/// `-log(1 - D)` on reconstructions.
///
/// The codec networks are borrowed immutably, which is the structural
/// guarantee that no gradient from this loss reaches them; reconstructions
/// enter as constants.
pub fn loss_d(
    nets: &CodecNets,
    disc: &mut DiscriminatorNet,
    batch: &[&Tensor],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::usage("training batch is empty"));
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    for &x in batch {
        let (y, _) = nets.encoder.forward(x)?;
        let (q, _) = quantize(&y);
        let (recon, _) = nets.generator.forward(&q)?;
        let (p_fake, fake_cache) = disc.forward(&recon, &q)?;
        let (p_real, real_cache) = disc.forward(x, &q)?;
        let m = p_fake.numel() as f64;
        let mut sample = 0.0;
        let mut d_fake = Tensor::zeros(p_fake.shape())?;
        for (dp, p) in d_fake.data_mut().iter_mut().zip(p_fake.data()) {
            let c = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            sample -= (1.0 - c).ln();
            if *p > PROB_EPS && *p < 1.0 - PROB_EPS {
                *dp = 1.0 / ((1.0 - c) * m * n);
            }
        }
        let mut d_real = Tensor::zeros(p_real.shape())?;
        for (dp, p) in d_real.data_mut().iter_mut().zip(p_real.data()) {
            let c = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            sample -= c.ln();
            if *p > PROB_EPS && *p < 1.0 - PROB_EPS {
                *dp = -1.0 / (c * m * n);
            }
        }
        disc.backward(&fake_cache, &d_fake)?;
        disc.backward(&real_cache, &d_real)?;
        total += sample / m;
    }
    check_term(total / n, "discriminator")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad_check::{grad_check, GradCheckOpts};
    use crate::networks::{ModelBundle, ModelConfig, Variant};
    use crate::rng::Prng;
    use std::cell::RefCell;

    fn tiny_config(variant: Variant, bands: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(variant, bands);
        cfg.width_scale = 0.0625;
        cfg.seed = 9;
        cfg
    }

    fn random_cube(seed: u64, bands: usize, h: usize, w: usize) -> Tensor {
        let mut rng = Prng::new(seed);
        let data: Vec<f64> = (0..bands * h * w).map(|_| rng.uniform()).collect();
        Tensor::new(&[bands, h, w], data).unwrap()
    }

    fn max_abs_grad(params: &dyn Parameters) -> f64 {
        let mut worst = 0.0f64;
        params.visit(&mut |p| {
            for g in p.grad.data() {
                worst = worst.max(g.abs());
            }
        });
        worst
    }

    #[test]
    fn egp_leaves_discriminator_gradients_clear() {
        let cfg = tiny_config(Variant::Se, 2);
        let mut bundle = ModelBundle::build(&cfg).unwrap();
        let mut proxy = FeatureDistance::new(2);
        let x = random_cube(1, 2, 16, 16);
        let weights = LossWeights::default();
        loss_egp(
            &mut bundle.nets,
            &mut bundle.disc,
            &mut proxy,
            &[&x],
            &weights,
            weights.beta,
            0.2,
        )
        .unwrap();
        assert!(max_abs_grad(&bundle.nets) > 0.0);
        assert_eq!(max_abs_grad(&bundle.disc), 0.0);
    }

    #[test]
    fn d_loss_touches_only_the_discriminator() {
        let cfg = tiny_config(Variant::Opt, 2);
        let mut bundle = ModelBundle::build(&cfg).unwrap();
        let x = random_cube(2, 2, 16, 16);
        let loss = loss_d(&bundle.nets, &mut bundle.disc, &[&x]).unwrap();
        assert!(loss.is_finite());
        assert!(max_abs_grad(&bundle.disc) > 0.0);
        assert_eq!(max_abs_grad(&bundle.nets), 0.0);
    }

    #[test]
    fn neutral_discriminator_gives_the_closed_form_values() {
        let cfg = tiny_config(Variant::Opt, 2);
        let mut bundle = ModelBundle::build(&cfg).unwrap();
        // Zero the output projection so D is exactly sigmoid(0) = 1/2
        // everywhere.
        bundle.disc.visit_mut(&mut |p| {
            if p.id.starts_with("disc.out") {
                p.value.data_mut().fill(0.0);
            }
        });
        let mut proxy = FeatureDistance::new(2);
        let x = random_cube(3, 2, 16, 16);
        let weights = LossWeights::default();
        let outcome = loss_egp(
            &mut bundle.nets,
            &mut bundle.disc,
            &mut proxy,
            &[&x],
            &weights,
            weights.beta,
            0.2,
        )
        .unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((outcome.adversarial - ln2).abs() < 1e-12);
        let d = loss_d(&bundle.nets, &mut bundle.disc, &[&x]).unwrap();
        assert!((d - 2.0 * ln2).abs() < 1e-12);
    }

    #[test]
    fn beta_zero_reduces_to_rate_plus_distortion() {
        let cfg = tiny_config(Variant::Opt, 2);
        let mut bundle = ModelBundle::build(&cfg).unwrap();
        let mut proxy = FeatureDistance::new(2);
        let x = random_cube(4, 2, 16, 16);
        let weights = LossWeights {
            l1_se: 0.0,
            ..LossWeights::default()
        };
        let outcome = loss_egp(
            &mut bundle.nets,
            &mut bundle.disc,
            &mut proxy,
            &[&x],
            &weights,
            0.0,
            0.2,
        )
        .unwrap();
        assert_eq!(outcome.adversarial, 0.0);
        let expect = outcome.lambda * outcome.rate_bpp + outcome.distortion.value;
        assert!((outcome.loss - expect).abs() < 1e-15);
    }

    #[test]
    fn term_isolation_recovers_plain_mse() {
        let cfg = tiny_config(Variant::Opt, 2);
        let mut bundle = ModelBundle::build(&cfg).unwrap();
        let mut proxy = FeatureDistance::new(2);
        let x = random_cube(5, 2, 16, 16);
        // Weak lambda zero and a rate far below the huge target forces the
        // rate term out entirely; theta2 = theta3 = 0 leaves pure MSE.
        let weights = LossWeights {
            theta2: 0.0,
            theta3: 0.0,
            beta: 0.0,
            lambda_b: 0.0,
            l1_se: 0.0,
            lambda_table: vec![(1000.0, 1.0)],
            ..LossWeights::default()
        };
        let outcome = loss_egp(
            &mut bundle.nets,
            &mut bundle.disc,
            &mut proxy,
            &[&x],
            &weights,
            0.0,
            1000.0,
        )
        .unwrap();
        let (y, _) = bundle.nets.encoder.forward(&x).unwrap();
        let (q, _) = quantize(&y);
        let (recon, _) = bundle.nets.generator.forward(&q).unwrap();
        let mse = recon
            .sub(&x)
            .unwrap()
            .data()
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            / x.numel() as f64;
        assert!((outcome.loss - weights.theta1 * mse).abs() < 1e-15);
    }

    #[test]
    fn se_penalty_hits_exactly_the_fc_weights() {
        let cfg = tiny_config(Variant::Se, 2);
        let mut bundle = ModelBundle::build(&cfg).unwrap();
        let mut proxy = FeatureDistance::new(2);
        let x = random_cube(6, 2, 16, 16);
        // Kill every other term so only the penalty's subgradient remains.
        let weights = LossWeights {
            theta1: 0.0,
            theta2: 0.0,
            theta3: 0.0,
            beta: 0.0,
            lambda_b: 0.0,
            l1_se: 1.0,
            lambda_table: vec![(1000.0, 1.0)],
            ..LossWeights::default()
        };
        let outcome = loss_egp(
            &mut bundle.nets,
            &mut bundle.disc,
            &mut proxy,
            &[&x],
            &weights,
            0.0,
            1000.0,
        )
        .unwrap();
        assert!(outcome.se_l1 > 0.0);
        bundle.nets.visit(&mut |p| {
            let grad_norm: f64 = p.grad.data().iter().map(|g| g.abs()).sum();
            if is_se_weight(&p.id) {
                assert!(grad_norm > 0.0, "{} missed by the penalty", p.id);
                for (g, v) in p.grad.data().iter().zip(p.value.data()) {
                    let want = if *v > 0.0 {
                        1.0
                    } else if *v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    assert_eq!(*g, want, "{}", p.id);
                }
            } else {
                assert_eq!(grad_norm, 0.0, "{} touched by the penalty", p.id);
            }
        });
    }

    #[test]
    fn empty_batch_is_rejected() {
        let cfg = tiny_config(Variant::Opt, 2);
        let mut bundle = ModelBundle::build(&cfg).unwrap();
        let mut proxy = FeatureDistance::new(2);
        let weights = LossWeights::default();
        assert!(loss_egp(
            &mut bundle.nets,
            &mut bundle.disc,
            &mut proxy,
            &[],
            &weights,
            0.0,
            0.2
        )
        .is_err());
        assert!(loss_d(&bundle.nets, &mut bundle.disc, &[]).is_err());
    }

    #[test]
    fn non_finite_input_names_the_failing_term() {
        let cfg = tiny_config(Variant::Opt, 2);
        let mut bundle = ModelBundle::build(&cfg).unwrap();
        let mut proxy = FeatureDistance::new(2);
        bundle.nets.encoder.visit_mut(&mut |p| {
            if p.id == "enc.front.weight" {
                p.value.data_mut()[0] = f64::NAN;
            }
        });
        let x = random_cube(7, 2, 16, 16);
        let weights = LossWeights::default();
        let err = loss_egp(
            &mut bundle.nets,
            &mut bundle.disc,
            &mut proxy,
            &[&x],
            &weights,
            0.0,
            0.2,
        )
        .unwrap_err();
        assert!(err.to_string().contains("finite"), "{err}");
    }

    /// Full objective gradient against central differences, pretrain form
    /// (beta = 0, so the whole bundle including the untouched discriminator
    /// can serve as the checked group). Runs on the rounding-free path; see
    /// [`loss_egp_unquantized`] for why the rounded one cannot be probed.
    #[test]
    fn egp_gradient_matches_central_differences() {
        let cfg = tiny_config(Variant::Se, 2);
        let mut bundle = ModelBundle::build(&cfg).unwrap();
        let proxy = RefCell::new(FeatureDistance::new(2));
        let x = random_cube(8, 2, 16, 16);
        let weights = LossWeights::default();
        // The untrained rate sits far below this target, so the controller
        // stays on the weak branch throughout the perturbations and the
        // objective is continuous where we probe it.
        let r_t = 1.0;
        let eval = |b: &mut ModelBundle| {
            let (nets, disc) = (&mut b.nets, &mut b.disc);
            let out =
                loss_egp_unquantized(nets, disc, &mut proxy.borrow_mut(), &[&x], &weights, 0.0, r_t)?;
            Ok(out.loss)
        };
        let backward = |b: &mut ModelBundle| {
            b.nets.zero_grads();
            let (nets, disc) = (&mut b.nets, &mut b.disc);
            let out =
                loss_egp_unquantized(nets, disc, &mut proxy.borrow_mut(), &[&x], &weights, 0.0, r_t)?;
            Ok(out.loss)
        };
        // Composed networks need the finer step; see the encoder's gradient
        // test for the reasoning.
        let opts = GradCheckOpts {
            eps: 1e-5,
            max_per_param: Some(2),
            ..GradCheckOpts::default()
        };
        let report = grad_check(&mut bundle, eval, backward, &opts).unwrap();
        assert!(report.passes(1e-3), "{report}");
    }

    #[test]
    fn d_gradient_matches_central_differences() {
        let cfg = tiny_config(Variant::Opt, 2);
        let bundle = ModelBundle::build(&cfg).unwrap();
        let nets = RefCell::new(bundle.nets.clone());
        let mut disc = bundle.disc.clone();
        let x = random_cube(9, 2, 16, 16);
        let eval = |d: &mut DiscriminatorNet| loss_d(&nets.borrow(), d, &[&x]);
        let backward = |d: &mut DiscriminatorNet| {
            d.zero_grads();
            loss_d(&nets.borrow(), d, &[&x])
        };
        let opts = GradCheckOpts {
            eps: 1e-5,
            max_per_param: Some(3),
            ..GradCheckOpts::default()
        };
        let report = grad_check(&mut disc, eval, backward, &opts).unwrap();
        assert!(report.passes(1e-3), "{report}");
    }
}
