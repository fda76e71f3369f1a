//! Objectives and the optimization loop.
//!
//! The codec trains against a composite objective: a rate term from the
//! entropy model, a distortion term mixing MSE, SSIM and a random-feature
//! perceptual distance, and an adversarial term from the conditional
//! discriminator. A rate-target controller switches the rate weight between
//! a strong and a weak value depending on whether the current bitrate sits
//! above or below the target, which is what steers models toward their
//! configured operating point.
//!
//! Training runs in two stages: a pretrain stage with the adversarial weight
//! forced to zero, then an adversarial stage alternating one discriminator
//! step with one encoder/generator/prior step per batch. Both stages share
//! one Adam configuration and log one CSV row per step. The whole loop is
//! deterministic for a fixed seed and can be checkpointed and resumed
//! bit-for-bit in double precision.

pub mod adam;
pub mod distortion;
pub mod features;
pub mod loss;
pub mod state;
pub mod trainer;

pub use adam::Adam;
pub use distortion::{DistortionCache, DistortionTerms};
pub use features::FeatureDistance;
pub use loss::{loss_d, loss_egp, loss_egp_unquantized, EgpOutcome};
pub use state::{Stage, TrainState};
pub use trainer::{metrics_csv, train, write_metrics_csv, MetricsRow, TrainOptions, Trainer};

use crate::error::{Error, Result};

/// Coefficients of the composite objective.
///
/// `lambda_table` maps each supported rate target to the strong rate weight
/// used while the model is over budget; `lambda_b` is the weak weight used
/// once the rate has dropped below target. The defaults follow the reference
/// operating points, with the strong weight decreasing as the target grows.
#[derive(Debug, Clone)]
pub struct LossWeights {
    /// MSE coefficient.
    pub theta1: f64,
    /// `1 - SSIM` coefficient.
    pub theta2: f64,
    /// Feature-distance coefficient.
    pub theta3: f64,
    /// Adversarial coefficient in the encoder/generator objective.
    pub beta: f64,
    /// `(rate target, strong lambda)` pairs, sorted by target.
    pub lambda_table: Vec<(f64, f64)>,
    /// Weak lambda applied once the rate is at or below target.
    pub lambda_b: f64,
    /// L1 coefficient on the squeeze-excitation fc weights.
    pub l1_se: f64,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights {
            theta1: 0.15 * 0.03125,
            theta2: 0.075 * 0.125,
            theta3: 1.0,
            beta: 0.15,
            lambda_table: vec![
                (0.2, 2.0),
                (0.4, 1.0),
                (0.6, 0.5),
                (0.8, 0.25),
                (1.0, 0.125),
            ],
            lambda_b: 0.015625,
            l1_se: 1e-5,
        }
    }
}

/// Tolerance for matching a rate target against the table keys.
const TARGET_EPS: f64 = 1e-9;

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("theta1", self.theta1),
            ("theta2", self.theta2),
            ("theta3", self.theta3),
            ("beta", self.beta),
            ("lambda_b", self.lambda_b),
            ("l1_se", self.l1_se),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.lambda_table.is_empty() {
            return Err(Error::config("lambda table is empty"));
        }
        for pair in self.lambda_table.windows(2) {
            let ((r0, l0), (r1, l1)) = (pair[0], pair[1]);
            if r1 <= r0 {
                return Err(Error::config(format!(
                    "lambda table targets must increase, got {r0} then {r1}"
                )));
            }
            if l1 >= l0 {
                return Err(Error::config(format!(
                    "strong lambda must decrease with the target, got {l0} then {l1}"
                )));
            }
        }
        for &(r_t, l) in &self.lambda_table {
            if !r_t.is_finite() || r_t <= 0.0 || !l.is_finite() || l <= 0.0 {
                return Err(Error::config(format!(
                    "lambda table entry ({r_t}, {l}) is not positive and finite"
                )));
            }
            if l < 8.0 * self.lambda_b {
                return Err(Error::config(format!(
                    "strong lambda {l} at target {r_t} is less than 8x the weak lambda {}",
                    self.lambda_b
                )));
            }
        }
        Ok(())
    }

    /// Strong rate weight for a supported target.
    pub fn lambda_a(&self, r_t: f64) -> Result<f64> {
        self.lambda_table
            .iter()
            .find(|(key, _)| (key - r_t).abs() < TARGET_EPS)
            .map(|&(_, l)| l)
            .ok_or_else(|| {
                let keys: Vec<String> =
                    self.lambda_table.iter().map(|(k, _)| k.to_string()).collect();
                Error::config(format!(
                    "rate target {r_t} is not in the lambda table (targets: {})",
                    keys.join(", ")
                ))
            })
    }

    /// Rate weight for the current bitrate: the strong value while over the
    /// target, the weak value otherwise. The boundary itself counts as on
    /// target.
    pub fn lambda_select(&self, rate: f64, r_t: f64) -> Result<f64> {
        let strong = self.lambda_a(r_t)?;
        Ok(if rate > r_t { strong } else { self.lambda_b })
    }
}
