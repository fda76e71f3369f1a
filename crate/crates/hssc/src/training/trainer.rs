//! The two-stage optimization loop.
//!
//! A [`Trainer`] owns a model bundle, one Adam instance per parameter group
//! and the batch sampler, and advances one global step at a time. Steps up
//! to `steps_pretrain` run the codec objective with the adversarial weight
//! forced to zero; every later step first updates the discriminator on the
//! batch, then the codec networks with the full objective. Each step logs
//! one metrics row.
//!
//! The loop is deterministic: for a fixed seed, dataset and options, every
//! parameter ends up bit-identical no matter how often the run is paused and
//! resumed through checkpoints, because checkpoints carry the full-precision
//! training state alongside the interchange weights. If a loss turns
//! non-finite the trainer writes the most recent healthy checkpoint to the
//! configured path and aborts.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::networks::{read_checkpoint, write_checkpoint, ModelBundle, ModelConfig};
use crate::rng::Prng;
use crate::tensor::{Parameters, Tensor};
use crate::training::adam::Adam;
use crate::training::features::FeatureDistance;
use crate::training::loss::{loss_d, loss_egp};
use crate::training::state::{Stage, TrainState};
use crate::training::LossWeights;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Steps with the adversarial weight forced to zero.
    pub steps_pretrain: u64,
    /// Steps of alternating discriminator/codec updates after pretraining.
    pub steps_gan: u64,
    /// Rate target in bits per band-pixel; must be a lambda-table key.
    pub r_t: f64,
    /// Samples per batch, drawn with replacement.
    pub batch_size: usize,
    /// Learning rate for both parameter groups.
    pub lr: f64,
    /// How often (in steps) to refresh the in-memory rollback checkpoint.
    pub snapshot_every: u64,
    /// Where to write the final checkpoint, and the rollback checkpoint on
    /// divergence. Nothing is written when unset.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> TrainOptions {
        TrainOptions {
            steps_pretrain: 200,
            steps_gan: 200,
            r_t: 0.6,
            batch_size: 1,
            lr: 1e-4,
            snapshot_every: 1,
            checkpoint: None,
        }
    }
}

impl TrainOptions {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::usage("batch size must be at least 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::usage(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.snapshot_every == 0 {
            return Err(Error::usage("snapshot interval must be at least 1"));
        }
        Ok(())
    }

    fn total_steps(&self) -> u64 {
        self.steps_pretrain + self.steps_gan
    }
}

/// One logged training step.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub step: u64,
    pub stage: Stage,
    pub rate_bpp: f64,
    pub distortion: f64,
    pub lambda: f64,
    /// Present only on adversarial steps.
    pub d_loss: Option<f64>,
    pub se_l1: f64,
}

pub const METRICS_HEADER: &str = "step,stage,rate_bpp,distortion,lambda,d_loss,se_l1";

/// Renders rows as CSV under the fixed header.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let d_loss = r.d_loss.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step, r.stage, r.rate_bpp, r.distortion, r.lambda, d_loss, r.se_l1
        ));
    }
    out
}

pub fn write_metrics_csv(path: impl AsRef<std::path::Path>, rows: &[MetricsRow]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub struct Trainer {
    bundle: ModelBundle,
    proxy: FeatureDistance,
    weights: LossWeights,
    opts: TrainOptions,
    adam_egp: Adam,
    adam_d: Adam,
    sampler: Prng,
    step: u64,
    run_rate: f64,
    run_distortion: f64,
    /// Serialized checkpoint of the newest healthy state, for divergence
    /// rollback.
    last_good: Vec<u8>,
}

/// Smoothing factor of the running rate/distortion averages.
const RUN_DECAY: f64 = 0.99;

impl Trainer {
    pub fn new(
        bundle: ModelBundle,
        weights: LossWeights,
        opts: TrainOptions,
        seed: u64,
    ) -> Result<Trainer> {
        weights.validate()?;
        opts.validate()?;
        weights.lambda_a(opts.r_t)?;
        let proxy = FeatureDistance::new(bundle.config.input_bands());
        let adam_egp = Adam::new(opts.lr, bundle.nets.param_count());
        let adam_d = Adam::new(opts.lr, bundle.disc.param_count());
        let mut t = Trainer {
            proxy,
            weights,
            opts,
            adam_egp,
            adam_d,
            sampler: Prng::new(seed),
            step: 0,
            run_rate: 0.0,
            run_distortion: 0.0,
            bundle,
            last_good: Vec::new(),
        };
        t.last_good = t.checkpoint_bytes();
        Ok(t)
    }

    /// Rebuilds a trainer from a checkpoint that carries a training state
    /// appendix, resuming exactly where the saved run stopped.
    pub fn from_checkpoint_bytes(
        bytes: &[u8],
        weights: LossWeights,
        opts: TrainOptions,
    ) -> Result<Trainer> {
        weights.validate()?;
        opts.validate()?;
        weights.lambda_a(opts.r_t)?;
        let (mut bundle, appendix) = read_checkpoint(bytes)?;
        let appendix = appendix
            .ok_or_else(|| Error::format("checkpoint carries no training state to resume from"))?;
        let state = TrainState::decode(&appendix)?;
        state.apply_master(&mut bundle)?;
        if state.adam_egp.m.len() != bundle.nets.param_count()
            || state.adam_d.m.len() != bundle.disc.param_count()
        {
            return Err(Error::format(
                "optimizer state does not match the checkpoint's parameter groups",
            ));
        }
        let proxy = FeatureDistance::new(bundle.config.input_bands());
        let mut t = Trainer {
            proxy,
            weights,
            opts,
            adam_egp: state.adam_egp,
            adam_d: state.adam_d,
            sampler: Prng::restore(state.sampler),
            step: state.step,
            run_rate: state.run_rate,
            run_distortion: state.run_distortion,
            bundle,
            last_good: Vec::new(),
        };
        t.last_good = t.checkpoint_bytes();
        Ok(t)
    }

    pub fn from_checkpoint_file(
        path: impl AsRef<std::path::Path>,
        weights: LossWeights,
        opts: TrainOptions,
    ) -> Result<Trainer> {
        let path = path.as_ref();
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Trainer::from_checkpoint_bytes(&bytes, weights, opts)
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn into_bundle(self) -> ModelBundle {
        self.bundle
    }

    pub fn completed_steps(&self) -> u64 {
        self.step
    }

    /// Stage of the next step to run.
    fn stage_next(&self) -> Stage {
        if self.step < self.opts.steps_pretrain {
            Stage::Pretrain
        } else {
            Stage::Adversarial
        }
    }

    pub fn state(&self) -> TrainState {
        TrainState::capture(
            &self.bundle,
            self.step,
            self.stage_next(),
            self.adam_egp.clone(),
            self.adam_d.clone(),
            self.sampler.state(),
            self.run_rate,
            self.run_distortion,
        )
    }

    /// Full checkpoint: interchange weights plus the exact resume state.
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        write_checkpoint(&self.bundle, Some(&self.state().encode()))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.checkpoint_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    fn one_step(&mut self, data: &[Tensor]) -> Result<MetricsRow> {
        let stage = self.stage_next();
        let batch_idx: Vec<usize> = (0..self.opts.batch_size)
            .map(|_| self.sampler.below(data.len()))
            .collect();
        let batch: Vec<&Tensor> = batch_idx.iter().map(|&i| &data[i]).collect();
        let mut d_loss = None;
        if stage == Stage::Adversarial {
            self.bundle.disc.zero_grads();
            let v = loss_d(&self.bundle.nets, &mut self.bundle.disc, &batch)?;
            self.adam_d.step(&mut self.bundle.disc)?;
            d_loss = Some(v);
        }
        let beta = match stage {
            Stage::Pretrain => 0.0,
            Stage::Adversarial => self.weights.beta,
        };
        self.bundle.nets.zero_grads();
        let out = loss_egp(
            &mut self.bundle.nets,
            &mut self.bundle.disc,
            &mut self.proxy,
            &batch,
            &self.weights,
            beta,
            self.opts.r_t,
        )?;
        self.adam_egp.step(&mut self.bundle.nets)?;
        self.step += 1;
        if self.step == 1 {
            self.run_rate = out.rate_bpp;
            self.run_distortion = out.distortion.value;
        } else {
            self.run_rate = RUN_DECAY * self.run_rate + (1.0 - RUN_DECAY) * out.rate_bpp;
            self.run_distortion =
                RUN_DECAY * self.run_distortion + (1.0 - RUN_DECAY) * out.distortion.value;
        }
        let row = MetricsRow {
            step: self.step,
            stage,
            rate_bpp: out.rate_bpp,
            distortion: out.distortion.value,
            lambda: out.lambda,
            d_loss,
            se_l1: out.se_l1,
        };
        if self.step % self.opts.snapshot_every == 0 {
            self.last_good = self.checkpoint_bytes();
        }
        Ok(row)
    }

    /// Runs every remaining step of the schedule, returning one metrics row
    /// per step taken. On divergence the newest healthy checkpoint is written
    /// to the configured path and the error is returned.
    pub fn run(&mut self, data: &[Tensor]) -> Result<Vec<MetricsRow>> {
        if data.is_empty() {
            return Err(Error::usage("training dataset is empty"));
        }
        let mut rows = Vec::new();
        while self.step < self.opts.total_steps() {
            match self.one_step(data) {
                Ok(row) => rows.push(row),
                Err(e) => {
                    let at = self.step + 1;
                    if let Some(path) = &self.opts.checkpoint {
                        std::fs::write(path, &self.last_good)
                            .map_err(|io| Error::io(path.display().to_string(), io))?;
                    }
                    return Err(match e {
                        Error::NonFinite { context } => Error::non_finite(format!(
                            "aborted at step {at}: {context} (last healthy checkpoint {})",
                            match &self.opts.checkpoint {
                                Some(p) => format!("written to {}", p.display()),
                                None => "kept in memory only".to_string(),
                            }
                        )),
                        other => other,
                    });
                }
            }
        }
        if let Some(path) = self.opts.checkpoint.clone() {
            self.save(path)?;
        }
        Ok(rows)
    }
}

/// Builds a fresh model for `config` and trains it through the full
/// schedule.
pub fn train(
    config: &ModelConfig,
    data: &[Tensor],
    weights: &LossWeights,
    opts: &TrainOptions,
    seed: u64,
) -> Result<(ModelBundle, Vec<MetricsRow>)> {
    let bundle = ModelBundle::build(config)?;
    let mut trainer = Trainer::new(bundle, weights.clone(), opts.clone(), seed)?;
    let rows = trainer.run(data)?;
    Ok((trainer.into_bundle(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::Variant;

    fn tiny_config() -> ModelConfig {
        let mut cfg = ModelConfig::new(Variant::Se, 2);
        cfg.width_scale = 0.0625;
        cfg.seed = 11;
        cfg
    }

    fn tiny_data(n: usize, bands: usize, size: usize) -> Vec<Tensor> {
        let mut rng = Prng::new(77);
        (0..n)
            .map(|_| {
                let data: Vec<f64> = (0..bands * size * size).map(|_| rng.uniform()).collect();
                Tensor::new(&[bands, size, size], data).unwrap()
            })
            .collect()
    }

    fn tiny_opts() -> TrainOptions {
        TrainOptions {
            steps_pretrain: 3,
            steps_gan: 3,
            r_t: 0.2,
            ..TrainOptions::default()
        }
    }

    #[test]
    fn schedule_stages_and_logs_line_up() {
        let data = tiny_data(4, 2, 16);
        let (_, rows) =
            train(&tiny_config(), &data, &LossWeights::default(), &tiny_opts(), 1).unwrap();
        assert_eq!(rows.len(), 6);
        let weights = LossWeights::default();
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.step, i as u64 + 1);
            let want_stage = if i < 3 { Stage::Pretrain } else { Stage::Adversarial };
            assert_eq!(row.stage, want_stage);
            assert_eq!(row.d_loss.is_some(), want_stage == Stage::Adversarial);
            assert!(row.rate_bpp.is_finite() && row.rate_bpp >= 0.0);
            assert!(row.distortion.is_finite());
            // The logged lambda must replay from the logged rate.
            assert_eq!(row.lambda, weights.lambda_select(row.rate_bpp, 0.2).unwrap());
        }
    }

    #[test]
    fn csv_rendering_is_stable() {
        let rows = vec![
            MetricsRow {
                step: 1,
                stage: Stage::Pretrain,
                rate_bpp: 0.5,
                distortion: 0.25,
                lambda: 2.0,
                d_loss: None,
                se_l1: 0.125,
            },
            MetricsRow {
                step: 2,
                stage: Stage::Adversarial,
                rate_bpp: 0.1,
                distortion: 0.2,
                lambda: 0.015625,
                d_loss: Some(1.5),
                se_l1: 0.0,
            },
        ];
        let csv = metrics_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,stage,rate_bpp,distortion,lambda,d_loss,se_l1");
        assert_eq!(lines[1], "1,pretrain,0.5,0.25,2,,0.125");
        assert_eq!(lines[2], "2,adversarial,0.1,0.2,0.015625,1.5,0");
    }

    #[test]
    fn resume_is_bit_identical() {
        let data = tiny_data(5, 2, 16);
        let weights = LossWeights::default();
        let opts = tiny_opts();

        let bundle = ModelBundle::build(&tiny_config()).unwrap();
        let mut straight = Trainer::new(bundle, weights.clone(), opts.clone(), 42).unwrap();
        let rows_straight = straight.run(&data).unwrap();

        let bundle = ModelBundle::build(&tiny_config()).unwrap();
        let mut first = Trainer::new(bundle, weights.clone(), opts.clone(), 42).unwrap();
        let mut rows_split = Vec::new();
        for _ in 0..3 {
            rows_split.push(first.one_step(&data).unwrap());
        }
        let saved = first.checkpoint_bytes();
        let mut second =
            Trainer::from_checkpoint_bytes(&saved, weights, opts).unwrap();
        rows_split.extend(second.run(&data).unwrap());

        assert_eq!(rows_straight.len(), rows_split.len());
        for (a, b) in rows_straight.iter().zip(&rows_split) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.rate_bpp.to_bits(), b.rate_bpp.to_bits());
            assert_eq!(a.distortion.to_bits(), b.distortion.to_bits());
            assert_eq!(a.d_loss.map(f64::to_bits), b.d_loss.map(f64::to_bits));
        }
        let mut bits_a = Vec::new();
        straight
            .bundle()
            .visit(&mut |p| bits_a.extend(p.value.data().iter().map(|v| v.to_bits())));
        let mut bits_b = Vec::new();
        second
            .bundle()
            .visit(&mut |p| bits_b.extend(p.value.data().iter().map(|v| v.to_bits())));
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn divergence_writes_the_last_good_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("rollback.ckpt");
        let data = tiny_data(3, 2, 16);
        let bundle = ModelBundle::build(&tiny_config()).unwrap();
        let opts = TrainOptions {
            checkpoint: Some(ckpt.clone()),
            ..tiny_opts()
        };
        let mut trainer = Trainer::new(bundle, LossWeights::default(), opts, 5).unwrap();
        trainer.one_step(&data).unwrap();
        trainer.bundle.nets.encoder.visit_mut(&mut |p| {
            if p.id == "enc.front.weight" {
                p.value.data_mut()[0] = f64::NAN;
            }
        });
        let err = trainer.run(&data).unwrap_err();
        assert!(err.to_string().contains("step 2"), "{err}");
        let (recovered, appendix) = read_checkpoint(&std::fs::read(&ckpt).unwrap()).unwrap();
        assert_eq!(recovered.config.digest(), tiny_config().digest());
        let state = TrainState::decode(&appendix.unwrap()).unwrap();
        assert_eq!(state.step, 1);
    }

    #[test]
    fn finished_run_saves_a_resumable_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("final.ckpt");
        let data = tiny_data(3, 2, 16);
        let opts = TrainOptions {
            checkpoint: Some(ckpt.clone()),
            ..tiny_opts()
        };
        train(&tiny_config(), &data, &LossWeights::default(), &opts, 9).unwrap();
        let resumed =
            Trainer::from_checkpoint_file(&ckpt, LossWeights::default(), tiny_opts()).unwrap();
        assert_eq!(resumed.completed_steps(), 6);
        // Nothing left to do; run returns immediately with no rows.
        let mut resumed = resumed;
        assert!(resumed.run(&data).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_options() {
        let bundle = ModelBundle::build(&tiny_config()).unwrap();
        let bad_batch = TrainOptions {
            batch_size: 0,
            ..tiny_opts()
        };
        assert!(Trainer::new(bundle.clone(), LossWeights::default(), bad_batch, 1).is_err());
        let bad_target = TrainOptions {
            r_t: 0.35,
            ..tiny_opts()
        };
        assert!(Trainer::new(bundle, LossWeights::default(), bad_target, 1).is_err());
    }
}
