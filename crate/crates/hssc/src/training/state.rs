//! Serializable training state.
//!
//! A checkpoint alone restores a model's weights, but only at the f32
//! precision the tensor section stores. Resuming a run bit-for-bit needs
//! more: the full f64 parameter values, both optimizers' moment arrays and
//! step clocks, the data sampler's position, and the running averages. All
//! of that lives in a [`TrainState`], encoded as the checkpoint's appendix
//! section, so one file carries both the interchange weights and the exact
//! resume point.

use crate::error::{Error, Result};
use crate::networks::ModelBundle;
use crate::rng::PrngState;
use crate::tensor::Parameters;
use crate::training::adam::Adam;

const MAGIC: &[u8; 8] = b"HSSCTRNS";
const VERSION: u16 = 1;

/// Which half of the schedule a step belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Rate-distortion only; the adversarial weight is forced to zero.
    Pretrain,
    /// Alternating discriminator and codec steps.
    Adversarial,
}

impl Stage {
    fn tag(self) -> u8 {
        match self {
            Stage::Pretrain => 0,
            Stage::Adversarial => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Stage> {
        match tag {
            0 => Ok(Stage::Pretrain),
            1 => Ok(Stage::Adversarial),
            other => Err(Error::format(format!("unknown stage tag {other}"))),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Adversarial => "adversarial",
        })
    }
}

/// Everything beyond the weights that a resumed run needs.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Completed global steps.
    pub step: u64,
    pub stage: Stage,
    /// Optimizer for the encoder/generator/prior group.
    pub adam_egp: Adam,
    /// Optimizer for the discriminator.
    pub adam_d: Adam,
    /// Position of the batch sampler.
    pub sampler: PrngState,
    /// Exponential running average of the logged rate.
    pub run_rate: f64,
    /// Exponential running average of the logged distortion.
    pub run_distortion: f64,
    /// Full-precision copy of every parameter, registry order.
    pub master: Vec<f64>,
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    push_u64(out, vs.len() as u64);
    for v in vs {
        push_f64(out, *v);
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::format("training state is truncated"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > self.data.len() / 8 + 1 {
            return Err(Error::format(format!(
                "training state claims {n} values but the buffer cannot hold them"
            )));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
}

fn encode_adam(out: &mut Vec<u8>, adam: &Adam) {
    push_f64(out, adam.lr);
    push_u64(out, adam.t);
    push_f64s(out, &adam.m);
    push_f64s(out, &adam.v);
}

fn decode_adam(c: &mut Cursor) -> Result<Adam> {
    let lr = c.f64()?;
    let t = c.u64()?;
    let m = c.f64s()?;
    let v = c.f64s()?;
    Adam::restore(lr, t, m, v)
}

impl TrainState {
    /// Captures the state of a run: parameter values at full precision plus
    /// the pieces handed in.
    pub fn capture(
        bundle: &ModelBundle,
        step: u64,
        stage: Stage,
        adam_egp: Adam,
        adam_d: Adam,
        sampler: PrngState,
        run_rate: f64,
        run_distortion: f64,
    ) -> TrainState {
        let mut master = Vec::with_capacity(bundle.param_count());
        bundle.visit(&mut |p| master.extend_from_slice(p.value.data()));
        TrainState {
            step,
            stage,
            adam_egp,
            adam_d,
            sampler,
            run_rate,
            run_distortion,
            master,
        }
    }

    /// Overwrites the bundle's parameters with the stored full-precision
    /// values. The bundle must come from the matching checkpoint.
    pub fn apply_master(&self, bundle: &mut ModelBundle) -> Result<()> {
        if bundle.param_count() != self.master.len() {
            return Err(Error::format(format!(
                "training state holds {} parameter values but the model has {}",
                self.master.len(),
                bundle.param_count()
            )));
        }
        let mut offset = 0usize;
        bundle.visit_mut(&mut |p| {
            let n = p.value.numel();
            p.value
                .data_mut()
                .copy_from_slice(&self.master[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        push_u64(&mut out, self.step);
        out.push(self.stage.tag());
        push_u64(&mut out, self.sampler.seed);
        push_u64(&mut out, self.sampler.stream);
        out.extend_from_slice(&self.sampler.word_pos.to_le_bytes());
        push_f64(&mut out, self.run_rate);
        push_f64(&mut out, self.run_distortion);
        encode_adam(&mut out, &self.adam_egp);
        encode_adam(&mut out, &self.adam_d);
        push_f64s(&mut out, &self.master);
        out
    }

    pub fn decode(data: &[u8]) -> Result<TrainState> {
        let mut c = Cursor { data, pos: 0 };
        if c.take(8)? != MAGIC {
            return Err(Error::format(
                "checkpoint appendix is not a training state section",
            ));
        }
        let version = c.u16()?;
        if version != VERSION {
            return Err(Error::format(format!(
                "unsupported training state version {version}"
            )));
        }
        let step = c.u64()?;
        let stage = Stage::from_tag(c.u8()?)?;
        let sampler = PrngState {
            seed: c.u64()?,
            stream: c.u64()?,
            word_pos: c.u128()?,
        };
        let run_rate = c.f64()?;
        let run_distortion = c.f64()?;
        let adam_egp = decode_adam(&mut c)?;
        let adam_d = decode_adam(&mut c)?;
        let master = c.f64s()?;
        if c.pos != data.len() {
            return Err(Error::format(format!(
                "training state has {} trailing bytes",
                data.len() - c.pos
            )));
        }
        Ok(TrainState {
            step,
            stage,
            adam_egp,
            adam_d,
            sampler,
            run_rate,
            run_distortion,
            master,
        })
    }
}
