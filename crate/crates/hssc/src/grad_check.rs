//! Finite-difference validation of hand-written backward passes.
//!
//! [`grad_check`] compares analytic gradients against central differences in
//! double precision. It is the independent oracle for every layer and loss in
//! the crate: the numeric side only ever calls the forward path, so a bug in
//! a backward implementation cannot hide in its own verification.
//!
//! The reported figure of merit for an element with analytic gradient `a` and
//! numeric gradient `n` is `|a - n| / max(|a|, |n|, 1e-8)`. Two escape
//! hatches keep the check honest rather than noisy:
//!
//! * elements where `|a - n|` is below an absolute floor are counted as
//!   agreement outright, since at that magnitude the difference quotient is
//!   dominated by `f64` rounding of the loss itself;
//! * elements where the one-sided differences disagree with each other are
//!   flagged as non-differentiable points (kinks) and reported separately
//!   instead of failing the check, which is what `|x|` at zero should do.

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::{Parameter, Parameters};
use std::fmt;

#[derive(Debug, Clone)]
pub struct GradCheckOpts {
    /// Central difference step.
    pub eps: f64,
    /// `|a - n|` at or below this counts as agreement regardless of the
    /// relative error.
    pub abs_tol: f64,
    /// Check at most this many elements per parameter tensor, sampled
    /// deterministically. `None` checks every element.
    pub max_per_param: Option<usize>,
    /// Seed for the element sampler.
    pub sample_seed: u64,
}

impl Default for GradCheckOpts {
    fn default() -> Self {
        GradCheckOpts {
            eps: 1e-4,
            abs_tol: 1e-9,
            max_per_param: None,
            sample_seed: 0,
        }
    }
}

/// The element with the largest relative error.
#[derive(Debug, Clone)]
pub struct WorstElement {
    pub id: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all checked, non-kink elements.
    pub max_rel_err: f64,
    pub worst: Option<WorstElement>,
    /// Elements classified as non-differentiable points.
    pub kinks: usize,
    /// Elements compared in total (including kinks).
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err < rel_tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "grad check: {} elements, max rel err {:.3e}, {} kinks",
            self.checked, self.max_rel_err, self.kinks
        )?;
        if let Some(w) = &self.worst {
            write!(
                f,
                " (worst {}[{}]: analytic {:.6e}, numeric {:.6e})",
                w.id, w.index, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

const REL_DENOM_FLOOR: f64 = 1e-8;
/// Relative error above which an element is probed for a kink before being
/// allowed to count toward the maximum.
const KINK_PROBE_THRESHOLD: f64 = 1e-3;
/// One-sided differences disagreeing by more than this (relatively) mark a
/// non-differentiable point.
const KINK_DISAGREEMENT: f64 = 0.5;

fn with_param_mut<M: Parameters, R>(
    model: &mut M,
    index: usize,
    f: impl FnOnce(&mut Parameter) -> R,
) -> R {
    let mut f = Some(f);
    let mut out = None;
    let mut k = 0usize;
    model.visit_mut(&mut |p| {
        if k == index {
            let f = f.take().expect("parameter visited twice");
            out = Some(f(p));
        }
        k += 1;
    });
    out.expect("parameter index out of range")
}

fn sample_indices(numel: usize, cap: usize, rng: &mut Prng) -> Vec<usize> {
    if numel <= cap {
        return (0..numel).collect();
    }
    let mut pool: Vec<usize> = (0..numel).collect();
    for i in 0..cap {
        let j = i + rng.below(numel - i);
        pool.swap(i, j);
    }
    let mut chosen: Vec<usize> = pool[..cap].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Checks the gradients that `backward` writes into `model`'s parameters
/// against central differences of `eval`.
///
/// `eval` must be a pure scalar function of the parameters: it is called
/// twice up front and must reproduce its value bit for bit. `backward` must
/// leave parameter values untouched and deposit gradients of the same scalar
/// into each parameter's accumulator (clearing them first is its job).
pub fn grad_check<M, F, G>(
    model: &mut M,
    mut eval: F,
    mut backward: G,
    opts: &GradCheckOpts,
) -> Result<GradCheckReport>
where
    M: Parameters,
    F: FnMut(&mut M) -> Result<f64>,
    G: FnMut(&mut M) -> Result<f64>,
{
    let f_center = eval(model)?;
    let f_again = eval(model)?;
    if f_center.to_bits() != f_again.to_bits() {
        return Err(Error::NotPure {
            delta: (f_center - f_again).abs(),
        });
    }
    backward(model)?;

    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    model.visit(&mut |p| analytic.push((p.id.clone(), p.grad.data().to_vec())));

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        kinks: 0,
        checked: 0,
    };
    let base = Prng::new(opts.sample_seed);

    for (param_idx, (id, grads)) in analytic.iter().enumerate() {
        let numel = grads.len();
        let indices = match opts.max_per_param {
            Some(cap) => sample_indices(numel, cap, &mut base.fork(param_idx as u64)),
            None => (0..numel).collect(),
        };
        for &i in &indices {
            let orig = with_param_mut(model, param_idx, |p| p.value.data()[i]);
            with_param_mut(model, param_idx, |p| p.value.data_mut()[i] = orig + opts.eps);
            let f_plus = eval(model)?;
            with_param_mut(model, param_idx, |p| p.value.data_mut()[i] = orig - opts.eps);
            let f_minus = eval(model)?;
            with_param_mut(model, param_idx, |p| p.value.data_mut()[i] = orig);

            let numeric = (f_plus - f_minus) / (2.0 * opts.eps);
            let a = grads[i];
            report.checked += 1;
            let diff = (a - numeric).abs();
            if diff <= opts.abs_tol {
                continue;
            }
            let rel = diff / a.abs().max(numeric.abs()).max(REL_DENOM_FLOOR);
            if rel > KINK_PROBE_THRESHOLD {
                let fwd = (f_plus - f_center) / opts.eps;
                let bwd = (f_center - f_minus) / opts.eps;
                let disagreement =
                    (fwd - bwd).abs() / fwd.abs().max(bwd.abs()).max(REL_DENOM_FLOOR);
                if disagreement > KINK_DISAGREEMENT {
                    report.kinks += 1;
                    continue;
                }
            }
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some(WorstElement {
                    id: id.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
