//! Learned factorized probability model over quantized latents.
//!
//! Each latent channel gets its own univariate cumulative distribution,
//! parameterized as a three-layer network that is monotone by construction:
//! weights pass through softplus so they stay positive, and each hidden
//! layer applies the gate `t + tanh(a) * tanh(t)` whose slope is always
//! positive because `|tanh(a)| < 1`. A final sigmoid maps to `(0, 1)`.
//!
//! The raw curve is then normalized to hit 0 and 1 exactly at the edges of
//! the coder support and mixed with a sliver of the uniform distribution:
//!
//! `cdf(x) = (1 - e) * norm(x) + e * uniform(x)`, with `e` chosen so every
//! symbol's probability is at least `2^-16`. That floor makes the integer
//! frequency tables for the range coder well defined no matter how peaked
//! the learned distribution gets, and the mixture keeps the whole thing
//! differentiable so the rate term of the training loss is this same model
//! evaluated at the quantized values.

use crate::coding::{LATENT_BOUND, NUM_SYMBOLS};
use crate::error::{Error, Result};
use crate::layers::sigmoid_scalar;
use crate::rng::Prng;
use crate::tensor::{Parameter, Parameters, Tensor};

/// Hidden width of each per-channel distribution network.
const WIDTH: usize = 3;

/// Guaranteed minimum probability of any symbol on the support.
pub const PROB_FLOOR: f64 = 1.0 / 65536.0;

/// Uniform mixture weight delivering [`PROB_FLOOR`] per symbol.
const MIX: f64 = NUM_SYMBOLS as f64 / 65536.0;

/// Target slope of the initial cumulative curve, roughly matching a latent
/// standard deviation of 10.
const INIT_SCALE: f64 = 10.0;

fn support_lo() -> f64 {
    -f64::from(LATENT_BOUND) - 0.5
}

fn support_hi() -> f64 {
    f64::from(LATENT_BOUND) + 0.5
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softplus_inv(y: f64) -> f64 {
    y.exp_m1().ln()
}

/// Per-channel transformed coefficients, computed once per pass.
struct Coeffs {
    s1: [f64; WIDTH],
    b1: [f64; WIDTH],
    g1: [f64; WIDTH],
    s2: [[f64; WIDTH]; WIDTH],
    b2: [f64; WIDTH],
    g2: [f64; WIDTH],
    s3: [f64; WIDTH],
    b3: f64,
}

/// Gradients in transformed-coefficient space, mapped back to the raw
/// parameters in one step per channel.
#[derive(Default)]
struct CoeffGrads {
    s1: [f64; WIDTH],
    b1: [f64; WIDTH],
    g1: [f64; WIDTH],
    s2: [[f64; WIDTH]; WIDTH],
    b2: [f64; WIDTH],
    g2: [f64; WIDTH],
    s3: [f64; WIDTH],
    b3: f64,
}

/// Intermediates of one evaluation of the raw curve.
#[derive(Debug, Clone)]
struct RawCache {
    x: f64,
    u_pre: [f64; WIDTH],
    u: [f64; WIDTH],
    v_pre: [f64; WIDTH],
    v: [f64; WIDTH],
    raw: f64,
}

fn raw_forward(co: &Coeffs, x: f64) -> RawCache {
    let mut u_pre = [0.0; WIDTH];
    let mut u = [0.0; WIDTH];
    for j in 0..WIDTH {
        u_pre[j] = co.s1[j] * x + co.b1[j];
        u[j] = u_pre[j] + co.g1[j] * u_pre[j].tanh();
    }
    let mut v_pre = [0.0; WIDTH];
    let mut v = [0.0; WIDTH];
    for j in 0..WIDTH {
        let mut acc = co.b2[j];
        for i in 0..WIDTH {
            acc += co.s2[j][i] * u[i];
        }
        v_pre[j] = acc;
        v[j] = acc + co.g2[j] * acc.tanh();
    }
    let mut w = co.b3;
    for j in 0..WIDTH {
        w += co.s3[j] * v[j];
    }
    RawCache {
        x,
        u_pre,
        u,
        v_pre,
        v,
        raw: sigmoid_scalar(w),
    }
}

/// Accumulates coefficient gradients for `d_raw` flowing into one cached
/// evaluation and returns the gradient with respect to the input point.
fn raw_backward(co: &Coeffs, cache: &RawCache, d_raw: f64, g: &mut CoeffGrads) -> f64 {
    let dw = d_raw * cache.raw * (1.0 - cache.raw);
    g.b3 += dw;
    let mut dv = [0.0; WIDTH];
    for j in 0..WIDTH {
        g.s3[j] += dw * cache.v[j];
        dv[j] = dw * co.s3[j];
    }
    let mut du = [0.0; WIDTH];
    for j in 0..WIDTH {
        let t2 = cache.v_pre[j].tanh();
        g.g2[j] += dv[j] * t2;
        let dvp = dv[j] * (1.0 + co.g2[j] * (1.0 - t2 * t2));
        g.b2[j] += dvp;
        for i in 0..WIDTH {
            g.s2[j][i] += dvp * cache.u[i];
            du[i] += dvp * co.s2[j][i];
        }
    }
    let mut dx = 0.0;
    for i in 0..WIDTH {
        let t1 = cache.u_pre[i].tanh();
        g.g1[i] += du[i] * t1;
        let dup = du[i] * (1.0 + co.g1[i] * (1.0 - t1 * t1));
        g.b1[i] += dup;
        g.s1[i] += dup * cache.x;
        dx += dup * co.s1[i];
    }
    dx
}

#[derive(Debug, Clone)]
pub struct FactorizedEntropyModel {
    channels: usize,
    /// Pre-softplus weights, layers 1 to 3.
    pub h1: Parameter,
    pub b1: Parameter,
    /// Pre-tanh gate strengths.
    pub a1: Parameter,
    pub h2: Parameter,
    pub b2: Parameter,
    pub a2: Parameter,
    pub h3: Parameter,
    pub b3: Parameter,
}

struct ElemCache {
    plus: RawCache,
    minus: RawCache,
    p: f64,
}

/// Everything the backward pass needs from one rate evaluation.
pub struct RateLossCache {
    shape: Vec<usize>,
    elems: Vec<ElemCache>,
    /// Per channel: the evaluations at the support edges.
    edges: Vec<(RawCache, RawCache)>,
}

impl FactorizedEntropyModel {
    pub fn new(rng: &mut Prng, channels: usize) -> FactorizedEntropyModel {
        assert!(channels > 0, "entropy model needs at least one channel");
        // Split the initial slope 1/INIT_SCALE evenly across the layers;
        // layers 2 and 3 sum WIDTH inputs, so their per-entry weight is the
        // layer factor over WIDTH.
        let layer_factor = (1.0 / INIT_SCALE).powf(1.0 / 3.0);
        let w1 = softplus_inv(layer_factor);
        let wn = softplus_inv(layer_factor / WIDTH as f64);
        let c = channels;
        let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.range(-0.5, 0.5)).collect() };
        let b1 = uniform(c * WIDTH);
        let b2 = uniform(c * WIDTH);
        let b3 = uniform(c);
        FactorizedEntropyModel {
            channels,
            h1: Parameter::new("prior.h1", Tensor::full(&[c, WIDTH], w1).expect("prior shape")),
            b1: Parameter::new("prior.b1", Tensor::new(&[c, WIDTH], b1).expect("prior shape")),
            a1: Parameter::new("prior.a1", Tensor::zeros(&[c, WIDTH]).expect("prior shape")),
            h2: Parameter::new("prior.h2", Tensor::full(&[c, WIDTH, WIDTH], wn).expect("prior shape")),
            b2: Parameter::new("prior.b2", Tensor::new(&[c, WIDTH], b2).expect("prior shape")),
            a2: Parameter::new("prior.a2", Tensor::zeros(&[c, WIDTH]).expect("prior shape")),
            h3: Parameter::new("prior.h3", Tensor::full(&[c, WIDTH], wn).expect("prior shape")),
            b3: Parameter::new("prior.b3", Tensor::new(&[c], b3).expect("prior shape")),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn coeffs(&self, c: usize) -> Coeffs {
        let mut co = Coeffs {
            s1: [0.0; WIDTH],
            b1: [0.0; WIDTH],
            g1: [0.0; WIDTH],
            s2: [[0.0; WIDTH]; WIDTH],
            b2: [0.0; WIDTH],
            g2: [0.0; WIDTH],
            s3: [0.0; WIDTH],
            b3: self.b3.value.data()[c],
        };
        for j in 0..WIDTH {
            co.s1[j] = softplus(self.h1.value.data()[c * WIDTH + j]);
            co.b1[j] = self.b1.value.data()[c * WIDTH + j];
            co.g1[j] = self.a1.value.data()[c * WIDTH + j].tanh();
            co.b2[j] = self.b2.value.data()[c * WIDTH + j];
            co.g2[j] = self.a2.value.data()[c * WIDTH + j].tanh();
            co.s3[j] = softplus(self.h3.value.data()[c * WIDTH + j]);
            for i in 0..WIDTH {
                co.s2[j][i] = softplus(self.h2.value.data()[c * WIDTH * WIDTH + j * WIDTH + i]);
            }
        }
        co
    }

    /// Maps transformed-space gradients back onto the raw parameters of one
    /// channel.
    fn apply_grads(&mut self, c: usize, g: &CoeffGrads) {
        for j in 0..WIDTH {
            let k = c * WIDTH + j;
            self.h1.grad.data_mut()[k] += g.s1[j] * sigmoid_scalar(self.h1.value.data()[k]);
            self.b1.grad.data_mut()[k] += g.b1[j];
            let t = self.a1.value.data()[k].tanh();
            self.a1.grad.data_mut()[k] += g.g1[j] * (1.0 - t * t);
            self.b2.grad.data_mut()[k] += g.b2[j];
            let t = self.a2.value.data()[k].tanh();
            self.a2.grad.data_mut()[k] += g.g2[j] * (1.0 - t * t);
            self.h3.grad.data_mut()[k] += g.s3[j] * sigmoid_scalar(self.h3.value.data()[k]);
            for i in 0..WIDTH {
                let k2 = c * WIDTH * WIDTH + j * WIDTH + i;
                self.h2.grad.data_mut()[k2] += g.s2[j][i] * sigmoid_scalar(self.h2.value.data()[k2]);
            }
        }
        self.b3.grad.data_mut()[c] += g.b3;
    }

    fn span(&self, co: &Coeffs) -> Result<(RawCache, RawCache, f64)> {
        let lo = raw_forward(co, support_lo());
        let hi = raw_forward(co, support_hi());
        let d = hi.raw - lo.raw;
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::non_finite("entropy model support has collapsed"));
        }
        Ok((lo, hi, d))
    }

    /// Cumulative probability at `x` for one channel, floor mixture
    /// included.
    pub fn cdf(&self, channel: usize, x: f64) -> Result<f64> {
        let co = self.coeffs(channel);
        let (lo, _, d) = self.span(&co)?;
        let raw = raw_forward(&co, x).raw;
        let norm = (raw - lo.raw) / d;
        let uni = (x - support_lo()) / (support_hi() - support_lo());
        Ok((1.0 - MIX) * norm + MIX * uni)
    }

    /// Probability of every symbol on the support, in symbol order.
    ///
    /// The entries are differences of the mixed cumulative curve at
    /// consecutive half-integer edges, so they sum to 1 up to rounding and
    /// each is at least [`PROB_FLOOR`].
    pub fn pmf(&self, channel: usize) -> Result<Vec<f64>> {
        let co = self.coeffs(channel);
        let mut raws = Vec::with_capacity(NUM_SYMBOLS + 1);
        for m in 0..=NUM_SYMBOLS {
            raws.push(raw_forward(&co, support_lo() + m as f64).raw);
        }
        let d = raws[NUM_SYMBOLS] - raws[0];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::non_finite("entropy model support has collapsed"));
        }
        Ok((0..NUM_SYMBOLS)
            .map(|k| (1.0 - MIX) * (raws[k + 1] - raws[k]) / d + PROB_FLOOR)
            .collect())
    }

    /// Ideal code length in bits for a tensor of quantized integer latents
    /// shaped `[channels, ...]`, via per-channel symbol tables.
    pub fn bits(&self, q: &Tensor) -> Result<f64> {
        let spatial = self.check_latents(q)?;
        let mut total = 0.0;
        for c in 0..self.channels {
            let pmf = self.pmf(c)?;
            for e in 0..spatial {
                let v = q.data()[c * spatial + e];
                if v.fract() != 0.0 || v.abs() > f64::from(LATENT_BOUND) {
                    return Err(Error::codec(format!(
                        "latent value {v} is not a symbol on the coder support"
                    )));
                }
                total -= pmf[crate::coding::symbol_of(v)].log2();
            }
        }
        Ok(total)
    }

    fn check_latents(&self, y: &Tensor) -> Result<usize> {
        if y.ndim() < 2 || y.shape()[0] != self.channels {
            return Err(Error::ShapeMismatch {
                op: "entropy model",
                left: vec![self.channels],
                right: y.shape().to_vec(),
            });
        }
        Ok(y.numel() / self.channels)
    }

    /// Differentiable code length in bits of a latent tensor shaped
    /// `[channels, ...]`. Values need not be integers; at integers this
    /// equals [`FactorizedEntropyModel::bits`].
    pub fn rate_loss(&self, y: &Tensor) -> Result<(f64, RateLossCache)> {
        let spatial = self.check_latents(y)?;
        y.assert_finite("rate loss input")?;
        let mut bits = 0.0;
        let mut elems = Vec::with_capacity(y.numel());
        let mut edges = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            let co = self.coeffs(c);
            let (lo, hi, d) = self.span(&co)?;
            for e in 0..spatial {
                let x = y.data()[c * spatial + e];
                let plus = raw_forward(&co, x + 0.5);
                let minus = raw_forward(&co, x - 0.5);
                let p = (1.0 - MIX) * (plus.raw - minus.raw) / d + PROB_FLOOR;
                bits -= p.log2();
                elems.push(ElemCache { plus, minus, p });
            }
            edges.push((lo, hi));
        }
        Ok((
            bits,
            RateLossCache {
                shape: y.shape().to_vec(),
                elems,
                edges,
            },
        ))
    }

    /// Backpropagates `d_bits` through a cached [`rate_loss`] evaluation,
    /// accumulating parameter gradients and returning the gradient with
    /// respect to the latent tensor.
    ///
    /// [`rate_loss`]: FactorizedEntropyModel::rate_loss
    pub fn rate_loss_backward(&mut self, cache: &RateLossCache, d_bits: f64) -> Result<Tensor> {
        let spatial: usize = cache.shape.iter().product::<usize>() / self.channels;
        let mut dy = Tensor::zeros(&cache.shape)?;
        let ln2 = std::f64::consts::LN_2;
        for c in 0..self.channels {
            let co = self.coeffs(c);
            let (lo, hi) = &cache.edges[c];
            let d = hi.raw - lo.raw;
            let mut g = CoeffGrads::default();
            let mut d_lo = 0.0;
            let mut d_hi = 0.0;
            for e in 0..spatial {
                let ec = &cache.elems[c * spatial + e];
                let dp = -d_bits / (ec.p * ln2);
                let scale = (1.0 - MIX) / d;
                let diff = ec.plus.raw - ec.minus.raw;
                let dd = -dp * (1.0 - MIX) * diff / (d * d);
                d_hi += dd;
                d_lo -= dd;
                let mut dx = raw_backward(&co, &ec.plus, dp * scale, &mut g);
                dx += raw_backward(&co, &ec.minus, -dp * scale, &mut g);
                dy.data_mut()[c * spatial + e] = dx;
            }
            raw_backward(&co, lo, d_lo, &mut g);
            raw_backward(&co, hi, d_hi, &mut g);
            self.apply_grads(c, &g);
        }
        Ok(dy)
    }
}

impl Parameters for FactorizedEntropyModel {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.h1);
        f(&self.b1);
        f(&self.a1);
        f(&self.h2);
        f(&self.b2);
        f(&self.a2);
        f(&self.h3);
        f(&self.b3);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.h1);
        f(&mut self.b1);
        f(&mut self.a1);
        f(&mut self.h2);
        f(&mut self.b2);
        f(&mut self.a2);
        f(&mut self.h3);
        f(&mut self.b3);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::{apportion, quantize, CumTable, RangeDecoder, RangeEncoder};
    use crate::grad_check::{grad_check, GradCheckOpts};

    /// A model pushed off its symmetric initialization by random jolts, so
    /// tests do not accidentally rely on the init structure.
    fn jolted(seed: u64, channels: usize) -> FactorizedEntropyModel {
        let mut rng = Prng::new(seed);
        let mut model = FactorizedEntropyModel::new(&mut rng, channels);
        model.visit_mut(&mut |p| {
            for v in p.value.data_mut() {
                *v += rng.range(-0.4, 0.4);
            }
        });
        model
    }

    #[test]
    fn cdf_is_monotone_with_exact_endpoints() {
        let model = jolted(11, 3);
        for c in 0..3 {
            assert_eq!(model.cdf(c, support_lo()).unwrap(), 0.0);
            assert_eq!(model.cdf(c, support_hi()).unwrap(), 1.0);
            let mut prev = -1.0;
            for step in 0..=500 {
                let x = support_lo() + (support_hi() - support_lo()) * step as f64 / 500.0;
                let v = model.cdf(c, x).unwrap();
                assert!(v >= prev, "cdf decreased at channel {c}, x = {x}");
                prev = v;
            }
        }
    }

    #[test]
    fn pmf_respects_the_floor_and_sums_to_one() {
        let model = jolted(5, 4);
        for c in 0..4 {
            let pmf = model.pmf(c).unwrap();
            assert_eq!(pmf.len(), NUM_SYMBOLS);
            for (k, &p) in pmf.iter().enumerate() {
                assert!(
                    p >= PROB_FLOOR * (1.0 - 1e-9),
                    "channel {c} symbol {k} fell below the floor: {p}"
                );
            }
            let sum: f64 = pmf.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "channel {c} pmf sums to {sum}");
        }
    }

    #[test]
    fn rate_on_integers_matches_the_symbol_tables() {
        let model = jolted(7, 2);
        let mut rng = Prng::new(3);
        let y = Tensor::new(
            &[2, 4, 4],
            (0..32).map(|_| rng.range(-6.0, 6.0)).collect(),
        )
        .unwrap();
        let (q, _) = quantize(&y);
        let table_bits = model.bits(&q).unwrap();
        let (loss_bits, _) = model.rate_loss(&q).unwrap();
        assert!(
            (table_bits - loss_bits).abs() < 1e-9,
            "table says {table_bits}, loss says {loss_bits}"
        );
    }

    #[test]
    fn non_integer_latents_are_rejected_by_bits() {
        let model = jolted(1, 1);
        let y = Tensor::new(&[1, 2, 1], vec![0.25, 1.0]).unwrap();
        assert!(model.bits(&y).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        struct Probe {
            model: FactorizedEntropyModel,
            y: Parameter,
        }
        impl Parameters for Probe {
            fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
                self.model.visit(f);
                f(&self.y);
            }
            fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
                self.model.visit_mut(f);
                f(&mut self.y);
            }
        }
        for seed in [1u64, 2, 3] {
            let model = jolted(seed, 2);
            let mut rng = Prng::new(100 + seed);
            let mut vals: Vec<f64> = (0..18).map(|_| rng.range(-4.0, 4.0)).collect();
            // One deep-tail point keeps the saturated branch covered.
            vals[0] = 30.0;
            let y = Parameter::new("y", Tensor::new(&[2, 3, 3], vals).unwrap());
            let mut probe = Probe { model, y };
            let report = grad_check(
                &mut probe,
                |p| Ok(p.model.rate_loss(&p.y.value)?.0),
                |p| {
                    p.zero_grads();
                    let (_, cache) = p.model.rate_loss(&p.y.value)?;
                    let dy = p.model.rate_loss_backward(&cache, 1.0)?;
                    p.y.accumulate(&dy)?;
                    Ok(0.0)
                },
                &GradCheckOpts::default(),
            )
            .unwrap();
            assert!(report.passes(1e-4), "seed {seed}: {report}");
        }
    }

    #[test]
    fn model_tables_drive_the_coder_round_trip() {
        let model = jolted(21, 3);
        let mut rng = Prng::new(9);
        let y = Tensor::new(
            &[3, 5, 5],
            (0..75)
                .map(|i| {
                    if i % 11 == 0 {
                        rng.range(-80.0, 80.0)
                    } else {
                        rng.range(-8.0, 8.0)
                    }
                })
                .collect(),
        )
        .unwrap();
        let (q, _) = quantize(&y);
        let tables: Vec<CumTable> = (0..3)
            .map(|c| CumTable::new(&apportion(&model.pmf(c).unwrap(), 65536).unwrap()).unwrap())
            .collect();
        let spatial = 25;
        let mut enc = RangeEncoder::new();
        for c in 0..3 {
            for e in 0..spatial {
                let s = crate::coding::symbol_of(q.data()[c * spatial + e]);
                let (cum, freq) = tables[c].entry(s);
                enc.encode(cum, freq, tables[c].total());
            }
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        let mut out = vec![0.0; 75];
        for c in 0..3 {
            for e in 0..spatial {
                let t = dec.target(tables[c].total()).unwrap();
                let s = tables[c].find(t);
                let (cum, freq) = tables[c].entry(s);
                dec.decode(cum, freq, tables[c].total()).unwrap();
                out[c * spatial + e] = crate::coding::value_of(s);
            }
        }
        assert_eq!(out, q.data());
        // The real byte count should be in the same ballpark as the model's
        // ideal bits.
        let ideal = model.bits(&q).unwrap();
        assert!((bytes.len() as f64) * 8.0 <= ideal + 96.0);
    }
}
