//! Synthetic hyperspectral cubes.
//!
//! Real hyperspectral scenes are approximately linear mixtures: each pixel's
//! spectrum is a nonnegative combination of a few material signatures, and
//! neighboring pixels share materials. The generator reproduces exactly that
//! structure. Four endmember spectra sit at distinct brightness levels and
//! deviate from them along natural cubic splines through random knots, so
//! they vary smoothly along the band axis; their per-pixel weights come from
//! Gaussian-blurred noise normalized to a convex combination. The result has
//! the strong adjacent-band correlation that makes spectral compression
//! worthwhile, which [`adjacent_band_correlation`] measures and a
//! regression test pins.
//!
//! Cubes are rescaled to span `[0, 1]` and then snapped to the f32 grid, so
//! that writing them through the cube file format and reading them back is
//! an exact identity.

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Number of material spectra mixed into every cube.
pub const ENDMEMBERS: usize = 4;
/// Control points per endmember spectrum.
const SPLINE_KNOTS: usize = 5;
/// Amplitude of the spline deviation around each spectrum's base level.
/// Small against the level spread, so that adjacent bands stay strongly
/// correlated the way real sensor data is.
const WIGGLE: f64 = 0.08;

/// Index lists of a train/validation/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// A generated dataset: cubes plus the split over their indices.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    /// Cubes shaped `[bands, height, width]`, values in `[0, 1]`.
    pub cubes: Vec<Tensor>,
    pub split: SplitIndices,
}

/// Second derivatives of the natural cubic spline through equally spaced
/// knots, by the standard tridiagonal solve.
fn spline_moments(y: &[f64]) -> Vec<f64> {
    let k = y.len();
    let mut m = vec![0.0; k];
    if k < 3 {
        return m;
    }
    let h = 1.0 / (k - 1) as f64;
    // Thomas algorithm on the interior equations; the natural boundary
    // keeps the first and last moments at zero.
    let n = k - 2;
    let mut diag = vec![2.0 * h / 3.0; n];
    let mut rhs: Vec<f64> = (1..=n)
        .map(|j| (y[j + 1] - 2.0 * y[j] + y[j - 1]) / h)
        .collect();
    let off = h / 6.0;
    for j in 1..n {
        let w = off / diag[j - 1];
        diag[j] -= w * off;
        rhs[j] -= w * rhs[j - 1];
    }
    m[n] = rhs[n - 1] / diag[n - 1];
    for j in (1..n).rev() {
        m[j] = (rhs[j - 1] - off * m[j + 1]) / diag[j - 1];
    }
    m
}

/// Evaluates the natural cubic spline through `y` (knots equally spaced on
/// `[0, 1]`) at `u` in `[0, 1]`.
fn spline_eval(y: &[f64], m: &[f64], u: f64) -> f64 {
    let k = y.len();
    if k == 1 {
        return y[0];
    }
    let segments = (k - 1) as f64;
    let j = ((u * segments) as usize).min(k - 2);
    let t = u * segments - j as f64;
    let h = 1.0 / segments;
    let a = 1.0 - t;
    y[j] * a
        + y[j + 1] * t
        + (h * h / 6.0) * ((a * a * a - a) * m[j] + (t * t * t - t) * m[j + 1])
}

/// Same-size separable Gaussian blur with replicated edges.
fn blur(field: &mut [f64], h: usize, w: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps = Vec::with_capacity(2 * radius as usize + 1);
    for d in -radius..=radius {
        taps.push((-((d * d) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= norm;
    }
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, tap) in taps.iter().enumerate() {
                let cc = (c as isize + i as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += tap * field[r * w + cc];
            }
            tmp[r * w + c] = acc;
        }
    }
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, tap) in taps.iter().enumerate() {
                let rr = (r as isize + i as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += tap * tmp[rr * w + c];
            }
            field[r * w + c] = acc;
        }
    }
}

fn one_cube(rng: &mut Prng, bands: usize, height: usize, width: usize) -> Result<Tensor> {
    // Material spectra: distinct base levels (a brightness ladder with
    // jitter) plus smooth random band-axis deviations.
    let mut spectra = Vec::with_capacity(ENDMEMBERS);
    for s in 0..ENDMEMBERS {
        let level = 0.2 + 0.6 * s as f64 / (ENDMEMBERS - 1) as f64 + rng.range(-0.05, 0.05);
        let knots: Vec<f64> = (0..SPLINE_KNOTS)
            .map(|_| level + rng.range(-WIGGLE, WIGGLE))
            .collect();
        let moments = spline_moments(&knots);
        let curve: Vec<f64> = (0..bands)
            .map(|b| {
                let u = if bands == 1 {
                    0.0
                } else {
                    b as f64 / (bands - 1) as f64
                };
                spline_eval(&knots, &moments, u)
            })
            .collect();
        spectra.push(curve);
    }

    // Abundance maps: blurred noise, shifted nonnegative, then normalized
    // into a convex combination at every pixel.
    let spatial = height * width;
    let sigma = ((height.min(width)) as f64 / 8.0).clamp(1.0, 4.0);
    let mut maps = Vec::with_capacity(ENDMEMBERS);
    for _ in 0..ENDMEMBERS {
        let mut field: Vec<f64> = (0..spatial).map(|_| rng.normal()).collect();
        blur(&mut field, height, width, sigma);
        let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
        for v in &mut field {
            *v -= lo;
        }
        maps.push(field);
    }
    for p in 0..spatial {
        let total: f64 = maps.iter().map(|m| m[p]).sum::<f64>() + 1e-9;
        for m in &mut maps {
            m[p] /= total;
        }
    }

    let mut data = vec![0.0; bands * spatial];
    for b in 0..bands {
        for p in 0..spatial {
            let mut acc = 0.0;
            for s in 0..ENDMEMBERS {
                acc += spectra[s][b] * maps[s][p];
            }
            data[b * spatial + p] = acc;
        }
    }

    // Stretch to the full normalized range, then snap to the f32 grid the
    // cube file format stores.
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    for v in &mut data {
        *v = if range > 1e-12 { (*v - lo) / range } else { 0.5 };
        *v = *v as f32 as f64;
    }
    Tensor::new(&[bands, height, width], data)
}

/// Generates `n` cubes plus an 80/10/10 split, deterministically per seed.
///
/// The split sizes are `floor(0.8 n)` train and `floor(0.1 n)` validation,
/// with the remainder as test. Cubes are independent and identically
/// distributed by construction, so consecutive index ranges are an unbiased
/// split and easy to audit.
pub fn synth_dataset(
    n: usize,
    bands: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<SynthDataset> {
    if n < 10 {
        return Err(Error::usage(format!(
            "dataset size {n} cannot be split 80/10/10; need at least 10"
        )));
    }
    if bands == 0 || height == 0 || width == 0 {
        return Err(Error::config("cube dimensions must be positive"));
    }
    let master = Prng::new(seed);
    let mut cubes = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = master.fork(i as u64);
        cubes.push(one_cube(&mut rng, bands, height, width)?);
    }
    let train_n = n * 8 / 10;
    let val_n = n / 10;
    Ok(SynthDataset {
        cubes,
        split: SplitIndices {
            train: (0..train_n).collect(),
            val: (train_n..train_n + val_n).collect(),
            test: (train_n + val_n..n).collect(),
        },
    })
}

/// Mean Pearson correlation between each pair of adjacent bands, taken over
/// pixels. Needs at least two bands.
pub fn adjacent_band_correlation(cube: &Tensor) -> Result<f64> {
    if cube.ndim() != 3 || cube.shape()[0] < 2 {
        return Err(Error::config(format!(
            "band correlation needs a [bands >= 2, height, width] cube, got {:?}",
            cube.shape()
        )));
    }
    let bands = cube.shape()[0];
    let spatial = cube.numel() / bands;
    let mut total = 0.0;
    for b in 0..bands - 1 {
        let x = &cube.data()[b * spatial..(b + 1) * spatial];
        let y = &cube.data()[(b + 1) * spatial..(b + 2) * spatial];
        let mx = x.iter().sum::<f64>() / spatial as f64;
        let my = y.iter().sum::<f64>() / spatial as f64;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for p in 0..spatial {
            let dx = x[p] - mx;
            let dy = y[p] - my;
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
        let denom = (sxx * syy).sqrt();
        // A perfectly flat band carries no spatial signal to correlate;
        // count it as zero rather than dividing by it.
        total += if denom > 1e-15 { sxy / denom } else { 0.0 };
    }
    Ok(total / (bands - 1) as f64)
}
