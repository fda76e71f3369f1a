//! Structural similarity between hyperspectral cubes.
//!
//! Single-scale SSIM with the reference parameters: an 11x11 Gaussian window
//! with sigma 1.5, K1 = 0.01, K2 = 0.03, and dynamic range 1.0 to match the
//! `[0, 1]` normalization contract. Local statistics use valid windows only,
//! so an image must be at least 11 pixels on each side. The score is computed
//! per band and averaged.
//!
//! Besides the plain metric this module provides the derivative of the score
//! with respect to the second argument, which the training objective needs
//! for its `1 - SSIM` distortion term. The backward pass reuses the filtered
//! statistic maps cached by [`ssim_forward`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side length of the Gaussian window.
pub const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
/// (K1 * L)^2 with K1 = 0.01, L = 1.
const C1: f64 = 1.0e-4;
/// (K2 * L)^2 with K2 = 0.03, L = 1.
const C2: f64 = 9.0e-4;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, tap) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *tap = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    for tap in &mut k {
        *tap /= sum;
    }
    k
}

/// Correlates an `h` x `w` image with the separable window, keeping only
/// positions where the window fits. Output is `(h-10)` x `(w-10)`.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    let mut rows = vec![0.0; h * vw];
    for r in 0..h {
        for c in 0..vw {
            let mut acc = 0.0;
            for (i, tap) in k.iter().enumerate() {
                acc += tap * src[r * w + c + i];
            }
            rows[r * vw + c] = acc;
        }
    }
    let mut out = vec![0.0; vh * vw];
    for r in 0..vh {
        for c in 0..vw {
            let mut acc = 0.0;
            for (i, tap) in k.iter().enumerate() {
                acc += tap * rows[(r + i) * vw + c];
            }
            out[r * vw + c] = acc;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters window-position gradients back to
/// pixel space.
fn filter_valid_transpose(g: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    let mut rows = vec![0.0; h * vw];
    for r in 0..vh {
        for c in 0..vw {
            let v = g[r * vw + c];
            for (i, tap) in k.iter().enumerate() {
                rows[(r + i) * vw + c] += tap * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..vw {
            let v = rows[r * vw + c];
            for (i, tap) in k.iter().enumerate() {
                out[r * w + c + i] += tap * v;
            }
        }
    }
    out
}

/// Filtered local statistics kept from the forward pass, flattened over
/// bands then window positions.
#[derive(Debug, Clone)]
pub struct SsimCache {
    bands: usize,
    h: usize,
    w: usize,
    x: Tensor,
    y: Tensor,
    mu1: Vec<f64>,
    mu2: Vec<f64>,
    f11: Vec<f64>,
    f22: Vec<f64>,
    f12: Vec<f64>,
}

fn check_pair(x: &Tensor, y: &Tensor) -> Result<(usize, usize, usize)> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "ssim",
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    if x.ndim() != 3 {
        return Err(Error::config(format!(
            "ssim expects a [bands, height, width] cube, got {:?}",
            x.shape()
        )));
    }
    let (bands, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if h < WINDOW || w < WINDOW {
        return Err(Error::config(format!(
            "image {h}x{w} is smaller than the {WINDOW}x{WINDOW} ssim window"
        )));
    }
    Ok((bands, h, w))
}

/// Per-window similarity from the five filtered statistics.
fn window_score(mu1: f64, mu2: f64, f11: f64, f22: f64, f12: f64) -> f64 {
    let s11 = f11 - mu1 * mu1;
    let s22 = f22 - mu2 * mu2;
    let s12 = f12 - mu1 * mu2;
    let a1 = 2.0 * mu1 * mu2 + C1;
    let a2 = 2.0 * s12 + C2;
    let b1 = mu1 * mu1 + mu2 * mu2 + C1;
    let b2 = s11 + s22 + C2;
    (a1 * a2) / (b1 * b2)
}

/// Mean SSIM of two cubes plus the statistics needed for the backward pass.
pub fn ssim_forward(x: &Tensor, y: &Tensor) -> Result<(f64, SsimCache)> {
    let (bands, h, w) = check_pair(x, y)?;
    let k = kernel();
    let plane = h * w;
    let vcount = (h - WINDOW + 1) * (w - WINDOW + 1);
    let mut cache = SsimCache {
        bands,
        h,
        w,
        x: x.clone(),
        y: y.clone(),
        mu1: Vec::with_capacity(bands * vcount),
        mu2: Vec::with_capacity(bands * vcount),
        f11: Vec::with_capacity(bands * vcount),
        f22: Vec::with_capacity(bands * vcount),
        f12: Vec::with_capacity(bands * vcount),
    };
    let mut total = 0.0;
    for b in 0..bands {
        let xb = &x.data()[b * plane..(b + 1) * plane];
        let yb = &y.data()[b * plane..(b + 1) * plane];
        let xx: Vec<f64> = xb.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = yb.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xb.iter().zip(yb).map(|(a, b)| a * b).collect();
        let mu1 = filter_valid(xb, h, w, &k);
        let mu2 = filter_valid(yb, h, w, &k);
        let f11 = filter_valid(&xx, h, w, &k);
        let f22 = filter_valid(&yy, h, w, &k);
        let f12 = filter_valid(&xy, h, w, &k);
        for p in 0..vcount {
            total += window_score(mu1[p], mu2[p], f11[p], f22[p], f12[p]);
        }
        cache.mu1.extend(mu1);
        cache.mu2.extend(mu2);
        cache.f11.extend(f11);
        cache.f22.extend(f22);
        cache.f12.extend(f12);
    }
    Ok((total / (bands * vcount) as f64, cache))
}

/// Mean SSIM of two cubes.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    Ok(ssim_forward(x, y)?.0)
}

/// Gradient of `d_value * ssim(x, y)` with respect to `y`; `x` is treated as
/// the fixed reference.
pub fn ssim_backward(cache: &SsimCache, d_value: f64) -> Tensor {
    let k = kernel();
    let (h, w) = (cache.h, cache.w);
    let plane = h * w;
    let vcount = (h - WINDOW + 1) * (w - WINDOW + 1);
    let scale = d_value / (cache.bands * vcount) as f64;
    let mut dy = Tensor::zeros(cache.y.shape()).expect("cached shape is valid");
    for b in 0..cache.bands {
        let base = b * vcount;
        let mut d_mu2 = vec![0.0; vcount];
        let mut d_f22 = vec![0.0; vcount];
        let mut d_f12 = vec![0.0; vcount];
        for p in 0..vcount {
            let mu1 = cache.mu1[base + p];
            let mu2 = cache.mu2[base + p];
            let s11 = cache.f11[base + p] - mu1 * mu1;
            let s22 = cache.f22[base + p] - mu2 * mu2;
            let s12 = cache.f12[base + p] - mu1 * mu2;
            let a1 = 2.0 * mu1 * mu2 + C1;
            let a2 = 2.0 * s12 + C2;
            let b1 = mu1 * mu1 + mu2 * mu2 + C1;
            let b2 = s11 + s22 + C2;
            let s = (a1 * a2) / (b1 * b2);
            // Window statistics feed the score as S = A1 A2 / (B1 B2) with
            // sigma22 = f22 - mu2^2 and sigma12 = f12 - mu1 mu2.
            let d_s12 = scale * 2.0 * a1 / (b1 * b2);
            let d_s22 = scale * (-s / b2);
            let d_mu2_direct = scale * (2.0 * mu1 * a2 / (b1 * b2) - s * 2.0 * mu2 / b1);
            d_f12[p] = d_s12;
            d_f22[p] = d_s22;
            d_mu2[p] = d_mu2_direct - mu1 * d_s12 - 2.0 * mu2 * d_s22;
        }
        let g_mu2 = filter_valid_transpose(&d_mu2, h, w, &k);
        let g_f22 = filter_valid_transpose(&d_f22, h, w, &k);
        let g_f12 = filter_valid_transpose(&d_f12, h, w, &k);
        let xb = &cache.x.data()[b * plane..(b + 1) * plane];
        let yb = &cache.y.data()[b * plane..(b + 1) * plane];
        let out = &mut dy.data_mut()[b * plane..(b + 1) * plane];
        for p in 0..plane {
            out[p] = g_mu2[p] + 2.0 * yb[p] * g_f22[p] + xb[p] * g_f12[p];
        }
    }
    dy
}
