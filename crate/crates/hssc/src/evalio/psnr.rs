//! Peak signal-to-noise ratio for normalized cubes.
//!
//! The mean squared error runs jointly over every band rather than averaging
//! per-band ratios, and the peak is fixed at 1.0 to match the `[0, 1]`
//! normalization contract. Identical inputs have no finite ratio, so the
//! reported value is capped and the result carries an exactness flag.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported ceiling in decibels; scores above it are clipped to it.
pub const PSNR_CAP_DB: f64 = 99.0;

/// A PSNR measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr {
    /// Ratio in decibels, at most [`PSNR_CAP_DB`].
    pub db: f64,
    /// True when the inputs were bitwise equal (zero squared error), in
    /// which case `db` holds the cap rather than a measurement.
    pub exact: bool,
}

/// Peak signal-to-noise ratio of `recon` against the reference `x`.
pub fn psnr(x: &Tensor, recon: &Tensor) -> Result<Psnr> {
    if x.shape() != recon.shape() {
        return Err(Error::ShapeMismatch {
            op: "psnr",
            left: x.shape().to_vec(),
            right: recon.shape().to_vec(),
        });
    }
    let mut sq = 0.0;
    for (a, b) in x.data().iter().zip(recon.data()) {
        let d = a - b;
        sq += d * d;
    }
    if !sq.is_finite() {
        return Err(Error::non_finite("psnr input"));
    }
    let mse = sq / x.numel() as f64;
    if mse == 0.0 {
        return Ok(Psnr {
            db: PSNR_CAP_DB,
            exact: true,
        });
    }
    Ok(Psnr {
        db: (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB),
        exact: false,
    })
}
