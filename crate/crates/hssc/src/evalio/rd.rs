//! Rate normalization and rate-distortion tables.
//!
//! A coded cube's size in bits becomes a rate via [`bpp`]; measured quality
//! points collect into an [`RdTable`] that renders the CSV consumed by
//! plotting tools and reports segments where spending more bits lost
//! fidelity. Hyperspectral work is ambiguous about whether "per pixel"
//! counts the band axis, so both normalizations are available and the
//! per-band-pixel one is the default everywhere in this crate.

use crate::error::{Error, Result};
use std::fmt::Write as _;

/// How a bit count is normalized into a rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BppMode {
    /// Bits divided by bands x height x width.
    #[default]
    PerBandPixel,
    /// Bits divided by height x width only.
    PerPixel,
}

/// Bits per pixel of a coded cube with dimensions `[bands, height, width]`.
///
/// `bits` must count the whole artifact, header included, so that the
/// reported rate matches what actually lands on disk.
pub fn bpp(bits: u64, dims: [usize; 3], mode: BppMode) -> Result<f64> {
    let [b, h, w] = dims;
    if b == 0 || h == 0 || w == 0 {
        return Err(Error::config(format!("empty cube dimensions {dims:?}")));
    }
    let denom = match mode {
        BppMode::PerBandPixel => b * h * w,
        BppMode::PerPixel => h * w,
    };
    Ok(bits as f64 / denom as f64)
}

/// One measured point of a rate-distortion curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    /// Model variant tag, e.g. "se" or "3d".
    pub variant: String,
    /// Rate target the model was trained for.
    pub r_t: f64,
    pub bpp: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// A validated collection of [`RdPoint`]s, ordered by rate.
#[derive(Debug, Clone)]
pub struct RdTable {
    rows: Vec<RdPoint>,
}

/// A segment of one variant's curve where the higher-rate end scored a
/// strictly lower PSNR, listed lower-rate end first.
#[derive(Debug, Clone, PartialEq)]
pub struct RdDip {
    pub variant: String,
    pub from_rt: f64,
    pub to_rt: f64,
}

pub const RD_CSV_HEADER: &str = "variant,r_t,bpp,psnr_db,ssim";

impl RdTable {
    /// Validates and sorts measurement points into a table.
    ///
    /// Each (variant, rate-target) pair may appear once. Rows are ordered by
    /// rate, with ties broken by variant and target so the rendering is
    /// deterministic.
    pub fn new(points: Vec<RdPoint>) -> Result<RdTable> {
        for p in &points {
            if !(p.bpp.is_finite() && p.psnr_db.is_finite() && p.ssim.is_finite() && p.r_t.is_finite())
            {
                return Err(Error::non_finite(format!(
                    "rate-distortion point ({}, r_t {})",
                    p.variant, p.r_t
                )));
            }
            if p.bpp < 0.0 {
                return Err(Error::config(format!("negative rate {} bpp", p.bpp)));
            }
            if !(-1.0..=1.0).contains(&p.ssim) {
                return Err(Error::config(format!("ssim {} outside [-1, 1]", p.ssim)));
            }
        }
        for (i, a) in points.iter().enumerate() {
            for b in &points[i + 1..] {
                if a.variant == b.variant && a.r_t == b.r_t {
                    return Err(Error::usage(format!(
                        "duplicate rate target {} for variant {}",
                        a.r_t, a.variant
                    )));
                }
            }
        }
        let mut rows = points;
        rows.sort_by(|a, b| {
            a.bpp
                .total_cmp(&b.bpp)
                .then_with(|| a.variant.cmp(&b.variant))
                .then_with(|| a.r_t.total_cmp(&b.r_t))
        });
        Ok(RdTable { rows })
    }

    pub fn rows(&self) -> &[RdPoint] {
        &self.rows
    }

    /// Renders the table as CSV with the fixed header.
    pub fn csv(&self) -> String {
        let mut out = String::from(RD_CSV_HEADER);
        out.push('\n');
        for p in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                p.variant, p.r_t, p.bpp, p.psnr_db, p.ssim
            );
        }
        out
    }

    /// Segments where a variant's own curve bends the wrong way: consecutive
    /// points of that variant (in rate order) whose PSNR decreased.
    pub fn non_monotone(&self) -> Vec<RdDip> {
        let mut variants: Vec<&str> = self.rows.iter().map(|p| p.variant.as_str()).collect();
        variants.sort_unstable();
        variants.dedup();
        let mut dips = Vec::new();
        for v in variants {
            let curve: Vec<&RdPoint> = self.rows.iter().filter(|p| p.variant == v).collect();
            for pair in curve.windows(2) {
                if pair[1].psnr_db < pair[0].psnr_db {
                    dips.push(RdDip {
                        variant: v.to_string(),
                        from_rt: pair[0].r_t,
                        to_rt: pair[1].r_t,
                    });
                }
            }
        }
        dips
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(variant: &str, r_t: f64, bpp: f64, psnr_db: f64) -> RdPoint {
        RdPoint {
            variant: variant.to_string(),
            r_t,
            bpp,
            psnr_db,
            ssim: 0.9,
        }
    }

    #[test]
    fn normalizations_match_hand_arithmetic() {
        assert_eq!(bpp(6912, [32, 96, 96], BppMode::PerBandPixel).unwrap(), 0.0234375);
        assert_eq!(
            bpp(6912, [32, 96, 96], BppMode::PerPixel).unwrap(),
            0.0234375 * 32.0
        );
        // A header-only artifact still has a rate.
        assert_eq!(bpp(120, [2, 10, 10], BppMode::PerBandPixel).unwrap(), 0.6);
        assert!(bpp(1, [0, 4, 4], BppMode::PerPixel).is_err());
    }

    #[test]
    fn rows_come_back_sorted_by_rate() {
        let t = RdTable::new(vec![
            point("se", 0.6, 0.61, 30.0),
            point("opt", 0.2, 0.18, 27.0),
            point("se", 0.2, 0.21, 28.0),
        ])
        .unwrap();
        let rates: Vec<f64> = t.rows().iter().map(|p| p.bpp).collect();
        assert_eq!(rates, vec![0.18, 0.21, 0.61]);
    }

    #[test]
    fn csv_layout_is_exact() {
        let t = RdTable::new(vec![point("3d", 0.4, 0.375, 29.5)]).unwrap();
        assert_eq!(t.csv(), "variant,r_t,bpp,psnr_db,ssim\n3d,0.4,0.375,29.5,0.9\n");
    }

    #[test]
    fn duplicate_targets_within_a_variant_are_rejected() {
        let err = RdTable::new(vec![point("se", 0.2, 0.2, 27.0), point("se", 0.2, 0.25, 28.0)])
            .unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        // The same target across different variants is the normal case.
        assert!(RdTable::new(vec![
            point("se", 0.2, 0.2, 27.0),
            point("3d", 0.2, 0.25, 28.0)
        ])
        .is_ok());
    }

    #[test]
    fn dips_are_reported_per_variant() {
        // The higher-rate end of the "3d" curve loses PSNR; the "se" curve
        // is clean and must not be flagged even though it interleaves.
        let t = RdTable::new(vec![
            point("3d", 1.0, 1.22, 32.24),
            point("3d", 0.8, 1.43, 31.92),
            point("se", 0.2, 1.30, 30.0),
            point("se", 0.4, 1.50, 31.0),
        ])
        .unwrap();
        let dips = t.non_monotone();
        assert_eq!(dips.len(), 1);
        assert_eq!(dips[0].variant, "3d");
        assert_eq!((dips[0].from_rt, dips[0].to_rt), (1.0, 0.8));
    }

    #[test]
    fn invalid_points_are_rejected() {
        let mut bad = point("se", 0.2, -0.1, 27.0);
        assert!(RdTable::new(vec![bad.clone()]).is_err());
        bad.bpp = 0.1;
        bad.ssim = 1.5;
        assert!(RdTable::new(vec![bad.clone()]).is_err());
        bad.ssim = 0.5;
        bad.psnr_db = f64::NAN;
        assert!(RdTable::new(vec![bad]).is_err());
    }
}
