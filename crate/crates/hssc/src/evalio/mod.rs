//! Quality metrics and data plumbing.
//!
//! Everything here treats a hyperspectral cube as a `[bands, height, width]`
//! tensor with values normalized to `[0, 1]`: the metrics ([`psnr`],
//! [`ssim`]), the rate normalization and rate-distortion tables, the
//! synthetic dataset generator that stands in for proprietary sensor data,
//! and the flat cube file format the command line speaks.

pub mod psnr;
pub mod raw;
pub mod rd;
pub mod ssim;
pub mod synth;

pub use psnr::{psnr, Psnr, PSNR_CAP_DB};
pub use raw::{cube_from_bytes, cube_to_bytes, read_cube, write_cube, LoadedCube, RangePolicy};
pub use rd::{bpp, BppMode, RdDip, RdPoint, RdTable, RD_CSV_HEADER};
pub use ssim::{ssim, ssim_backward, ssim_forward, SsimCache};
pub use synth::{adjacent_band_correlation, synth_dataset, SplitIndices, SynthDataset};
