//! Model configuration: architecture variant, channel widths and the
//! canonical digest that ties checkpoints and bitstreams to one model.
//!
//! A [`ModelConfig`] fully determines every network in the codec, including
//! weight initialization. Two processes that build from equal configs get
//! bit-identical models, which is what lets a decoder rebuild the encoder's
//! entropy tables from the config digest alone.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Base channel ladder of the encoder's convolution stages, scaled by
/// [`ModelConfig::width_scale`] at build time. The generator mirrors it.
pub const ENC_BASE: [usize; 5] = [60, 120, 240, 480, 960];

/// Base channel count of the latent bottleneck.
pub const LATENT_BASE: usize = 220;

/// Base width of the discriminator's latent feature extractor.
pub const DISC_Y_BASE: usize = 12;

/// Base channel ladder of the discriminator's image branch.
pub const DISC_BASE: [usize; 4] = [64, 128, 256, 512];

/// Total spatial downsampling factor from image to latent grid. Inputs to
/// the encoder must be multiples of this in both spatial axes; the codec
/// pads to the next multiple before encoding.
pub const SPATIAL_FACTOR: usize = 16;

/// Which architecture family to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Plain 2D backbone; spectral bands enter as input channels.
    Opt,
    /// 2D backbone with squeeze-excitation blocks spliced in.
    Se,
    /// Backbone with 3D spatio-spectral convolutions.
    ThreeD,
}

/// Where squeeze-excitation blocks are inserted (consulted only by
/// [`Variant::Se`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SePlacement {
    /// One block on the raw input cube.
    EncoderInitial,
    /// The input block plus one after each encoder downsampling stage.
    EncoderAll,
    /// All encoder blocks plus one after each generator upsampling stage.
    EncoderAndGenerator,
}

/// Which convolutions become 3D (consulted only by [`Variant::ThreeD`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conv3dPlacement {
    /// Only the encoder's first and the generator's last convolution run on
    /// the spectral volume; everything between works on flattened channels.
    FirstAndLast,
    /// Every encoder and generator stage convolves the spectral volume; the
    /// flattening to 2D happens only around the latent bottleneck.
    All,
}

/// Complete description of one codec model.
///
/// All fields are public; construct with [`ModelConfig::new`] and adjust,
/// then call [`ModelConfig::validate`] before building networks. Fields that
/// the chosen variant does not consult (placements, the reduction ratio) are
/// ignored at build time and normalized away in the canonical digest.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Spectral band count of the cubes this model compresses.
    pub bands: usize,
    /// Uniform multiplier on every base channel width, in (0, 1].
    pub width_scale: f64,
    /// Explicit latent channel count; `None` scales [`LATENT_BASE`].
    pub latent_override: Option<usize>,
    pub se_placement: SePlacement,
    pub conv3d_placement: Conv3dPlacement,
    /// Squeeze-excitation bottleneck divisor r; hidden width is C/r.
    pub se_reduction: usize,
    /// Compress each band as an independent single-channel image. The
    /// networks are built for one input band and the codec loops.
    pub band_by_band: bool,
    /// Add the conditional hyper-prior over the latent scale structure.
    pub hyperprior: bool,
    /// Master seed for weight initialization.
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(variant: Variant, bands: usize) -> ModelConfig {
        ModelConfig {
            variant,
            bands,
            width_scale: 1.0,
            latent_override: None,
            se_placement: SePlacement::EncoderAndGenerator,
            conv3d_placement: Conv3dPlacement::FirstAndLast,
            se_reduction: 2,
            band_by_band: false,
            hyperprior: false,
            seed: 0,
        }
    }

    /// The width-scaled preset used throughout the test suites: one eighth
    /// of the published channel widths, which keeps every network small
    /// enough to train on a single core.
    pub fn desk(variant: Variant, bands: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(variant, bands);
        cfg.width_scale = 0.125;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 {
            return Err(Error::config("bands must be at least 1"));
        }
        if !self.width_scale.is_finite() || self.width_scale <= 0.0 || self.width_scale > 1.0 {
            return Err(Error::config(format!(
                "width_scale {} outside (0, 1]",
                self.width_scale
            )));
        }
        if self.se_reduction == 0 {
            return Err(Error::config("se_reduction must be at least 1"));
        }
        if self.latent_override == Some(0) {
            return Err(Error::config("latent_channels must be at least 1"));
        }
        Ok(())
    }

    /// Applies the width multiplier to a base channel count. Rounds half
    /// away from zero and never returns less than one channel.
    pub fn scaled(&self, base: usize) -> usize {
        ((base as f64) * self.width_scale).round().max(1.0) as usize
    }

    /// Channel count of the latent bottleneck after resolving the override.
    pub fn latent_channels(&self) -> usize {
        self.latent_override.unwrap_or_else(|| self.scaled(LATENT_BASE))
    }

    /// Spectral bands the encoder actually sees per forward pass.
    pub fn input_bands(&self) -> usize {
        if self.band_by_band {
            1
        } else {
            self.bands
        }
    }

    /// Canonical fixed-width serialization of the resolved configuration.
    ///
    /// Fields the variant does not consult are written as their defaults and
    /// the latent override is resolved, so two configs that build identical
    /// models serialize identically. Layout, all little-endian: variant u8,
    /// bands u32, width_scale f64 bits, latent channels u32, se placement
    /// u8, conv3d placement u8, se reduction u32, band_by_band u8,
    /// hyperprior u8, seed u64.
    pub fn to_blob(&self) -> [u8; 33] {
        let (se_placement, se_reduction) = match self.variant {
            Variant::Se => (self.se_placement, self.se_reduction),
            _ => (SePlacement::EncoderAndGenerator, 2),
        };
        let conv3d = match self.variant {
            Variant::ThreeD => self.conv3d_placement,
            _ => Conv3dPlacement::FirstAndLast,
        };
        let mut blob = [0u8; 33];
        blob[0] = self.variant.tag();
        blob[1..5].copy_from_slice(&(self.bands as u32).to_le_bytes());
        blob[5..13].copy_from_slice(&self.width_scale.to_bits().to_le_bytes());
        blob[13..17].copy_from_slice(&(self.latent_channels() as u32).to_le_bytes());
        blob[17] = se_placement.tag();
        blob[18] = conv3d.tag();
        blob[19..23].copy_from_slice(&(se_reduction as u32).to_le_bytes());
        blob[23] = self.band_by_band as u8;
        blob[24] = self.hyperprior as u8;
        blob[25..33].copy_from_slice(&self.seed.to_le_bytes());
        blob
    }

    /// Parses a canonical blob back into a validated config.
    pub fn from_blob(blob: &[u8]) -> Result<ModelConfig> {
        if blob.len() != 33 {
            return Err(Error::format(format!(
                "config blob is {} bytes, expected 33",
                blob.len()
            )));
        }
        let le32 = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("slice length checked"));
        let cfg = ModelConfig {
            variant: Variant::from_tag(blob[0])?,
            bands: le32(&blob[1..5]) as usize,
            width_scale: f64::from_bits(u64::from_le_bytes(
                blob[5..13].try_into().expect("slice length checked"),
            )),
            latent_override: Some(le32(&blob[13..17]) as usize),
            se_placement: SePlacement::from_tag(blob[17])?,
            conv3d_placement: Conv3dPlacement::from_tag(blob[18])?,
            se_reduction: le32(&blob[19..23]) as usize,
            band_by_band: blob[23] != 0,
            hyperprior: blob[24] != 0,
            seed: u64::from_le_bytes(blob[25..33].try_into().expect("slice length checked")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical blob. Checkpoints and bitstreams both embed
    /// this digest; the codec refuses to decode a bitstream whose digest does
    /// not match the model it was given.
    pub fn digest(&self) -> [u8; 32] {
        let out = Sha256::digest(self.to_blob());
        out.into()
    }

    pub fn digest_hex(&self) -> String {
        self.digest().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Variant {
    fn tag(self) -> u8 {
        match self {
            Variant::Opt => 0,
            Variant::Se => 1,
            Variant::ThreeD => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Variant> {
        match tag {
            0 => Ok(Variant::Opt),
            1 => Ok(Variant::Se),
            2 => Ok(Variant::ThreeD),
            _ => Err(Error::format(format!("unknown variant tag {tag}"))),
        }
    }
}

impl SePlacement {
    fn tag(self) -> u8 {
        match self {
            SePlacement::EncoderInitial => 0,
            SePlacement::EncoderAll => 1,
            SePlacement::EncoderAndGenerator => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<SePlacement> {
        match tag {
            0 => Ok(SePlacement::EncoderInitial),
            1 => Ok(SePlacement::EncoderAll),
            2 => Ok(SePlacement::EncoderAndGenerator),
            _ => Err(Error::format(format!("unknown se placement tag {tag}"))),
        }
    }
}

impl Conv3dPlacement {
    fn tag(self) -> u8 {
        match self {
            Conv3dPlacement::FirstAndLast => 0,
            Conv3dPlacement::All => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Conv3dPlacement> {
        match tag {
            0 => Ok(Conv3dPlacement::FirstAndLast),
            1 => Ok(Conv3dPlacement::All),
            _ => Err(Error::format(format!("unknown conv3d placement tag {tag}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Opt => "opt",
            Variant::Se => "se",
            Variant::ThreeD => "3d",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "opt" => Ok(Variant::Opt),
            "se" => Ok(Variant::Se),
            "3d" => Ok(Variant::ThreeD),
            _ => Err(Error::usage(format!(
                "unknown variant '{s}': expected opt, se or 3d"
            ))),
        }
    }
}

impl fmt::Display for SePlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SePlacement::EncoderInitial => "encoder_initial",
            SePlacement::EncoderAll => "encoder_all",
            SePlacement::EncoderAndGenerator => "encoder_and_generator",
        })
    }
}

impl FromStr for SePlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<SePlacement> {
        match s {
            "encoder_initial" => Ok(SePlacement::EncoderInitial),
            "encoder_all" => Ok(SePlacement::EncoderAll),
            "encoder_and_generator" => Ok(SePlacement::EncoderAndGenerator),
            _ => Err(Error::usage(format!(
                "unknown se placement '{s}': expected encoder_initial, \
                 encoder_all or encoder_and_generator"
            ))),
        }
    }
}

impl fmt::Display for Conv3dPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Conv3dPlacement::FirstAndLast => "first_and_last",
            Conv3dPlacement::All => "all",
        })
    }
}

impl FromStr for Conv3dPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Conv3dPlacement> {
        match s {
            "first_and_last" => Ok(Conv3dPlacement::FirstAndLast),
            "all" => Ok(Conv3dPlacement::All),
            _ => Err(Error::usage(format!(
                "unknown conv3d placement '{s}': expected first_and_last or all"
            ))),
        }
    }
}
