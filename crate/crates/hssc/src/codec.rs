//! The cube-to-bitstream pipeline and the bitstream container.
//!
//! [`compress`] runs a cube through the encoder, rounds the latents, entropy
//! codes them and wraps the payload in a self-describing [`BitstreamFile`].
//! [`decompress`] inverts the container: it recovers the exact symbol grid
//! and reconstructs through the generator. The container embeds the model
//! config digest, so a bitstream is only ever decoded by the model family
//! that wrote it. Recovering the symbols additionally needs bit-identical
//! model parameters on both sides, which the command-line tools guarantee by
//! loading compressor and decompressor from the same checkpoint file.
//!
//! Inputs whose height or width is not a multiple of the downsampling factor
//! are padded by replicating the bottom and right edges; the pad widths ride
//! in the header and the decoder crops them back off.

use crate::coding::{decode_latents, encode_latents, quantize};
use crate::error::{Error, Result};
use crate::networks::{ModelBundle, SPATIAL_FACTOR};
use crate::tensor::Tensor;

/// First eight bytes of every bitstream file.
pub const BITSTREAM_MAGIC: &[u8; 8] = b"HSSC0001";

/// Container layout revision written and accepted by this build.
pub const BITSTREAM_VERSION: u16 = 1;

/// Fixed bytes before the payload: magic, version, digest, dimensions,
/// padding, quantization offset and the payload bit length.
const HEADER_LEN: usize = 68;

/// One compressed cube, exactly as stored on disk.
///
/// `bands`, `height` and `width` describe the original cube before padding;
/// `pad_right` and `pad_bottom` are the replicated pixels added to reach
/// multiples of [`SPATIAL_FACTOR`]. The quantization `offset` is added to
/// every decoded symbol before reconstruction; this build always writes 0,
/// the field exists so a coder that centers latents before rounding can
/// record the shift. `side_info` carries the hyper-prior payload when the
/// model uses one.
#[derive(Debug, Clone, PartialEq)]
pub struct BitstreamFile {
    pub digest: [u8; 32],
    pub bands: u32,
    pub height: u32,
    pub width: u32,
    pub pad_right: u8,
    pub pad_bottom: u8,
    pub offset: f32,
    pub payload: Vec<u8>,
    pub side_info: Option<Vec<u8>>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(format!(
                "bitstream ends inside {what}: {} bytes held, {} needed",
                self.bytes.len(),
                self.pos + n
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("length checked")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("length checked")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("length checked")))
    }
}

impl BitstreamFile {
    /// Serializes the container; the inverse of [`BitstreamFile::from_bytes`].
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() + 1);
        out.extend_from_slice(BITSTREAM_MAGIC);
        out.extend_from_slice(&BITSTREAM_VERSION.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.bands.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.push(self.pad_right);
        out.push(self.pad_bottom);
        out.extend_from_slice(&self.offset.to_le_bytes());
        out.extend_from_slice(&(8 * self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        match &self.side_info {
            None => out.push(0),
            Some(side) => {
                out.push(1);
                out.extend_from_slice(&(side.len() as u64).to_le_bytes());
                out.extend_from_slice(side);
            }
        }
        out
    }

    /// Parses and validates a serialized container, rejecting anything that
    /// does not match the documented layout byte for byte.
    pub fn from_bytes(bytes: &[u8]) -> Result<BitstreamFile> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8, "the magic")?;
        if magic != BITSTREAM_MAGIC {
            return Err(Error::format("not a bitstream file (bad magic)"));
        }
        let version = cur.u16("the version")?;
        if version != BITSTREAM_VERSION {
            return Err(Error::format(format!(
                "unsupported bitstream version {version}, this build reads {BITSTREAM_VERSION}"
            )));
        }
        let digest: [u8; 32] = cur.take(32, "the config digest")?.try_into().expect("length checked");
        let bands = cur.u32("the band count")?;
        let height = cur.u32("the height")?;
        let width = cur.u32("the width")?;
        if bands == 0 || height == 0 || width == 0 {
            return Err(Error::format(format!(
                "cube dimensions {bands}x{height}x{width} must all be nonzero"
            )));
        }
        let pad_right = cur.u8("the right padding")?;
        let pad_bottom = cur.u8("the bottom padding")?;
        let factor = SPATIAL_FACTOR as u64;
        if u64::from(pad_right) >= factor
            || u64::from(pad_bottom) >= factor
            || (u64::from(height) + u64::from(pad_bottom)) % factor != 0
            || (u64::from(width) + u64::from(pad_right)) % factor != 0
        {
            return Err(Error::format(format!(
                "padding {pad_right}+{pad_bottom} does not bring {width}x{height} to multiples of {factor}"
            )));
        }
        let offset = f32::from_le_bytes(cur.take(4, "the offset")?.try_into().expect("length checked"));
        if !offset.is_finite() {
            return Err(Error::format("quantization offset is not finite"));
        }
        let payload_bits = cur.u64("the payload length")?;
        if payload_bits % 8 != 0 {
            return Err(Error::format(format!(
                "payload length {payload_bits} bits is not a whole number of bytes"
            )));
        }
        let payload_len = usize::try_from(payload_bits / 8)
            .map_err(|_| Error::format("payload length does not fit in memory"))?;
        let payload = cur.take(payload_len, "the payload")?.to_vec();
        let side_info = match cur.u8("the side-info flag")? {
            0 => None,
            1 => {
                let len = usize::try_from(cur.u64("the side-info length")?)
                    .map_err(|_| Error::format("side-info length does not fit in memory"))?;
                Some(cur.take(len, "the side info")?.to_vec())
            }
            flag => {
                return Err(Error::format(format!(
                    "side-info flag must be 0 or 1, found {flag}"
                )))
            }
        };
        if cur.pos != bytes.len() {
            return Err(Error::format(format!(
                "{} trailing bytes after the bitstream",
                bytes.len() - cur.pos
            )));
        }
        Ok(BitstreamFile {
            digest,
            bands,
            height,
            width,
            pad_right,
            pad_bottom,
            offset,
            payload,
            side_info,
        })
    }
}

/// What [`compress`] produces: the container plus the coded symbol grid and
/// a count of latents that hit the quantizer's clamp range.
#[derive(Debug, Clone)]
pub struct CompressOutcome {
    pub file: BitstreamFile,
    /// The quantized latents exactly as coded, shaped `[latent, rows, cols]`.
    /// In band-by-band mode the per-band grids are stacked along rows.
    pub symbols: Tensor,
    pub saturated: usize,
}

/// What [`decompress`] produces: the reconstructed cube in `[0, 1]`, cropped
/// to the original size, plus the decoded symbol grid for audits.
#[derive(Debug, Clone)]
pub struct DecompressOutcome {
    pub cube: Tensor,
    pub symbols: Tensor,
}

fn pad_replicate(cube: &Tensor, factor: usize) -> Result<Tensor> {
    let s = cube.shape();
    let (b, h, w) = (s[0], s[1], s[2]);
    let (hp, wp) = (h.div_ceil(factor) * factor, w.div_ceil(factor) * factor);
    if hp == h && wp == w {
        return Ok(cube.clone());
    }
    let mut out = Tensor::zeros(&[b, hp, wp])?;
    for band in 0..b {
        for i in 0..hp {
            let si = i.min(h - 1);
            for j in 0..wp {
                let sj = j.min(w - 1);
                out.data_mut()[(band * hp + i) * wp + j] = cube.data()[(band * h + si) * w + sj];
            }
        }
    }
    Ok(out)
}

fn crop(cube: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let s = cube.shape();
    if s[1] == h && s[2] == w {
        return Ok(cube.clone());
    }
    let mut out = Tensor::zeros(&[s[0], h, w])?;
    for band in 0..s[0] {
        for i in 0..h {
            for j in 0..w {
                out.data_mut()[(band * h + i) * w + j] = cube.data()[(band * s[1] + i) * s[2] + j];
            }
        }
    }
    Ok(out)
}

fn slice_band(cube: &Tensor, band: usize) -> Result<Tensor> {
    let s = cube.shape();
    let n = s[1] * s[2];
    Tensor::new(&[1, s[1], s[2]], cube.data()[band * n..(band + 1) * n].to_vec())
}

/// Copies group `g` of a per-group latent grid into the stacked symbol grid.
fn store_rows(stack: &mut Tensor, grid: &Tensor, g: usize) {
    let (c, lh, lw) = (grid.shape()[0], grid.shape()[1], grid.shape()[2]);
    let rows = stack.shape()[1];
    for ch in 0..c {
        for r in 0..lh {
            let src = (ch * lh + r) * lw;
            let dst = (ch * rows + g * lh + r) * lw;
            stack.data_mut()[dst..dst + lw].copy_from_slice(&grid.data()[src..src + lw]);
        }
    }
}

/// Extracts group `g` from a stacked symbol grid of `groups` groups.
fn slice_rows(stack: &Tensor, groups: usize, g: usize) -> Result<Tensor> {
    let (c, rows, lw) = (stack.shape()[0], stack.shape()[1], stack.shape()[2]);
    let lh = rows / groups;
    let mut out = Tensor::zeros(&[c, lh, lw])?;
    for ch in 0..c {
        for r in 0..lh {
            let src = (ch * rows + g * lh + r) * lw;
            let dst = (ch * lh + r) * lw;
            out.data_mut()[dst..dst + lw].copy_from_slice(&stack.data()[src..src + lw]);
        }
    }
    Ok(out)
}

fn header_dim(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::format(format!("{what} {n} exceeds the header field")))
}

/// Compresses a normalized cube with the bundle's networks.
///
/// A pure function of the parameters and the input: compressing the same
/// cube with the same model always yields byte-identical containers, no
/// matter what ran in between.
pub fn compress(bundle: &ModelBundle, cube: &Tensor) -> Result<CompressOutcome> {
    let s = cube.shape().to_vec();
    if cube.ndim() != 3 || s[0] != bundle.config.bands {
        return Err(Error::ShapeMismatch {
            op: "compress input",
            left: vec![bundle.config.bands],
            right: s,
        });
    }
    for &v in cube.data() {
        if !v.is_finite() {
            return Err(Error::non_finite("compress input"));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::codec(format!(
                "input value {v} outside [0, 1]; normalize the cube first"
            )));
        }
    }

    let padded = pad_replicate(cube, SPATIAL_FACTOR)?;
    let (hp, wp) = (padded.shape()[1], padded.shape()[2]);
    let (lh, lw) = (hp / SPATIAL_FACTOR, wp / SPATIAL_FACTOR);
    let groups = if bundle.config.band_by_band { s[0] } else { 1 };
    let c = bundle.config.latent_channels();

    let mut symbols = Tensor::zeros(&[c, groups * lh, lw])?;
    let mut saturated = 0;
    for g in 0..groups {
        let input = if bundle.config.band_by_band {
            slice_band(&padded, g)?
        } else {
            padded.clone()
        };
        let (y, _) = bundle.nets.encoder.forward(&input)?;
        let (q, stats) = quantize(&y);
        saturated += stats.saturated;
        store_rows(&mut symbols, &q, g);
    }
    let payload = encode_latents(&bundle.nets.prior, &symbols)?;

    Ok(CompressOutcome {
        file: BitstreamFile {
            digest: bundle.config.digest(),
            bands: header_dim(s[0], "band count")?,
            height: header_dim(s[1], "height")?,
            width: header_dim(s[2], "width")?,
            pad_right: (wp - s[2]) as u8,
            pad_bottom: (hp - s[1]) as u8,
            offset: 0.0,
            payload,
            side_info: None,
        },
        symbols,
        saturated,
    })
}

/// Reconstructs a cube from a parsed container.
///
/// The bundle must carry the same config digest the container names and, for
/// exact symbol recovery, parameters bit-identical to the compressing side.
pub fn decompress(bundle: &ModelBundle, file: &BitstreamFile) -> Result<DecompressOutcome> {
    if file.digest != bundle.config.digest() {
        let hex: String = file.digest.iter().map(|b| format!("{b:02x}")).collect();
        return Err(Error::codec(format!(
            "model/bitstream mismatch: model digest {}, bitstream digest {hex}",
            bundle.config.digest_hex()
        )));
    }
    if file.side_info.is_some() {
        return Err(Error::codec(
            "bitstream carries side information but the model has no hyper-prior",
        ));
    }
    let b = file.bands as usize;
    if b != bundle.config.bands {
        return Err(Error::codec(format!(
            "bitstream is for a {b}-band cube, the model compresses {}",
            bundle.config.bands
        )));
    }
    let (h, w) = (file.height as usize, file.width as usize);
    let (hp, wp) = (h + file.pad_bottom as usize, w + file.pad_right as usize);
    let (lh, lw) = (hp / SPATIAL_FACTOR, wp / SPATIAL_FACTOR);
    let groups = if bundle.config.band_by_band { b } else { 1 };
    let c = bundle.config.latent_channels();

    let symbols = decode_latents(&bundle.nets.prior, &file.payload, &[c, groups * lh, lw])?;
    let mut latents = symbols.clone();
    if file.offset != 0.0 {
        for v in latents.data_mut() {
            *v += f64::from(file.offset);
        }
    }

    let mut recon = Tensor::zeros(&[b, hp, wp])?;
    for g in 0..groups {
        let grid = slice_rows(&latents, groups, g)?;
        let (part, _) = bundle.nets.generator.forward(&grid)?;
        let per_group = part.shape()[0];
        let n = hp * wp;
        let dst = g * per_group * n;
        recon.data_mut()[dst..dst + per_group * n].copy_from_slice(part.data());
    }
    for v in recon.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    Ok(DecompressOutcome {
        cube: crop(&recon, h, w)?,
        symbols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{ModelConfig, Variant};
    use crate::rng::Prng;

    fn tiny_bundle(seed: u64) -> ModelBundle {
        let mut cfg = ModelConfig::new(Variant::Opt, 3);
        cfg.width_scale = 0.0625;
        cfg.seed = seed;
        ModelBundle::build(&cfg).unwrap()
    }

    fn random_cube(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = Prng::new(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.uniform()).collect()).unwrap()
    }

    fn sample_file() -> BitstreamFile {
        BitstreamFile {
            digest: [0xAA; 32],
            bands: 2,
            height: 14,
            width: 15,
            pad_right: 1,
            pad_bottom: 2,
            offset: 0.0,
            payload: vec![0xDE, 0xAD],
            side_info: None,
        }
    }

    #[test]
    fn container_layout_is_pinned() {
        let mut want = Vec::new();
        want.extend_from_slice(b"HSSC0001");
        want.extend_from_slice(&[1, 0]);
        want.extend_from_slice(&[0xAA; 32]);
        want.extend_from_slice(&[2, 0, 0, 0]);
        want.extend_from_slice(&[14, 0, 0, 0]);
        want.extend_from_slice(&[15, 0, 0, 0]);
        want.extend_from_slice(&[1, 2]);
        want.extend_from_slice(&[0, 0, 0, 0]);
        want.extend_from_slice(&[16, 0, 0, 0, 0, 0, 0, 0]);
        want.extend_from_slice(&[0xDE, 0xAD]);
        want.push(0);

        let file = sample_file();
        let bytes = file.to_bytes();
        assert_eq!(bytes, want);
        assert_eq!(BitstreamFile::from_bytes(&bytes).unwrap(), file);
    }

    #[test]
    fn side_info_section_round_trips() {
        let mut file = sample_file();
        file.side_info = Some(vec![7, 8, 9]);
        let bytes = file.to_bytes();
        assert_eq!(bytes[bytes.len() - 12], 1);
        assert_eq!(BitstreamFile::from_bytes(&bytes).unwrap(), file);
    }

    #[test]
    fn malformed_containers_are_rejected() {
        let good = sample_file().to_bytes();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(BitstreamFile::from_bytes(&bad_magic).is_err());

        let mut bad_version = good.clone();
        bad_version[8] = 2;
        assert!(BitstreamFile::from_bytes(&bad_version).is_err());

        assert!(BitstreamFile::from_bytes(&good[..good.len() - 1]).is_err());

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(BitstreamFile::from_bytes(&trailing).is_err());

        let mut odd_bits = good.clone();
        odd_bits[60] = 17;
        assert!(BitstreamFile::from_bytes(&odd_bits).is_err());

        let mut bad_pad = good.clone();
        bad_pad[55] = 3;
        assert!(BitstreamFile::from_bytes(&bad_pad).is_err());

        let mut bad_flag = good.clone();
        let last = bad_flag.len() - 1;
        bad_flag[last] = 2;
        assert!(BitstreamFile::from_bytes(&bad_flag).is_err());

        let mut nan_offset = good;
        nan_offset[56..60].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(BitstreamFile::from_bytes(&nan_offset).is_err());
    }

    #[test]
    fn compress_decompress_recovers_symbols_and_shape() {
        let bundle = tiny_bundle(5);
        let cube = random_cube(1, &[3, 24, 20]);
        let out = compress(&bundle, &cube).unwrap();
        assert_eq!(out.file.pad_bottom, 8);
        assert_eq!(out.file.pad_right, 12);

        let back = decompress(&bundle, &out.file).unwrap();
        assert_eq!(back.symbols.data(), out.symbols.data());
        assert_eq!(back.cube.shape(), cube.shape());
        assert!(back.cube.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn second_compression_is_byte_identical() {
        let bundle = tiny_bundle(6);
        let cube = random_cube(2, &[3, 32, 32]);
        let first = compress(&bundle, &cube).unwrap();
        decompress(&bundle, &first.file).unwrap();
        let second = compress(&bundle, &cube).unwrap();
        assert_eq!(first.file.to_bytes(), second.file.to_bytes());

        // A fresh build from the same config compresses identically too.
        let rebuilt = tiny_bundle(6);
        let third = compress(&rebuilt, &cube).unwrap();
        assert_eq!(first.file.to_bytes(), third.file.to_bytes());
    }

    #[test]
    fn band_by_band_mode_round_trips() {
        let mut cfg = ModelConfig::new(Variant::Opt, 2);
        cfg.width_scale = 0.0625;
        cfg.band_by_band = true;
        cfg.seed = 7;
        let bundle = ModelBundle::build(&cfg).unwrap();
        let cube = random_cube(3, &[2, 16, 16]);

        let out = compress(&bundle, &cube).unwrap();
        assert_eq!(out.symbols.shape()[1], 2);
        let back = decompress(&bundle, &out.file).unwrap();
        assert_eq!(back.symbols.data(), out.symbols.data());
        assert_eq!(back.cube.shape(), cube.shape());
    }

    #[test]
    fn digest_mismatch_is_refused() {
        let writer = tiny_bundle(8);
        let reader = tiny_bundle(9);
        let out = compress(&writer, &random_cube(4, &[3, 16, 16])).unwrap();
        let err = decompress(&reader, &out.file).unwrap_err();
        assert!(err.to_string().contains("model/bitstream mismatch"), "{err}");
    }

    #[test]
    fn header_offset_shifts_the_decoded_latents() {
        let bundle = tiny_bundle(10);
        let out = compress(&bundle, &random_cube(5, &[3, 16, 16])).unwrap();

        let mut shifted_file = out.file.clone();
        shifted_file.offset = 0.5;
        let shifted = decompress(&bundle, &shifted_file).unwrap();
        assert_eq!(shifted.symbols.data(), out.symbols.data());

        // Reconstruction must equal running the generator on symbols + 0.5.
        let mut moved = out.symbols.clone();
        for v in moved.data_mut() {
            *v += 0.5;
        }
        let (want, _) = bundle.nets.generator.forward(&moved).unwrap();
        let clamped: Vec<f64> = want.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        assert_eq!(shifted.cube.data(), clamped);
    }

    #[test]
    fn out_of_range_input_is_refused() {
        let bundle = tiny_bundle(11);
        let mut cube = random_cube(6, &[3, 16, 16]);
        cube.data_mut()[0] = 1.5;
        assert!(compress(&bundle, &cube).is_err());
        cube.data_mut()[0] = f64::NAN;
        assert!(compress(&bundle, &cube).is_err());
        let wrong_bands = random_cube(7, &[2, 16, 16]);
        assert!(compress(&bundle, &wrong_bands).is_err());
    }

    #[test]
    fn padding_replicates_the_bottom_right_edges() {
        let cube = Tensor::new(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let padded = pad_replicate(&cube, 4).unwrap();
        assert_eq!(padded.shape(), &[1, 4, 4]);
        let want = [
            1.0, 2.0, 3.0, 3.0,
            4.0, 5.0, 6.0, 6.0,
            4.0, 5.0, 6.0, 6.0,
            4.0, 5.0, 6.0, 6.0,
        ];
        assert_eq!(padded.data(), want);
        assert_eq!(crop(&padded, 2, 3).unwrap().data(), cube.data());
    }
}
