//! Flat cube files.
//!
//! The interchange format for hyperspectral cubes is deliberately dumb: an
//! eight-byte magic, three little-endian u32 dimensions, a dtype tag, and
//! the samples as little-endian f32 in band-major order (band, then row,
//! then column). Values are expected to respect the `[0, 1]` normalization
//! contract; what happens to stored values that do not is the caller's
//! choice via [`RangePolicy`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

pub const RAW_MAGIC: &[u8; 8] = b"HSSCRAW1";
/// Tag for f32 samples, the only payload type defined so far.
const DTYPE_F32: u8 = 0;

/// What to do with stored samples outside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangePolicy {
    /// Treat them as file corruption.
    Reject,
    /// Pull them to the nearest bound and report how many needed it.
    Clamp,
}

/// A cube read back from a file.
#[derive(Debug, Clone)]
pub struct LoadedCube {
    /// Samples as `[bands, height, width]`.
    pub cube: Tensor,
    /// How many samples the range policy clamped; always zero under
    /// [`RangePolicy::Reject`].
    pub clamped: usize,
}

/// Serializes a `[bands, height, width]` cube.
///
/// Samples are rounded to f32. Finiteness is enforced here; the range
/// contract is checked on the reading side, where foreign files enter.
pub fn cube_to_bytes(cube: &Tensor) -> Result<Vec<u8>> {
    if cube.ndim() != 3 {
        return Err(Error::config(format!(
            "cube files hold [bands, height, width] data, got shape {:?}",
            cube.shape()
        )));
    }
    cube.assert_finite("cube file payload")?;
    let mut out = Vec::with_capacity(8 + 12 + 1 + cube.numel() * 4);
    out.extend_from_slice(RAW_MAGIC);
    for &dim in cube.shape() {
        let v = u32::try_from(dim)
            .map_err(|_| Error::config(format!("cube dimension {dim} exceeds the u32 header")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(DTYPE_F32);
    for &v in cube.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parses a cube file.
pub fn cube_from_bytes(bytes: &[u8], policy: RangePolicy) -> Result<LoadedCube> {
    if bytes.len() < 8 + 12 + 1 {
        return Err(Error::format("cube file shorter than its header"));
    }
    if &bytes[..8] != RAW_MAGIC {
        return Err(Error::format("bad cube file magic"));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let at = 8 + 4 * i;
        *d = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        if *d == 0 {
            return Err(Error::format("cube file declares a zero dimension"));
        }
    }
    let dtype = bytes[20];
    if dtype != DTYPE_F32 {
        return Err(Error::format(format!("unsupported cube dtype tag {dtype}")));
    }
    let numel = dims[0]
        .checked_mul(dims[1])
        .and_then(|n| n.checked_mul(dims[2]))
        .ok_or_else(|| Error::format("cube dimensions overflow"))?;
    let payload = &bytes[21..];
    let want = numel * 4;
    if payload.len() < want {
        return Err(Error::format(format!(
            "payload underrun: {} bytes held, {want} promised by the header",
            payload.len()
        )));
    }
    if payload.len() > want {
        return Err(Error::format(format!(
            "{} trailing bytes after the payload",
            payload.len() - want
        )));
    }
    let mut data = Vec::with_capacity(numel);
    let mut clamped = 0usize;
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        if !v.is_finite() {
            return Err(Error::non_finite("cube file payload"));
        }
        if (0.0..=1.0).contains(&v) {
            data.push(v);
        } else {
            match policy {
                RangePolicy::Reject => {
                    return Err(Error::format(format!(
                        "sample {v} outside the normalized range [0, 1]"
                    )));
                }
                RangePolicy::Clamp => {
                    clamped += 1;
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
    }
    Ok(LoadedCube {
        cube: Tensor::new(&dims, data)?,
        clamped,
    })
}

pub fn write_cube(path: impl AsRef<Path>, cube: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = cube_to_bytes(cube)?;
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_cube(path: impl AsRef<Path>, policy: RangePolicy) -> Result<LoadedCube> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    cube_from_bytes(&bytes, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    /// A random cube already on the f32 grid, as every cube in the pipeline
    /// is, so that round trips can be compared bit for bit.
    fn snapped_cube(seed: u64, b: usize, h: usize, w: usize) -> Tensor {
        let mut rng = Prng::new(seed);
        let data = (0..b * h * w).map(|_| rng.uniform() as f32 as f64).collect();
        Tensor::new(&[b, h, w], data).unwrap()
    }

    #[test]
    fn byte_layout_is_pinned() {
        let cube = Tensor::new(&[1, 1, 2], vec![0.0, 0.5]).unwrap();
        let mut want = Vec::new();
        want.extend_from_slice(b"HSSCRAW1");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.push(0);
        want.extend_from_slice(&0.0f32.to_le_bytes());
        want.extend_from_slice(&0.5f32.to_le_bytes());
        assert_eq!(cube_to_bytes(&cube).unwrap(), want);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cube = snapped_cube(5, 3, 7, 4);
        let bytes = cube_to_bytes(&cube).unwrap();
        let back = cube_from_bytes(&bytes, RangePolicy::Reject).unwrap();
        assert_eq!(back.clamped, 0);
        assert_eq!(back.cube.shape(), cube.shape());
        let same = back
            .cube
            .data()
            .iter()
            .zip(cube.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
        // And writing what was read reproduces the file byte for byte.
        assert_eq!(cube_to_bytes(&back.cube).unwrap(), bytes);
    }

    #[test]
    fn file_round_trip_through_a_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.raw");
        let cube = snapped_cube(6, 2, 5, 5);
        write_cube(&path, &cube).unwrap();
        let back = read_cube(&path, RangePolicy::Reject).unwrap();
        assert_eq!(back.cube.data(), cube.data());
    }

    #[test]
    fn truncation_reports_payload_underrun() {
        let bytes = cube_to_bytes(&snapped_cube(7, 2, 3, 3)).unwrap();
        let err = cube_from_bytes(&bytes[..bytes.len() - 5], RangePolicy::Reject).unwrap_err();
        assert!(err.to_string().contains("payload underrun"), "{err}");
    }

    #[test]
    fn damaged_headers_are_rejected() {
        let good = cube_to_bytes(&snapped_cube(8, 1, 2, 2)).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(cube_from_bytes(&bad_magic, RangePolicy::Reject).is_err());
        let mut bad_dtype = good.clone();
        bad_dtype[20] = 9;
        assert!(cube_from_bytes(&bad_dtype, RangePolicy::Reject).is_err());
        let mut trailing = good.clone();
        trailing.push(0);
        assert!(cube_from_bytes(&trailing, RangePolicy::Reject).is_err());
        let mut zero_dim = good;
        zero_dim[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(cube_from_bytes(&zero_dim, RangePolicy::Reject).is_err());
    }

    #[test]
    fn range_policy_decides_out_of_range_handling() {
        let mut cube = snapped_cube(9, 1, 2, 2);
        cube.data_mut()[0] = 1.5;
        cube.data_mut()[3] = -0.25;
        let bytes = cube_to_bytes(&cube).unwrap();
        let err = cube_from_bytes(&bytes, RangePolicy::Reject).unwrap_err();
        assert!(err.to_string().contains("outside"), "{err}");
        let loaded = cube_from_bytes(&bytes, RangePolicy::Clamp).unwrap();
        assert_eq!(loaded.clamped, 2);
        assert_eq!(loaded.cube.data()[0], 1.0);
        assert_eq!(loaded.cube.data()[3], 0.0);
    }

    #[test]
    fn non_finite_payload_is_always_rejected() {
        let cube = snapped_cube(10, 1, 2, 2);
        let mut bytes = cube_to_bytes(&cube).unwrap();
        bytes[21..25].copy_from_slice(&f32::NAN.to_le_bytes());
        for policy in [RangePolicy::Reject, RangePolicy::Clamp] {
            let err = cube_from_bytes(&bytes, policy).unwrap_err();
            assert!(err.to_string().contains("finite"), "{err}");
        }
    }
}
