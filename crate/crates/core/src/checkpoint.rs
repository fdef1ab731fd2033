//! Binary checkpoint format (little-endian).
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SINETV01"
//! 8       4     variant code (0 full, 1 ds1, 2 ds2, 3 ds3)
//! 12      4     K (filters)
//! 16      4     kernel size
//! 20      4     iterations T
//! 24      4     precision code (0 = f32, 1 = f64)
//! 28      ...   parameter values in `SinetParams::param_slices` order
//! ```
//!
//! See `docs/checkpoint-format.md` for the per-variant payload layout.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SinetParams, Variant};
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"SINETV01";
pub const HEADER_LEN: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn code(self) -> u32 {
        match self {
            Precision::F32 => 0,
            Precision::F64 => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Precision::F32),
            1 => Some(Precision::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

pub fn encode_checkpoint<T: Real>(params: &SinetParams<T>, precision: Precision) -> Vec<u8> {
    let cfg = params.config();
    let mut out = Vec::with_capacity(HEADER_LEN + params.num_params() * precision.width());
    out.extend_from_slice(MAGIC);
    for v in [
        cfg.variant.code(),
        cfg.k_filters as u32,
        cfg.kernel_size as u32,
        cfg.iterations as u32,
        precision.code(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (_, slice) in params.param_slices() {
        for &v in slice {
            match precision {
                Precision::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                Precision::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(bytes.len(), format!("truncated header: need {HEADER_LEN} bytes, have {}", bytes.len())))
}

/// Reads only the header of a checkpoint.
pub fn decode_header(bytes: &[u8]) -> Result<(ModelConfig, Precision)> {
    if bytes.len() < MAGIC.len() {
        return Err(format_err(bytes.len(), "truncated before end of magic"));
    }
    if &bytes[..8] != MAGIC {
        return Err(format_err(0, "bad magic (expected \"SINETV01\")"));
    }
    let variant_code = read_u32(bytes, 8)?;
    let variant = Variant::from_code(variant_code)
        .ok_or_else(|| format_err(8, format!("unknown variant code {variant_code}")))?;
    let k = read_u32(bytes, 12)? as usize;
    let ks = read_u32(bytes, 16)? as usize;
    let t = read_u32(bytes, 20)? as usize;
    let prec_code = read_u32(bytes, 24)?;
    let precision = Precision::from_code(prec_code)
        .ok_or_else(|| format_err(24, format!("unknown precision code {prec_code}")))?;
    let cfg = ModelConfig::new(k, ks, t, variant);
    if k == 0 {
        return Err(format_err(12, "K must be positive"));
    }
    if ks.is_multiple_of(2) {
        return Err(format_err(16, format!("kernel size {ks} is not odd")));
    }
    if t == 0 {
        return Err(format_err(20, "iteration count must be positive"));
    }
    Ok((cfg, precision))
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<SinetParams<T>> {
    let (cfg, precision) = decode_header(bytes)?;
    let mut params = SinetParams::<T>::zeros(cfg).map_err(|e| format_err(8, e.to_string()))?;
    let expected = HEADER_LEN + params.num_params() * precision.width();
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated: header promises {expected} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, format!("{} trailing bytes after payload", bytes.len() - expected)));
    }
    let mut offset = HEADER_LEN;
    let w = precision.width();
    for (_, slice) in params.param_slices_mut() {
        for v in slice.iter_mut() {
            let b = &bytes[offset..offset + w];
            *v = match precision {
                Precision::F32 => T::lit(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64),
                Precision::F64 => T::lit(f64::from_le_bytes(b.try_into().expect("8 bytes"))),
            };
            offset += w;
        }
    }
    Ok(params)
}

/// Writes a 32-bit checkpoint.
pub fn save_checkpoint<T: Real>(params: &SinetParams<T>, path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint_with(params, path, Precision::F32)
}

pub fn save_checkpoint_with<T: Real>(params: &SinetParams<T>, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params, precision)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<SinetParams<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(v: Variant) -> SinetParams<f32> {
        SinetParams::init(ModelConfig::new(3, 3, 2, v), 5).unwrap()
    }

    #[test]
    fn round_trip_f32() {
        for v in Variant::ALL {
            let p = params(v);
            let bytes = encode_checkpoint(&p, Precision::F32);
            assert_eq!(bytes.len(), HEADER_LEN + 4 * p.num_params());
            let q: SinetParams<f32> = decode_checkpoint(&bytes).unwrap();
            assert_eq!(p, q);
        }
    }

    #[test]
    fn round_trip_f64_precision() {
        let p = params(Variant::Full).cast::<f64>();
        let bytes = encode_checkpoint(&p, Precision::F64);
        let q: SinetParams<f64> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn header_errors_name_offsets() {
        let mut bytes = encode_checkpoint(&params(Variant::Full), Precision::F32);
        bytes[8] = 9;
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Format { offset: 8, .. })));
        let mut bytes = encode_checkpoint(&params(Variant::Full), Precision::F32);
        bytes[16] = 4;
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Format { offset: 16, .. })));
        let mut bytes = encode_checkpoint(&params(Variant::Full), Precision::F32);
        bytes[24] = 7;
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Format { offset: 24, .. })));
        assert!(matches!(decode_checkpoint::<f32>(&bytes[..5]), Err(Error::Format { offset: 5, .. })));
        assert!(matches!(decode_checkpoint::<f32>(&bytes[..18]), Err(Error::Format { offset: 18, .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_checkpoint(&params(Variant::Ds2TiedLcsc), Precision::F32);
        let n = bytes.len();
        bytes.push(0);
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Format { offset, .. }) if offset == n));
    }
}
