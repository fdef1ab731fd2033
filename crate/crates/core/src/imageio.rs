//! PNG and binary PPM (P6) codecs mapping 8-bit RGB to `[0, 1]` tensors.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, GrayImage, ImageEncoder, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor3;

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

fn codec_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Codec {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads an 8-bit RGB or RGBA PNG (alpha dropped) or a P6 PPM with maxval
/// 255. Values are `v / 255`.
pub fn load_image<T: Real>(path: impl AsRef<Path>) -> Result<Tensor3<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path)
}

/// Decodes image bytes; `path` is used only in error messages.
pub fn decode_image<T: Real>(bytes: &[u8], path: &Path) -> Result<Tensor3<T>> {
    let (w, h, rgb) = if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes, path)?
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes, path)?
    } else {
        return Err(codec_err(path, "unsupported format (expected PNG or binary PPM)"));
    };
    let scale = T::lit(1.0 / 255.0);
    Tensor3::new(h, w, 3, rgb.into_iter().map(|b| T::from_u8(b).expect("byte") * scale).collect())
        .map_err(|e| codec_err(path, e.to_string()))
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| codec_err(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let rgb = match img {
        DynamicImage::ImageRgb8(buf) => buf.into_raw(),
        DynamicImage::ImageRgba8(buf) => buf.into_raw().chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        other => {
            return Err(codec_err(
                path,
                format!("unsupported PNG pixel format {:?} (need 8-bit RGB or RGBA)", other.color()),
            ))
        }
    };
    Ok((w, h, rgb))
}

fn decode_ppm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let err = |e: image::ImageError| codec_err(path, e.to_string());
    let decoder = PnmDecoder::new(Cursor::new(bytes)).map_err(err)?;
    let header = decoder.header();
    if header.subtype() != PnmSubtype::Pixmap(SampleEncoding::Binary) {
        return Err(codec_err(path, "only binary PPM (P6) is supported"));
    }
    if header.maximal_sample() != 255 {
        return Err(codec_err(
            path,
            format!("unsupported PPM maxval {} (need 255)", header.maximal_sample()),
        ));
    }
    let (w, h) = (header.width() as usize, header.height() as usize);
    let img = DynamicImage::from_decoder(decoder).map_err(err)?;
    Ok((w, h, img.into_rgb8().into_raw()))
}

/// `clamp(v, 0, 1)·255` rounded half-to-even.
#[inline]
pub fn quantize<T: Real>(v: T) -> u8 {
    let x = v.as_f64();
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
    (x * 255.0).round_ties_even() as u8
}

fn rgb_bytes<T: Real>(image: &Tensor3<T>, path: &Path) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(codec_err(path, format!("can only write 3-channel images, got {}", image.channels())));
    }
    Ok(image.data().iter().map(|&v| quantize(v)).collect())
}

/// Writes PNG, or P6 PPM when the extension is `.ppm`.
pub fn save_image<T: Real>(image: &Tensor3<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = rgb_bytes(image, path)?;
    let is_ppm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    if is_ppm {
        let mut out = Vec::new();
        PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(&bytes, image.width() as u32, image.height() as u32, ExtendedColorType::Rgb8)
            .map_err(|e| codec_err(path, e.to_string()))?;
        fs::write(path, out).map_err(|e| Error::io(path, e))
    } else {
        let buf = RgbImage::from_raw(image.width() as u32, image.height() as u32, bytes).expect("buffer sized from image");
        buf.save_with_format(path, ImageFormat::Png)
            .map_err(|e| codec_err(path, e.to_string()))
    }
}

/// Writes an 8-bit grayscale PNG.
pub fn save_gray_png(pixels: Vec<u8>, width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = GrayImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| codec_err(path, "pixel buffer does not match dimensions"))?;
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| codec_err(path, e.to_string()))
}

/// Min-max normalizes a single plane to 8 bits; a constant plane maps to 128.
pub fn normalize_plane<T: Real>(plane: &[T]) -> Vec<u8> {
    let (lo, hi) = plane
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let x = v.as_f64();
            (lo.min(x), hi.max(x))
        });
    if !(hi > lo) {
        return vec![128; plane.len()];
    }
    plane
        .iter()
        .map(|v| ((v.as_f64() - lo) / (hi - lo) * 255.0).round_ties_even() as u8)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_scaling() {
        let mut bytes = b"P6\n# comment\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255]);
        let t: Tensor3<f64> = decode_image(&bytes, Path::new("x.ppm")).unwrap();
        assert_eq!(t.data(), &[0.0, 128.0 / 255.0, 1.0]);
    }

    #[test]
    fn ppm_bad_maxval() {
        let mut bytes = b"P6 1 1 65535\n".to_vec();
        bytes.extend_from_slice(&[0; 6]);
        assert!(matches!(decode_image::<f64>(&bytes, Path::new("x.ppm")), Err(Error::Codec { .. })));
        let mut bytes = b"P6 2 1 255\n".to_vec();
        bytes.extend_from_slice(&[0; 3]);
        assert!(decode_image::<f64>(&bytes, Path::new("x.ppm")).is_err());
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let t = Tensor3::from_fn(3, 2, 3, |y, x, c| (y * 6 + x * 3 + c) as f64 / 17.0);
        save_image(&t, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6"));
        let back: Tensor3<f64> = load_image(&path).unwrap();
        assert!(back.max_abs_diff(&t).unwrap() <= 1.0 / 510.0 + 1e-12);
    }

    #[test]
    fn unknown_format() {
        assert!(matches!(decode_image::<f64>(b"GIF89a", Path::new("x.gif")), Err(Error::Codec { .. })));
    }

    #[test]
    fn quantize_rounding() {
        assert_eq!(quantize(-0.5f64), 0);
        assert_eq!(quantize(7.0f64), 255);
        assert_eq!(quantize(0.5f64), 128); // 127.5 → 128 (even)
    }

    #[test]
    fn plane_normalization() {
        assert_eq!(normalize_plane(&[0.3f64; 4]), vec![128; 4]);
        assert_eq!(normalize_plane(&[-1.0f64, 0.0, 1.0]), vec![0, 128, 255]);
    }
}
