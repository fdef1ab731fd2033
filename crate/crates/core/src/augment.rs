//! Paired random crop and flip augmentation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor3;

/// One augmentation decision, applied identically to source and truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropWindow {
    pub y0: usize,
    pub x0: usize,
    pub size: usize,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl CropWindow {
    /// Uniform crop position; each flip independently with probability ½.
    pub fn sample<R: Rng + ?Sized>(height: usize, width: usize, crop: usize, flips: bool, rng: &mut R) -> Result<Self> {
        if crop == 0 || crop > height || crop > width {
            return Err(Error::arg(format!(
                "crop {crop} does not fit a {height}x{width} image"
            )));
        }
        let y0 = rng.random_range(0..=height - crop);
        let x0 = rng.random_range(0..=width - crop);
        let flip_horizontal = flips && rng.random_bool(0.5);
        let flip_vertical = flips && rng.random_bool(0.5);
        Ok(Self {
            y0,
            x0,
            size: crop,
            flip_horizontal,
            flip_vertical,
        })
    }

    pub fn apply<T: Real>(&self, image: &Tensor3<T>) -> Result<Tensor3<T>> {
        let mut out = image.crop(self.y0, self.x0, self.size, self.size)?;
        if self.flip_horizontal {
            out = out.flip_horizontal();
        }
        if self.flip_vertical {
            out = out.flip_vertical();
        }
        Ok(out)
    }
}

/// Applies `window` to both images of a pair.
pub fn crop_and_flip<T: Real>(
    source: &Tensor3<T>,
    truth: &Tensor3<T>,
    window: &CropWindow,
) -> Result<(Tensor3<T>, Tensor3<T>)> {
    source.check_same_shape(truth, "augment_pair")?;
    Ok((window.apply(source)?, window.apply(truth)?))
}

/// Random square crop of side `crop` plus random horizontal/vertical flips,
/// shared by both images.
pub fn augment_pair<T: Real, R: Rng + ?Sized>(
    source: &Tensor3<T>,
    truth: &Tensor3<T>,
    crop: usize,
    rng: &mut R,
) -> Result<(Tensor3<T>, Tensor3<T>)> {
    source.check_same_shape(truth, "augment_pair")?;
    let window = CropWindow::sample(source.height(), source.width(), crop, true, rng)?;
    crop_and_flip(source, truth, &window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(seed: f64) -> Tensor3<f64> {
        Tensor3::from_fn(6, 7, 3, |y, x, c| seed + (y * 21 + x * 3 + c) as f64)
    }

    #[test]
    fn full_crop_without_flips_is_identity() {
        let (a, b) = (img(0.0), img(1.0));
        let w = CropWindow {
            y0: 0,
            x0: 0,
            size: 6,
            flip_horizontal: false,
            flip_vertical: false,
        };
        let sq = (a.crop(0, 0, 6, 6).unwrap(), b.crop(0, 0, 6, 6).unwrap());
        assert_eq!(crop_and_flip(&a, &b, &w).unwrap(), sq);
    }

    #[test]
    fn double_flip_is_identity() {
        let (a, b) = (img(0.0), img(1.0)).clone();
        let w = CropWindow {
            y0: 0,
            x0: 1,
            size: 6,
            flip_horizontal: true,
            flip_vertical: true,
        };
        let (a1, b1) = crop_and_flip(&a, &b, &w).unwrap();
        let w2 = CropWindow { x0: 0, ..w };
        let (a2, b2) = crop_and_flip(&a1, &b1, &w2).unwrap();
        assert_eq!(a2, a.crop(0, 1, 6, 6).unwrap());
        assert_eq!(b2, b.crop(0, 1, 6, 6).unwrap());
    }

    #[test]
    fn same_window_for_both_images() {
        let a = img(0.0);
        let b = a.map(|v| v + 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (ca, cb) = augment_pair(&a, &b, 4, &mut rng).unwrap();
            assert_eq!(ca.map(|v| v + 100.0), cb);
        }
    }

    #[test]
    fn seeded_is_reproducible() {
        let (a, b) = (img(0.0), img(1.0));
        let r1 = augment_pair(&a, &b, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let r2 = augment_pair(&a, &b, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn crop_too_large() {
        let (a, b) = (img(0.0), img(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(augment_pair(&a, &b, 7, &mut rng), Err(Error::Argument(_))));
    }
}
