//! Training losses: mean absolute intensity error, mean absolute Sobel
//! gradient error, and `1 − SSIM`, combined with per-term weights.
//!
//! All three terms are means over elements, so the weights do not depend on
//! image resolution. Each term also has a gradient with respect to the
//! enhanced image for backpropagation.

use crate::conv::{conv2d_adjoint, sobel_bank, sobel_gradients};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor3;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub enable_int: bool,
    pub enable_text: bool,
    pub enable_ssim: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha1: 40.0,
            alpha2: 40.0,
            alpha3: 100.0,
            enable_int: true,
            enable_text: true,
            enable_ssim: true,
        }
    }
}

impl LossConfig {
    /// Intensity term only.
    pub fn ls1() -> Self {
        Self {
            enable_text: false,
            enable_ssim: false,
            ..Self::default()
        }
    }

    /// Intensity and texture terms.
    pub fn ls2() -> Self {
        Self {
            enable_ssim: false,
            ..Self::default()
        }
    }

    /// All three terms (same as the default).
    pub fn ls3() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("alpha3", self.alpha3)] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::arg(format!("{name} must be a finite nonnegative weight, got {a}")));
            }
        }
        Ok(())
    }
}

/// Unweighted term values plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms<T> {
    pub total: T,
    pub intensity: T,
    pub texture: T,
    pub ssim: T,
}

fn mean_abs_diff<T: Real>(a: &Tensor3<T>, b: &Tensor3<T>) -> Result<T> {
    a.check_same_shape(b, "loss")?;
    let s = a
        .data()
        .iter()
        .zip(b.data())
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y).abs());
    Ok(s / T::from_usize_lossy(a.len()))
}

/// `sgn(a − b) / N`
fn mean_abs_grad<T: Real>(a: &Tensor3<T>, b: &Tensor3<T>) -> Tensor3<T> {
    let n = T::from_usize_lossy(a.len());
    a.zip_map(b, |x, y| {
        let d = x - y;
        if d > T::zero() {
            T::one() / n
        } else if d < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        }
    })
    .expect("shapes checked by caller")
}

pub fn loss_intensity<T: Real>(enhanced: &Tensor3<T>, truth: &Tensor3<T>) -> Result<T> {
    mean_abs_diff(enhanced, truth)
}

pub fn loss_texture<T: Real>(enhanced: &Tensor3<T>, truth: &Tensor3<T>) -> Result<T> {
    enhanced.check_same_shape(truth, "loss_texture")?;
    loss_intensity(&sobel_gradients(enhanced), &sobel_gradients(truth))
}

fn texture_grad<T: Real>(enhanced: &Tensor3<T>, truth: &Tensor3<T>) -> Tensor3<T> {
    let ge = sobel_gradients(enhanced);
    let gt = sobel_gradients(truth);
    let g = mean_abs_grad(&ge, &gt);
    conv2d_adjoint(&g, &sobel_bank(enhanced.channels())).expect("sobel bank matches")
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps<T: Real>() -> Vec<T> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::lit(v / s)).collect()
}

/// Zero-padded separable Gaussian filter on one `h × w` plane.
fn gaussian_filter<T: Real>(plane: &[T], h: usize, w: usize, taps: &[T]) -> Vec<T> {
    let r = taps.len() / 2;
    let mut tmp = vec![T::zero(); h * w];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = T::zero();
            for (t, &g) in taps.iter().enumerate() {
                let xx = x as isize + t as isize - r as isize;
                if xx >= 0 && (xx as usize) < w {
                    acc += g * row[xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (t, &g) in taps.iter().enumerate() {
                let yy = y as isize + t as isize - r as isize;
                if yy >= 0 && (yy as usize) < h {
                    acc += g * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

struct SsimStats<T> {
    mu_a: Vec<T>,
    mu_b: Vec<T>,
    e_aa: Vec<T>,
    e_bb: Vec<T>,
    e_ab: Vec<T>,
}

fn plane_stats<T: Real>(a: &[T], b: &[T], h: usize, w: usize, taps: &[T]) -> SsimStats<T> {
    let prod = |x: &[T], y: &[T]| -> Vec<T> { x.iter().zip(y).map(|(&p, &q)| p * q).collect() };
    SsimStats {
        mu_a: gaussian_filter(a, h, w, taps),
        mu_b: gaussian_filter(b, h, w, taps),
        e_aa: gaussian_filter(&prod(a, a), h, w, taps),
        e_bb: gaussian_filter(&prod(b, b), h, w, taps),
        e_ab: gaussian_filter(&prod(a, b), h, w, taps),
    }
}

/// Per-pixel SSIM terms `(A1, A2, B1, B2)` at index `p`, written so that
/// swapping `a` and `b` reproduces every intermediate bit for bit.
#[inline]
fn ssim_terms<T: Real>(s: &SsimStats<T>, p: usize) -> (T, T, T, T) {
    let c1 = T::lit(SSIM_C1);
    let c2 = T::lit(SSIM_C2);
    let two = T::lit(2.0);
    let (ma, mb) = (s.mu_a[p], s.mu_b[p]);
    let var_a = s.e_aa[p] - ma * ma;
    let var_b = s.e_bb[p] - mb * mb;
    let cov = s.e_ab[p] - ma * mb;
    (
        two * ma * mb + c1,
        two * cov + c2,
        ma * ma + mb * mb + c1,
        var_a + var_b + c2,
    )
}

/// Per-pixel SSIM map, H×W×C.
pub fn ssim_map<T: Real>(a: &Tensor3<T>, b: &Tensor3<T>) -> Result<Tensor3<T>> {
    a.check_same_shape(b, "ssim")?;
    let (h, w, c) = a.shape();
    let taps = gaussian_taps::<T>();
    let pa = a.to_planar();
    let pb = b.to_planar();
    let plane = h * w;
    let mut out = vec![T::zero(); pa.len()];
    for ch in 0..c {
        let range = ch * plane..(ch + 1) * plane;
        let st = plane_stats(&pa[range.clone()], &pb[range.clone()], h, w, &taps);
        for p in 0..plane {
            let (a1, a2, b1, b2) = ssim_terms(&st, p);
            out[ch * plane + p] = (a1 * a2) / (b1 * b2);
        }
    }
    Ok(Tensor3::from_planar(h, w, c, out))
}

/// Mean SSIM over pixels and channels (11×11 Gaussian window, σ = 1.5,
/// zero padding, dynamic range 1).
pub fn ssim<T: Real>(a: &Tensor3<T>, b: &Tensor3<T>) -> Result<T> {
    Ok(ssim_map(a, b)?.mean())
}

pub fn loss_ssim<T: Real>(enhanced: &Tensor3<T>, truth: &Tensor3<T>) -> Result<T> {
    Ok(T::one() - ssim(enhanced, truth)?)
}

/// Mean SSIM together with its gradient with respect to `a`.
pub fn ssim_with_grad<T: Real>(a: &Tensor3<T>, b: &Tensor3<T>) -> Result<(T, Tensor3<T>)> {
    a.check_same_shape(b, "ssim")?;
    let (h, w, c) = a.shape();
    let taps = gaussian_taps::<T>();
    let pa = a.to_planar();
    let pb = b.to_planar();
    let plane = h * w;
    let n = T::from_usize_lossy(pa.len());
    let two = T::lit(2.0);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); pa.len()];
    for ch in 0..c {
        let range = ch * plane..(ch + 1) * plane;
        let (xa, xb) = (&pa[range.clone()], &pb[range.clone()]);
        let st = plane_stats(xa, xb, h, w, &taps);
        // Sensitivities of the mean with respect to μ_a, E[a²] and E[ab].
        let mut d_mu = vec![T::zero(); plane];
        let mut d_eaa = vec![T::zero(); plane];
        let mut d_eab = vec![T::zero(); plane];
        for p in 0..plane {
            let (a1, a2, b1, b2) = ssim_terms(&st, p);
            let den = b1 * b2;
            let s = (a1 * a2) / den;
            total += s;
            let (ma, mb) = (st.mu_a[p], st.mu_b[p]);
            d_mu[p] = (two * mb * (a2 - a1) / den - s * (two * ma / b1 - two * ma / b2)) / n;
            d_eaa[p] = -s / b2 / n;
            d_eab[p] = two * a1 / den / n;
        }
        // The Gaussian window is symmetric, so the filter is self-adjoint.
        let g_mu = gaussian_filter(&d_mu, h, w, &taps);
        let g_eaa = gaussian_filter(&d_eaa, h, w, &taps);
        let g_eab = gaussian_filter(&d_eab, h, w, &taps);
        for p in 0..plane {
            grad[ch * plane + p] = g_mu[p] + two * xa[p] * g_eaa[p] + xb[p] * g_eab[p];
        }
    }
    Ok((total / n, Tensor3::from_planar(h, w, c, grad)))
}

/// Weighted sum of the enabled terms.
pub fn total_loss<T: Real>(enhanced: &Tensor3<T>, truth: &Tensor3<T>, cfg: &LossConfig) -> Result<T> {
    Ok(loss_terms(enhanced, truth, cfg)?.total)
}

/// Enabled term values (disabled ones reported as 0) and their weighted sum.
pub fn loss_terms<T: Real>(enhanced: &Tensor3<T>, truth: &Tensor3<T>, cfg: &LossConfig) -> Result<LossTerms<T>> {
    enhanced.check_same_shape(truth, "total_loss")?;
    let mut terms = LossTerms {
        total: T::zero(),
        intensity: T::zero(),
        texture: T::zero(),
        ssim: T::zero(),
    };
    if cfg.enable_int {
        terms.intensity = loss_intensity(enhanced, truth)?;
        terms.total += T::lit(cfg.alpha1) * terms.intensity;
    }
    if cfg.enable_text {
        terms.texture = loss_texture(enhanced, truth)?;
        terms.total += T::lit(cfg.alpha2) * terms.texture;
    }
    if cfg.enable_ssim {
        terms.ssim = loss_ssim(enhanced, truth)?;
        terms.total += T::lit(cfg.alpha3) * terms.ssim;
    }
    Ok(terms)
}

/// Loss terms and `∂total/∂enhanced`.
pub fn loss_with_grad<T: Real>(
    enhanced: &Tensor3<T>,
    truth: &Tensor3<T>,
    cfg: &LossConfig,
) -> Result<(LossTerms<T>, Tensor3<T>)> {
    enhanced.check_same_shape(truth, "total_loss")?;
    let mut terms = LossTerms::default();
    let mut grad = enhanced.zeros_like();
    if cfg.enable_int {
        terms.intensity = loss_intensity(enhanced, truth)?;
        terms.total += T::lit(cfg.alpha1) * terms.intensity;
        grad.axpy(T::lit(cfg.alpha1), &mean_abs_grad(enhanced, truth))?;
    }
    if cfg.enable_text {
        terms.texture = loss_texture(enhanced, truth)?;
        terms.total += T::lit(cfg.alpha2) * terms.texture;
        grad.axpy(T::lit(cfg.alpha2), &texture_grad(enhanced, truth))?;
    }
    if cfg.enable_ssim {
        let (s, g) = ssim_with_grad(enhanced, truth)?;
        terms.ssim = T::one() - s;
        terms.total += T::lit(cfg.alpha3) * terms.ssim;
        grad.axpy(-T::lit(cfg.alpha3), &g)?;
    }
    Ok((terms, grad))
}
