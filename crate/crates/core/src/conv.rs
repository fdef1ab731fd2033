//! Zero-padded "same" 2-D convolution (cross-correlation convention), its
//! adjoint, and the weight gradient used by backpropagation.
//!
//! Internally the kernels work on channel-major planes so the innermost loop is
//! a contiguous `out[x0..x1] += w * in[x0+dx..x1+dx]` row update.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor3;

/// `out_channels × in_channels` kernels of odd size `kernel_size`, with an
/// optional per-output bias. Weights are ordered `(out, in, row, col)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelBank<T> {
    out_channels: usize,
    in_channels: usize,
    kernel_size: usize,
    weights: Vec<T>,
    bias: Option<Vec<T>>,
}

impl<T: Real> KernelBank<T> {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        weights: Vec<T>,
        bias: Option<Vec<T>>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::arg("kernel bank needs at least one input and output channel"));
        }
        if kernel_size.is_multiple_of(2) {
            return Err(Error::arg(format!("kernel size must be odd, got {kernel_size}")));
        }
        let expected = out_channels * in_channels * kernel_size * kernel_size;
        if weights.len() != expected {
            return Err(Error::arg(format!(
                "kernel bank {out_channels}x{in_channels}x{kernel_size}x{kernel_size} needs {expected} weights, got {}",
                weights.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(Error::arg(format!(
                    "bias needs {out_channels} values, got {}",
                    b.len()
                )));
            }
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel_size,
            weights,
            bias,
        })
    }

    /// All-zero bank; `with_bias` adds a zero bias vector.
    pub fn zeros(out_channels: usize, in_channels: usize, kernel_size: usize, with_bias: bool) -> Self {
        Self::new(
            out_channels,
            in_channels,
            kernel_size,
            vec![T::zero(); out_channels * in_channels * kernel_size * kernel_size],
            with_bias.then(|| vec![T::zero(); out_channels]),
        )
        .expect("valid zero bank")
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.bias.is_some(),
        )
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&[T]> {
        self.bias.as_deref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut [T]> {
        self.bias.as_deref_mut()
    }

    pub fn weights_and_bias_mut(&mut self) -> (&mut [T], Option<&mut [T]>) {
        (&mut self.weights, self.bias.as_deref_mut())
    }

    pub fn has_bias(&self) -> bool {
        self.bias.is_some()
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, r: usize, c: usize) -> T {
        let k = self.kernel_size;
        self.weights[((o * self.in_channels + i) * k + r) * k + c]
    }

    /// Same weights without the bias.
    pub fn without_bias(&self) -> Self {
        Self {
            bias: None,
            ..self.clone()
        }
    }

    /// Bank whose forward convolution is the adjoint of this bank's
    /// bias-free convolution: kernels rotated 180° and channel roles swapped.
    pub fn adjoint_bank(&self) -> Self {
        let k = self.kernel_size;
        let mut weights = vec![T::zero(); self.weights.len()];
        for o in 0..self.out_channels {
            for i in 0..self.in_channels {
                for r in 0..k {
                    for c in 0..k {
                        weights[((i * self.out_channels + o) * k + (k - 1 - r)) * k + (k - 1 - c)] =
                            self.weight(o, i, r, c);
                    }
                }
            }
        }
        Self {
            out_channels: self.in_channels,
            in_channels: self.out_channels,
            kernel_size: k,
            weights,
            bias: None,
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            weights: self.weights.iter().map(|&w| w * s).collect(),
            bias: self.bias.as_ref().map(|b| b.iter().map(|&v| v * s).collect()),
            ..self.clone()
        }
    }

    pub fn cast<U: Real>(&self) -> KernelBank<U> {
        KernelBank {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            kernel_size: self.kernel_size,
            weights: self.weights.iter().map(|v| U::lit(v.as_f64())).collect(),
            bias: self
                .bias
                .as_ref()
                .map(|b| b.iter().map(|v| U::lit(v.as_f64())).collect()),
        }
    }

    /// Number of multiply-accumulates for one application on an `h × w` grid.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        conv_macs(h, w, self.in_channels, self.out_channels, self.kernel_size)
    }
}

/// `h·w·c_in·c_out·k²`
pub fn conv_macs(h: usize, w: usize, c_in: usize, c_out: usize, k: usize) -> u64 {
    (h as u64) * (w as u64) * (c_in as u64) * (c_out as u64) * (k as u64) * (k as u64)
}

/// Row/column ranges `[lo, hi)` of output positions whose input partner
/// `pos + shift` lies inside `[0, n)`.
#[inline]
fn valid_range(n: usize, shift: isize) -> (usize, usize) {
    let lo = if shift < 0 { (-shift) as usize } else { 0 };
    let hi = if shift > 0 {
        n.saturating_sub(shift as usize)
    } else {
        n
    };
    (lo.min(n), hi.max(lo.min(n)))
}

fn conv_planar<T: Real>(input: &[T], h: usize, w: usize, bank: &KernelBank<T>, use_bias: bool) -> Vec<T> {
    let k = bank.kernel_size;
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut out = vec![T::zero(); plane * bank.out_channels];
    for o in 0..bank.out_channels {
        let out_plane = &mut out[o * plane..(o + 1) * plane];
        if use_bias {
            if let Some(b) = &bank.bias {
                out_plane.iter_mut().for_each(|v| *v = b[o]);
            }
        }
        for i in 0..bank.in_channels {
            let in_plane = &input[i * plane..(i + 1) * plane];
            for r in 0..k {
                let sy = r as isize - pad;
                let (y0, y1) = valid_range(h, sy);
                for c in 0..k {
                    let wv = bank.weight(o, i, r, c);
                    let sx = c as isize - pad;
                    let (x0, x1) = valid_range(w, sx);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let iy = (y as isize + sy) as usize;
                        let src_start = (iy * w) as isize + x0 as isize + sx;
                        let src = &in_plane[src_start as usize..src_start as usize + (x1 - x0)];
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Zero-padded same-size cross-correlation:
/// `out(y,x,o) = Σ_{i,r,c} in(y+r−p, x+c−p, i)·w(o,i,r,c) + bias(o)`.
pub fn conv2d_same<T: Real>(input: &Tensor3<T>, bank: &KernelBank<T>) -> Result<Tensor3<T>> {
    if input.channels() != bank.in_channels {
        return Err(Error::arg(format!(
            "conv2d_same: input has {} channels, bank expects {}",
            input.channels(),
            bank.in_channels
        )));
    }
    let (h, w, _) = input.shape();
    let out = conv_planar(&input.to_planar(), h, w, bank, true);
    Ok(Tensor3::from_planar(h, w, bank.out_channels, out))
}

/// Adjoint of the bias-free [`conv2d_same`]: maps `out_channels` planes back
/// to `in_channels` planes.
pub fn conv2d_adjoint<T: Real>(input: &Tensor3<T>, bank: &KernelBank<T>) -> Result<Tensor3<T>> {
    if input.channels() != bank.out_channels {
        return Err(Error::arg(format!(
            "conv2d_adjoint: input has {} channels, bank produces {}",
            input.channels(),
            bank.out_channels
        )));
    }
    let adj = bank.adjoint_bank();
    let (h, w, _) = input.shape();
    let out = conv_planar(&input.to_planar(), h, w, &adj, false);
    Ok(Tensor3::from_planar(h, w, adj.out_channels, out))
}

/// Gradient of `dot(conv2d_same(input, bank), upstream)` with respect to the
/// bank's weights (and bias, when `with_bias`).
pub fn conv2d_weight_grad<T: Real>(
    input: &Tensor3<T>,
    upstream: &Tensor3<T>,
    kernel_size: usize,
    with_bias: bool,
) -> Result<KernelBank<T>> {
    if input.height() != upstream.height() || input.width() != upstream.width() {
        return Err(Error::arg(format!(
            "conv2d_weight_grad: spatial mismatch {:?} vs {:?}",
            input.shape(),
            upstream.shape()
        )));
    }
    let (h, w, cin) = input.shape();
    let cout = upstream.channels();
    let mut grad = KernelBank::zeros(cout, cin, kernel_size, with_bias);
    let plane = h * w;
    let xin = input.to_planar();
    let g = upstream.to_planar();
    let k = kernel_size;
    let pad = (k / 2) as isize;
    for o in 0..cout {
        let g_plane = &g[o * plane..(o + 1) * plane];
        for i in 0..cin {
            let in_plane = &xin[i * plane..(i + 1) * plane];
            for r in 0..k {
                let sy = r as isize - pad;
                let (y0, y1) = valid_range(h, sy);
                for c in 0..k {
                    let sx = c as isize - pad;
                    let (x0, x1) = valid_range(w, sx);
                    let mut acc = T::zero();
                    if x0 < x1 {
                        for y in y0..y1 {
                            let iy = (y as isize + sy) as usize;
                            let src_start = ((iy * w) as isize + x0 as isize + sx) as usize;
                            let src = &in_plane[src_start..src_start + (x1 - x0)];
                            let gr = &g_plane[y * w + x0..y * w + x1];
                            for (&a, &b) in gr.iter().zip(src) {
                                acc += a * b;
                            }
                        }
                    }
                    grad.weights[((o * cin + i) * k + r) * k + c] = acc;
                }
            }
        }
        if let Some(b) = grad.bias.as_mut() {
            b[o] = g_plane.iter().fold(T::zero(), |a, &v| a + v);
        }
    }
    Ok(grad)
}

/// Bank mapping `channels` planes to `2·channels` Sobel derivative planes:
/// for input channel `c`, output `2c` is the horizontal derivative and
/// `2c + 1` the vertical one.
pub fn sobel_bank<T: Real>(channels: usize) -> KernelBank<T> {
    const GX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut bank = KernelBank::zeros(2 * channels, channels, 3, false);
    for c in 0..channels {
        for r in 0..3 {
            for col in 0..3 {
                bank.weights[((2 * c * channels + c) * 3 + r) * 3 + col] = T::lit(GX[r][col]);
                bank.weights[(((2 * c + 1) * channels + c) * 3 + r) * 3 + col] = T::lit(GX[col][r]);
            }
        }
    }
    bank
}

/// Horizontal and vertical Sobel responses for each channel (H×W×2C).
pub fn sobel_gradients<T: Real>(image: &Tensor3<T>) -> Tensor3<T> {
    conv2d_same(image, &sobel_bank(image.channels())).expect("sobel bank matches image channels")
}
