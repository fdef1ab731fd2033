//! Sparse feature estimation block: `T` unrolled shrinkage iterations with
//! untied per-iteration convolutions and a softplus threshold schedule.
//!
//! Iteration `k` computes
//!
//! ```text
//! u^k = z^{k-1} − W_u^k(W_d^k(z^{k-1})) + W_in^k(s),    z^k = S_{θ^k}(u^k)
//! ```
//!
//! with `z^{-1} = 0`, so iteration 0 reduces to `z^0 = S_{θ^0}(W_in^0(s))`.
//! In tied mode every iteration reuses the index-0 `W_u`/`W_d` banks and
//! `W_in` aliases `W_u`, which is the shared-weight LCSC recursion.

use crate::conv::{conv2d_adjoint, conv2d_same, conv2d_weight_grad, KernelBank};
use crate::csc::shrink;
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Real};
use crate::tensor::Tensor3;

/// `θ(k) = softplus(w_θ·k + b_θ)` with slope `w_θ = −softplus(w_raw) < 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdSchedule<T> {
    pub w_raw: T,
    pub b_theta: T,
}

impl<T: Real> ThresholdSchedule<T> {
    pub fn new(w_raw: T, b_theta: T) -> Self {
        Self { w_raw, b_theta }
    }

    /// Effective (strictly negative) slope.
    pub fn slope(&self) -> T {
        -softplus(self.w_raw)
    }

    pub fn theta_at(&self, k: usize) -> T {
        softplus(self.slope() * T::from_usize_lossy(k) + self.b_theta)
    }

    /// `(∂θ(k)/∂w_raw, ∂θ(k)/∂b_θ)`
    pub fn theta_grad(&self, k: usize) -> (T, T) {
        let kk = T::from_usize_lossy(k);
        let s = sigmoid(self.slope() * kk + self.b_theta);
        (-s * kk * sigmoid(self.w_raw), s)
    }
}

pub fn theta_at<T: Real>(schedule: &ThresholdSchedule<T>, k: usize) -> T {
    schedule.theta_at(k)
}

/// Trainable state of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct SfebParams<T> {
    in_channels: usize,
    filters: usize,
    kernel_size: usize,
    iterations: usize,
    tied: bool,
    /// Untied: one per iteration. Tied: empty (aliases `w_u[0]`).
    pub(crate) w_in: Vec<KernelBank<T>>,
    pub(crate) w_u: Vec<KernelBank<T>>,
    pub(crate) w_d: Vec<KernelBank<T>>,
    pub schedule: ThresholdSchedule<T>,
}

impl<T: Real> SfebParams<T> {
    /// All-zero banks; `schedule` starts at `(0, 0)`.
    pub fn zeros(in_channels: usize, filters: usize, kernel_size: usize, iterations: usize, tied: bool) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::arg("a sparse feature block needs at least one iteration"));
        }
        if kernel_size.is_multiple_of(2) || filters == 0 || in_channels == 0 {
            return Err(Error::arg(format!(
                "invalid block shape: {in_channels} inputs, {filters} filters, kernel {kernel_size}"
            )));
        }
        let owned = if tied { 1 } else { iterations };
        let enc = || KernelBank::zeros(filters, in_channels, kernel_size, false);
        let dec = || KernelBank::zeros(in_channels, filters, kernel_size, false);
        Ok(Self {
            in_channels,
            filters,
            kernel_size,
            iterations,
            tied,
            w_in: if tied { Vec::new() } else { (0..owned).map(|_| enc()).collect() },
            w_u: (0..owned).map(|_| enc()).collect(),
            w_d: (0..owned).map(|_| dec()).collect(),
            schedule: ThresholdSchedule::new(T::zero(), T::zero()),
        })
    }

    /// Builds a block from explicit banks. For a tied block pass one `w_u`,
    /// one `w_d` and an empty `w_in`.
    pub fn from_banks(
        w_in: Vec<KernelBank<T>>,
        w_u: Vec<KernelBank<T>>,
        w_d: Vec<KernelBank<T>>,
        schedule: ThresholdSchedule<T>,
        iterations: usize,
        tied: bool,
    ) -> Result<Self> {
        let first = w_u
            .first()
            .ok_or_else(|| Error::arg("block needs at least one W_u bank"))?;
        let mut p = Self::zeros(
            first.in_channels(),
            first.out_channels(),
            first.kernel_size(),
            iterations,
            tied,
        )?;
        let check = |got: &[KernelBank<T>], want: &[KernelBank<T>], name: &str| -> Result<()> {
            if got.len() != want.len() {
                return Err(Error::arg(format!(
                    "{name}: expected {} banks, got {}",
                    want.len(),
                    got.len()
                )));
            }
            for (g, w) in got.iter().zip(want) {
                if g.out_channels() != w.out_channels()
                    || g.in_channels() != w.in_channels()
                    || g.kernel_size() != w.kernel_size()
                    || g.has_bias()
                {
                    return Err(Error::arg(format!("{name}: bank shape mismatch or unexpected bias")));
                }
            }
            Ok(())
        };
        check(&w_in, &p.w_in, "w_in")?;
        check(&w_u, &p.w_u, "w_u")?;
        check(&w_d, &p.w_d, "w_d")?;
        p.w_in = w_in;
        p.w_u = w_u;
        p.w_d = w_d;
        p.schedule = schedule;
        Ok(p)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn is_tied(&self) -> bool {
        self.tied
    }

    pub fn in_bank(&self, k: usize) -> &KernelBank<T> {
        if self.tied {
            &self.w_u[0]
        } else {
            &self.w_in[k]
        }
    }

    pub fn u_bank(&self, k: usize) -> &KernelBank<T> {
        &self.w_u[if self.tied { 0 } else { k }]
    }

    pub fn d_bank(&self, k: usize) -> &KernelBank<T> {
        &self.w_d[if self.tied { 0 } else { k }]
    }

    /// Owned banks in storage order: `(w_in, w_u, w_d)` per owned iteration.
    pub fn owned_banks(&self) -> impl Iterator<Item = (Option<&KernelBank<T>>, &KernelBank<T>, &KernelBank<T>)> {
        (0..self.w_u.len()).map(move |k| (self.w_in.get(k), &self.w_u[k], &self.w_d[k]))
    }

    pub(crate) fn banks_mut(&mut self) -> impl Iterator<Item = &mut KernelBank<T>> {
        self.w_in.iter_mut().chain(self.w_u.iter_mut()).chain(self.w_d.iter_mut())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_channels, self.filters, self.kernel_size, self.iterations, self.tied)
            .expect("shape already validated")
    }

    /// Every threshold of a forward pass, `θ^0 … θ^{T-1}`.
    pub fn thresholds(&self) -> Vec<T> {
        (0..self.iterations).map(|k| self.schedule.theta_at(k)).collect()
    }

    fn check_input(&self, channel: &Tensor3<T>) -> Result<()> {
        if channel.channels() != self.in_channels {
            return Err(Error::arg(format!(
                "sparse feature block expects {} input channel(s), got {}",
                self.in_channels,
                channel.channels()
            )));
        }
        Ok(())
    }

    /// Forward pass retaining the per-iteration trace needed by
    /// [`SfebParams::backward`].
    pub fn forward(&self, channel: &Tensor3<T>) -> Result<(Tensor3<T>, SfebTrace<T>)> {
        self.run(channel, &self.thresholds(), true)
            .map(|(z, t)| (z, t.expect("trace retained")))
    }

    /// Forward pass without retaining a trace.
    pub fn infer(&self, channel: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.run(channel, &self.thresholds(), false).map(|(z, _)| z)
    }

    /// Forward pass with the schedule replaced by explicit thresholds, one per
    /// iteration. Used by the oracle suites to pin `θ^k` to a constant.
    #[doc(hidden)]
    pub fn forward_with_thresholds(&self, channel: &Tensor3<T>, thresholds: &[T]) -> Result<(Tensor3<T>, SfebTrace<T>)> {
        if thresholds.len() != self.iterations {
            return Err(Error::arg(format!(
                "expected {} thresholds, got {}",
                self.iterations,
                thresholds.len()
            )));
        }
        if thresholds.iter().any(|t| !(*t >= T::zero())) {
            return Err(Error::arg("thresholds must be nonnegative"));
        }
        self.run(channel, thresholds, true)
            .map(|(z, t)| (z, t.expect("trace retained")))
    }

    fn run(&self, channel: &Tensor3<T>, thresholds: &[T], keep: bool) -> Result<(Tensor3<T>, Option<SfebTrace<T>>)> {
        self.check_input(channel)?;
        let mut records = Vec::with_capacity(if keep { self.iterations } else { 0 });
        // Tied blocks project the input once; W_in aliases W_u.
        let tied_proj = if self.tied {
            Some(conv2d_same(channel, &self.w_u[0])?)
        } else {
            None
        };
        let mut z: Option<Tensor3<T>> = None;
        for (k, &theta) in thresholds.iter().enumerate() {
            let mut pre = match &tied_proj {
                Some(p) => p.clone(),
                None => conv2d_same(channel, &self.w_in[k])?,
            };
            let mut decoded = None;
            if let Some(prev) = &z {
                let d = conv2d_same(prev, self.d_bank(k))?;
                let ud = conv2d_same(&d, self.u_bank(k))?;
                for ((p, &zp), &v) in pre.data_mut().iter_mut().zip(prev.data()).zip(ud.data()) {
                    *p = zp - v + *p;
                }
                decoded = Some(d);
            }
            let code = pre.map(|v| shrink(v, theta));
            if keep {
                records.push(IterationRecord {
                    pre,
                    code: code.clone(),
                    decoded,
                    theta,
                });
            }
            z = Some(code);
        }
        let z = z.expect("at least one iteration");
        Ok((
            z,
            keep.then(|| SfebTrace {
                records,
                in_shape: channel.shape(),
            }),
        ))
    }

    /// Reverse-mode gradients of a scalar loss whose gradient with respect to
    /// the final code is `upstream`. Returns `(parameter grads, input grad)`.
    ///
    /// The shrinkage derivative is 1 where `|u| > θ` and 0 otherwise;
    /// `∂S/∂θ = −sgn(u)` on the active set.
    pub fn backward(
        &self,
        channel: &Tensor3<T>,
        upstream: &Tensor3<T>,
        trace: &SfebTrace<T>,
    ) -> Result<(SfebParams<T>, Tensor3<T>)> {
        self.check_input(channel)?;
        if trace.records.len() != self.iterations || trace.in_shape != channel.shape() {
            return Err(Error::arg("trace does not belong to this block and input"));
        }
        let (h, w, _) = channel.shape();
        if upstream.shape() != (h, w, self.filters) {
            return Err(Error::arg(format!(
                "upstream gradient shape {:?}, expected {:?}",
                upstream.shape(),
                (h, w, self.filters)
            )));
        }
        let ks = self.kernel_size;
        let mut grads = self.zeros_like();
        let mut input_grad = channel.zeros_like();
        let mut tied_in_grad: Option<Tensor3<T>> = None;
        let mut g = upstream.clone();
        let mut dw_raw = T::zero();
        let mut db_theta = T::zero();

        for k in (0..self.iterations).rev() {
            let rec = &trace.records[k];
            let theta = rec.theta;
            let mut gu = g;
            let mut dtheta = T::zero();
            for (gv, &u) in gu.data_mut().iter_mut().zip(rec.pre.data()) {
                if u.abs() > theta {
                    dtheta -= u.signum() * *gv;
                } else {
                    *gv = T::zero();
                }
            }
            let (a, b) = self.schedule.theta_grad(k);
            dw_raw += dtheta * a;
            db_theta += dtheta * b;

            if self.tied {
                match tied_in_grad.as_mut() {
                    Some(acc) => acc.add_assign(&gu)?,
                    None => tied_in_grad = Some(gu.clone()),
                }
            } else {
                let gw = conv2d_weight_grad(channel, &gu, ks, false)?;
                accumulate(&mut grads.w_in[k], &gw);
                input_grad.add_assign(&conv2d_adjoint(&gu, &self.w_in[k])?)?;
            }

            g = if k > 0 {
                let prev = &trace.records[k - 1].code;
                let decoded = rec
                    .decoded
                    .as_ref()
                    .ok_or_else(|| Error::arg("trace record is missing its decoded term"))?;
                let slot = if self.tied { 0 } else { k };
                // pre = prev − U(D(prev)) + …
                let neg_gu = gu.scale(-T::one());
                let gw_u = conv2d_weight_grad(decoded, &neg_gu, ks, false)?;
                accumulate(&mut grads.w_u[slot], &gw_u);
                let gd = conv2d_adjoint(&neg_gu, self.u_bank(k))?;
                let gw_d = conv2d_weight_grad(prev, &gd, ks, false)?;
                accumulate(&mut grads.w_d[slot], &gw_d);
                let mut gprev = gu;
                gprev.add_assign(&conv2d_adjoint(&gd, self.d_bank(k))?)?;
                gprev
            } else {
                gu
            };
        }
        if let Some(acc) = tied_in_grad {
            let gw = conv2d_weight_grad(channel, &acc, ks, false)?;
            accumulate(&mut grads.w_u[0], &gw);
            input_grad.add_assign(&conv2d_adjoint(&acc, &self.w_u[0])?)?;
        }
        grads.schedule = ThresholdSchedule::new(dw_raw, db_theta);
        Ok((grads, input_grad))
    }

    pub fn cast<U: Real>(&self) -> SfebParams<U> {
        SfebParams {
            in_channels: self.in_channels,
            filters: self.filters,
            kernel_size: self.kernel_size,
            iterations: self.iterations,
            tied: self.tied,
            w_in: self.w_in.iter().map(KernelBank::cast).collect(),
            w_u: self.w_u.iter().map(KernelBank::cast).collect(),
            w_d: self.w_d.iter().map(KernelBank::cast).collect(),
            schedule: ThresholdSchedule::new(U::lit(self.schedule.w_raw.as_f64()), U::lit(self.schedule.b_theta.as_f64())),
        }
    }
}

pub(crate) fn accumulate<T: Real>(dst: &mut KernelBank<T>, src: &KernelBank<T>) {
    for (a, &b) in dst.weights_mut().iter_mut().zip(src.weights()) {
        *a += b;
    }
    if let (Some(a), Some(b)) = (dst.bias_mut(), src.bias()) {
        for (x, &y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// State of one unrolled iteration.
#[derive(Clone, Debug)]
pub struct IterationRecord<T> {
    /// Shrinkage input `u^k`.
    pub pre: Tensor3<T>,
    /// Shrinkage output `z^k`.
    pub code: Tensor3<T>,
    /// `W_d^k(z^{k-1})`; absent for iteration 0.
    pub decoded: Option<Tensor3<T>>,
    pub theta: T,
}

#[derive(Clone, Debug)]
pub struct SfebTrace<T> {
    pub records: Vec<IterationRecord<T>>,
    pub(crate) in_shape: (usize, usize, usize),
}

impl<T: Real> SfebTrace<T> {
    /// Per-iteration codes `z^0 … z^{T-1}`.
    pub fn codes(&self) -> Vec<&Tensor3<T>> {
        self.records.iter().map(|r| &r.code).collect()
    }

    /// Smallest distance `||u| − θ|` over every shrinkage input.
    pub fn kink_margin(&self) -> T {
        self.records
            .iter()
            .flat_map(|r| r.pre.data().iter().map(move |u| (u.abs() - r.theta).abs()))
            .fold(T::infinity(), |a, b| a.min(b))
    }

    /// Active set pattern (`|u| > θ`) across all iterations.
    pub fn active_pattern(&self) -> Vec<bool> {
        self.records
            .iter()
            .flat_map(|r| r.pre.data().iter().map(move |u| u.abs() > r.theta))
            .collect()
    }
}
