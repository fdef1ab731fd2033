//! The full network: channel split, one sparse feature block per colour
//! channel, a reconstruction convolution per channel, and concatenation.
//!
//! Ablation variants swap the per-channel blocks for a plain convolution
//! stack (`Ds1PlainConvs`), tie the block weights (`Ds2TiedLcsc`) or run a
//! single block over the whole image (`Ds3SingleBranch`).

use std::fmt;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::conv::{conv2d_adjoint, conv2d_same, conv2d_weight_grad, KernelBank};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sfeb::{accumulate, SfebParams, SfebTrace, ThresholdSchedule};
use crate::tensor::Tensor3;

pub const IMAGE_CHANNELS: usize = 3;
/// Layers in the plain-convolution ablation branch.
pub const PLAIN_LAYERS: usize = 4;

pub const INIT_W_RAW: f64 = 0.0;
pub const INIT_B_THETA: f64 = -2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Three untied sparse feature blocks (the proposed network, also "DS4").
    Full,
    Ds1PlainConvs,
    Ds2TiedLcsc,
    Ds3SingleBranch,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::Ds1PlainConvs,
        Variant::Ds2TiedLcsc,
        Variant::Ds3SingleBranch,
    ];

    /// Checkpoint header code.
    pub fn code(self) -> u32 {
        match self {
            Variant::Full => 0,
            Variant::Ds1PlainConvs => 1,
            Variant::Ds2TiedLcsc => 2,
            Variant::Ds3SingleBranch => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Ds1PlainConvs => "ds1_plain_convs",
            Variant::Ds2TiedLcsc => "ds2_tied_lcsc",
            Variant::Ds3SingleBranch => "ds3_single_branch",
        }
    }

    pub fn branch_count(self) -> usize {
        match self {
            Variant::Ds3SingleBranch => 1,
            _ => IMAGE_CHANNELS,
        }
    }

    /// Channels each branch consumes and reconstructs.
    pub fn branch_channels(self) -> usize {
        match self {
            Variant::Ds3SingleBranch => IMAGE_CHANNELS,
            _ => 1,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" | "ds4" => Ok(Variant::Full),
            "ds1" | "ds1_plain_convs" => Ok(Variant::Ds1PlainConvs),
            "ds2" | "ds2_tied_lcsc" => Ok(Variant::Ds2TiedLcsc),
            "ds3" | "ds3_single_branch" => Ok(Variant::Ds3SingleBranch),
            other => Err(Error::arg(format!("unknown model variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub k_filters: usize,
    pub kernel_size: usize,
    pub iterations: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k_filters: 16,
            kernel_size: 11,
            iterations: 4,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn new(k_filters: usize, kernel_size: usize, iterations: usize, variant: Variant) -> Self {
        Self {
            k_filters,
            kernel_size,
            iterations,
            variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_filters == 0 {
            return Err(Error::arg("k_filters must be at least 1"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::arg(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        if self.iterations == 0 {
            return Err(Error::arg("iterations must be at least 1"));
        }
        Ok(())
    }
}

/// Ablation branch: four biased convolutions `c→K→K→K→K` with identity
/// activations in between.
#[derive(Clone, Debug, PartialEq)]
pub struct PlainStack<T> {
    pub layers: Vec<KernelBank<T>>,
}

impl<T: Real> PlainStack<T> {
    pub fn zeros(in_channels: usize, filters: usize, kernel_size: usize) -> Self {
        let layers = (0..PLAIN_LAYERS)
            .map(|l| KernelBank::zeros(filters, if l == 0 { in_channels } else { filters }, kernel_size, true))
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(KernelBank::zeros_like).collect(),
        }
    }

    /// Returns every layer output; the last one is the branch code.
    pub fn forward(&self, input: &Tensor3<T>) -> Result<Vec<Tensor3<T>>> {
        let mut outs: Vec<Tensor3<T>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = outs.last().unwrap_or(input);
            let y = conv2d_same(x, layer)?;
            outs.push(y);
        }
        Ok(outs)
    }

    pub fn backward(&self, input: &Tensor3<T>, upstream: &Tensor3<T>, outs: &[Tensor3<T>]) -> Result<PlainStack<T>> {
        if outs.len() != self.layers.len() {
            return Err(Error::arg("plain stack trace has the wrong number of layers"));
        }
        let mut grads = self.zeros_like();
        let mut g = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            let x = if l == 0 { input } else { &outs[l - 1] };
            grads.layers[l] = conv2d_weight_grad(x, &g, self.layers[l].kernel_size(), true)?;
            if l > 0 {
                g = conv2d_adjoint(&g, &self.layers[l])?;
            }
        }
        Ok(grads)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Branch<T> {
    Sparse(SfebParams<T>),
    Plain(PlainStack<T>),
}

impl<T: Real> Branch<T> {
    fn zeros_like(&self) -> Self {
        match self {
            Branch::Sparse(p) => Branch::Sparse(p.zeros_like()),
            Branch::Plain(p) => Branch::Plain(p.zeros_like()),
        }
    }

    fn add_from(&mut self, other: &Self) {
        match (self, other) {
            (Branch::Sparse(a), Branch::Sparse(b)) => {
                for (x, y) in a.banks_mut().zip(b.w_in.iter().chain(&b.w_u).chain(&b.w_d)) {
                    accumulate(x, y);
                }
                a.schedule.w_raw += b.schedule.w_raw;
                a.schedule.b_theta += b.schedule.b_theta;
            }
            (Branch::Plain(a), Branch::Plain(b)) => {
                for (x, y) in a.layers.iter_mut().zip(&b.layers) {
                    accumulate(x, y);
                }
            }
            _ => unreachable!("branch kinds always agree within one model"),
        }
    }
}

#[derive(Clone, Debug)]
pub enum BranchTrace<T> {
    Sparse(SfebTrace<T>),
    /// Output of every plain layer.
    Plain(Vec<Tensor3<T>>),
}

impl<T: Real> BranchTrace<T> {
    /// Intermediate feature maps, one per iteration (or layer).
    pub fn stages(&self) -> Vec<&Tensor3<T>> {
        match self {
            BranchTrace::Sparse(t) => t.codes(),
            BranchTrace::Plain(outs) => outs.iter().collect(),
        }
    }
}

/// Everything a forward pass produces.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    pub enhanced: Tensor3<T>,
    /// Final code of each branch.
    pub codes: Vec<Tensor3<T>>,
    pub traces: Vec<BranchTrace<T>>,
}

/// Tags for every trainable tensor, used by the optimizer and the gradient
/// checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamFamily {
    InputBank,
    UpdateBank,
    DecodeBank,
    ThresholdSlope,
    ThresholdIntercept,
    PlainWeight,
    PlainBias,
    ReconWeight,
    ReconBias,
}

impl ParamFamily {
    pub fn name(self) -> &'static str {
        match self {
            ParamFamily::InputBank => "w_in",
            ParamFamily::UpdateBank => "w_u",
            ParamFamily::DecodeBank => "w_d",
            ParamFamily::ThresholdSlope => "w_raw",
            ParamFamily::ThresholdIntercept => "b_theta",
            ParamFamily::PlainWeight => "plain_weight",
            ParamFamily::PlainBias => "plain_bias",
            ParamFamily::ReconWeight => "recon_weight",
            ParamFamily::ReconBias => "recon_bias",
        }
    }
}

impl fmt::Display for ParamFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Complete trainable state of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct SinetParams<T> {
    config: ModelConfig,
    pub branches: Vec<Branch<T>>,
    /// Reconstruction banks `G_i` (K→1 per channel, or K→3 for the single
    /// branch variant), each with a bias.
    pub recon: Vec<KernelBank<T>>,
}

impl<T: Real> SinetParams<T> {
    /// All-zero parameters with the layout `config` implies.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config.variant.branch_channels();
        let k = config.k_filters;
        let ks = config.kernel_size;
        let branches = (0..config.variant.branch_count())
            .map(|_| -> Result<Branch<T>> {
                Ok(match config.variant {
                    Variant::Ds1PlainConvs => Branch::Plain(PlainStack::zeros(c, k, ks)),
                    Variant::Ds2TiedLcsc => Branch::Sparse(SfebParams::zeros(c, k, ks, config.iterations, true)?),
                    Variant::Full | Variant::Ds3SingleBranch => {
                        Branch::Sparse(SfebParams::zeros(c, k, ks, config.iterations, false)?)
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let recon = (0..config.variant.branch_count())
            .map(|_| KernelBank::zeros(c, k, ks, true))
            .collect();
        Ok(Self {
            config,
            branches,
            recon,
        })
    }

    /// Seeded initialization: weights uniform in `±sqrt(1/(c_in·k²))`,
    /// biases zero, `w_raw = 0` and `b_θ = −2`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |bank: &mut KernelBank<T>| {
            let fan_in = (bank.in_channels() * bank.kernel_size() * bank.kernel_size()) as f64;
            let b = (1.0 / fan_in).sqrt();
            let dist = Uniform::new_inclusive(-b, b).expect("finite bound");
            for w in bank.weights_mut() {
                *w = T::lit(dist.sample(&mut rng));
            }
        };
        for branch in &mut p.branches {
            match branch {
                Branch::Sparse(s) => {
                    s.banks_mut().for_each(&mut fill);
                    s.schedule = ThresholdSchedule::new(T::lit(INIT_W_RAW), T::lit(INIT_B_THETA));
                }
                Branch::Plain(s) => s.layers.iter_mut().for_each(&mut fill),
            }
        }
        p.recon.iter_mut().for_each(&mut fill);
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            branches: self.branches.iter().map(Branch::zeros_like).collect(),
            recon: self.recon.iter().map(KernelBank::zeros_like).collect(),
        }
    }

    fn check_image(&self, image: &Tensor3<T>) -> Result<()> {
        if image.channels() != IMAGE_CHANNELS {
            return Err(Error::arg(format!(
                "network expects a {IMAGE_CHANNELS}-channel image, got {}",
                image.channels()
            )));
        }
        Ok(())
    }

    fn branch_inputs(&self, image: &Tensor3<T>) -> Result<Vec<Tensor3<T>>> {
        match self.config.variant {
            Variant::Ds3SingleBranch => Ok(vec![image.clone()]),
            _ => split_channels(image).map(Vec::from),
        }
    }

    fn assemble(&self, outputs: Vec<Tensor3<T>>) -> Result<Tensor3<T>> {
        match self.config.variant {
            Variant::Ds3SingleBranch => Ok(outputs.into_iter().next().expect("one branch")),
            _ => concat_channels(&outputs[0], &outputs[1], &outputs[2]),
        }
    }

    /// Training forward pass; keeps every trace.
    pub fn forward(&self, image: &Tensor3<T>) -> Result<ForwardPass<T>> {
        self.check_image(image)?;
        let inputs = self.branch_inputs(image)?;
        let per_branch = self
            .branches
            .par_iter()
            .zip(self.recon.par_iter())
            .zip(inputs.par_iter())
            .map(|((branch, g), input)| -> Result<_> {
                let (code, trace) = match branch {
                    Branch::Sparse(s) => {
                        let (z, t) = s.forward(input)?;
                        (z, BranchTrace::Sparse(t))
                    }
                    Branch::Plain(s) => {
                        let outs = s.forward(input)?;
                        (outs.last().expect("four layers").clone(), BranchTrace::Plain(outs))
                    }
                };
                let out = conv2d_same(&code, g)?;
                Ok((out, code, trace))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut outputs = Vec::with_capacity(per_branch.len());
        let mut codes = Vec::with_capacity(per_branch.len());
        let mut traces = Vec::with_capacity(per_branch.len());
        for (o, c, t) in per_branch {
            outputs.push(o);
            codes.push(c);
            traces.push(t);
        }
        Ok(ForwardPass {
            enhanced: self.assemble(outputs)?,
            codes,
            traces,
        })
    }

    /// Inference-only forward pass (no traces retained). Output is not clamped.
    pub fn infer(&self, image: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check_image(image)?;
        let inputs = self.branch_inputs(image)?;
        let outputs = self
            .branches
            .par_iter()
            .zip(self.recon.par_iter())
            .zip(inputs.par_iter())
            .map(|((branch, g), input)| -> Result<Tensor3<T>> {
                let code = match branch {
                    Branch::Sparse(s) => s.infer(input)?,
                    Branch::Plain(s) => s.forward(input)?.pop().expect("four layers"),
                };
                conv2d_same(&code, g)
            })
            .collect::<Result<Vec<_>>>()?;
        self.assemble(outputs)
    }

    /// Gradients of a scalar loss with `∂loss/∂enhanced = upstream`.
    pub fn backward(&self, image: &Tensor3<T>, upstream: &Tensor3<T>, pass: &ForwardPass<T>) -> Result<SinetParams<T>> {
        self.check_image(image)?;
        image.check_same_shape(upstream, "network backward")?;
        if pass.traces.len() != self.branches.len() || pass.codes.len() != self.branches.len() {
            return Err(Error::arg("forward pass does not match this model"));
        }
        let inputs = self.branch_inputs(image)?;
        let upstreams = self.branch_inputs(upstream)?;
        let ks = self.config.kernel_size;
        let results = (0..self.branches.len())
            .into_par_iter()
            .map(|i| -> Result<(Branch<T>, KernelBank<T>)> {
                let code = &pass.codes[i];
                let g_recon = conv2d_weight_grad(code, &upstreams[i], ks, true)?;
                let g_code = conv2d_adjoint(&upstreams[i], &self.recon[i])?;
                let g_branch = match (&self.branches[i], &pass.traces[i]) {
                    (Branch::Sparse(s), BranchTrace::Sparse(t)) => Branch::Sparse(s.backward(&inputs[i], &g_code, t)?.0),
                    (Branch::Plain(s), BranchTrace::Plain(outs)) => Branch::Plain(s.backward(&inputs[i], &g_code, outs)?),
                    _ => return Err(Error::arg("trace kind does not match branch kind")),
                };
                Ok((g_branch, g_recon))
            })
            .collect::<Result<Vec<_>>>()?;
        let (branches, recon) = results.into_iter().unzip();
        Ok(SinetParams {
            config: self.config,
            branches,
            recon,
        })
    }

    /// Every trainable tensor in storage order (the checkpoint order).
    pub fn param_slices(&self) -> Vec<(ParamFamily, &[T])> {
        let mut out: Vec<(ParamFamily, &[T])> = Vec::new();
        for branch in &self.branches {
            match branch {
                Branch::Sparse(s) => {
                    for (win, wu, wd) in s.owned_banks() {
                        if let Some(win) = win {
                            out.push((ParamFamily::InputBank, win.weights()));
                        }
                        out.push((ParamFamily::UpdateBank, wu.weights()));
                        out.push((ParamFamily::DecodeBank, wd.weights()));
                    }
                    out.push((ParamFamily::ThresholdSlope, std::slice::from_ref(&s.schedule.w_raw)));
                    out.push((ParamFamily::ThresholdIntercept, std::slice::from_ref(&s.schedule.b_theta)));
                }
                Branch::Plain(s) => {
                    for l in &s.layers {
                        out.push((ParamFamily::PlainWeight, l.weights()));
                        out.push((ParamFamily::PlainBias, l.bias().expect("plain layers carry a bias")));
                    }
                }
            }
        }
        for g in &self.recon {
            out.push((ParamFamily::ReconWeight, g.weights()));
            out.push((ParamFamily::ReconBias, g.bias().expect("reconstruction carries a bias")));
        }
        out
    }

    /// Mutable counterpart of [`SinetParams::param_slices`], same order.
    pub fn param_slices_mut(&mut self) -> Vec<(ParamFamily, &mut [T])> {
        let mut out: Vec<(ParamFamily, &mut [T])> = Vec::new();
        for branch in &mut self.branches {
            match branch {
                Branch::Sparse(s) => {
                    let owned = s.w_u.len();
                    let mut win = s.w_in.iter_mut();
                    let mut wu = s.w_u.iter_mut();
                    let mut wd = s.w_d.iter_mut();
                    for _ in 0..owned {
                        if let Some(b) = win.next() {
                            out.push((ParamFamily::InputBank, b.weights_mut()));
                        }
                        out.push((ParamFamily::UpdateBank, wu.next().expect("owned").weights_mut()));
                        out.push((ParamFamily::DecodeBank, wd.next().expect("owned").weights_mut()));
                    }
                    out.push((ParamFamily::ThresholdSlope, std::slice::from_mut(&mut s.schedule.w_raw)));
                    out.push((ParamFamily::ThresholdIntercept, std::slice::from_mut(&mut s.schedule.b_theta)));
                }
                Branch::Plain(s) => {
                    for l in &mut s.layers {
                        let (w, b) = split_bank_mut(l);
                        out.push((ParamFamily::PlainWeight, w));
                        out.push((ParamFamily::PlainBias, b));
                    }
                }
            }
        }
        for g in &mut self.recon {
            let (w, b) = split_bank_mut(g);
            out.push((ParamFamily::ReconWeight, w));
            out.push((ParamFamily::ReconBias, b));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|(_, s)| s.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &SinetParams<T>) -> Result<()> {
        if self.config != other.config {
            return Err(Error::arg("parameter sets have different configurations"));
        }
        for (a, b) in self.branches.iter_mut().zip(&other.branches) {
            a.add_from(b);
        }
        for (a, b) in self.recon.iter_mut().zip(&other.recon) {
            accumulate(a, b);
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: T) {
        for (_, slice) in self.param_slices_mut() {
            slice.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn cast<U: Real>(&self) -> SinetParams<U> {
        SinetParams {
            config: self.config,
            branches: self
                .branches
                .iter()
                .map(|b| match b {
                    Branch::Sparse(s) => Branch::Sparse(s.cast()),
                    Branch::Plain(s) => Branch::Plain(PlainStack {
                        layers: s.layers.iter().map(KernelBank::cast).collect(),
                    }),
                })
                .collect(),
            recon: self.recon.iter().map(KernelBank::cast).collect(),
        }
    }
}

fn split_bank_mut<T: Real>(bank: &mut KernelBank<T>) -> (&mut [T], &mut [T]) {
    let (w, b) = bank.weights_and_bias_mut();
    (w, b.expect("bank carries a bias"))
}

pub fn init_params<T: Real>(config: ModelConfig, seed: u64) -> Result<SinetParams<T>> {
    SinetParams::init(config, seed)
}

pub fn split_channels<T: Real>(image: &Tensor3<T>) -> Result<[Tensor3<T>; 3]> {
    if image.channels() != IMAGE_CHANNELS {
        return Err(Error::arg(format!(
            "split_channels expects 3 channels, got {}",
            image.channels()
        )));
    }
    Ok([image.channel(0)?, image.channel(1)?, image.channel(2)?])
}

pub fn concat_channels<T: Real>(a: &Tensor3<T>, b: &Tensor3<T>, c: &Tensor3<T>) -> Result<Tensor3<T>> {
    for t in [a, b, c] {
        if t.channels() != 1 || t.height() != a.height() || t.width() != a.width() {
            return Err(Error::arg(format!(
                "concat_channels needs three equal-size single-channel planes, got {:?}, {:?}, {:?}",
                a.shape(),
                b.shape(),
                c.shape()
            )));
        }
    }
    let mut data = Vec::with_capacity(a.len() * 3);
    for ((&x, &y), &z) in a.data().iter().zip(b.data()).zip(c.data()) {
        data.extend_from_slice(&[x, y, z]);
    }
    Tensor3::new(a.height(), a.width(), 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig::new(2, 3, 2, variant)
    }

    #[test]
    fn defaults() {
        let c = ModelConfig::default();
        assert_eq!((c.k_filters, c.kernel_size, c.iterations, c.variant), (16, 11, 4, Variant::Full));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(0, 3, 2, Variant::Full).validate().is_err());
        assert!(ModelConfig::new(2, 4, 2, Variant::Full).validate().is_err());
        assert!(ModelConfig::new(2, 3, 0, Variant::Full).validate().is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_code(v.code()), Some(v));
        }
        assert_eq!("DS4".parse::<Variant>().unwrap(), Variant::Full);
        assert!("ds5".parse::<Variant>().is_err());
    }

    #[test]
    fn init_ranges_and_schedule() {
        let cfg = ModelConfig::default();
        let p = SinetParams::<f32>::init(cfg, 7).unwrap();
        for branch in &p.branches {
            let Branch::Sparse(s) = branch else { panic!() };
            assert_eq!(s.schedule.w_raw, 0.0);
            assert_eq!(s.schedule.b_theta, -2.0);
            for (win, wu, wd) in s.owned_banks() {
                let b1 = (1.0f32 / 121.0).sqrt();
                let b16 = (1.0f32 / (16.0 * 121.0)).sqrt();
                assert!(win.unwrap().weights().iter().all(|w| w.abs() <= b1));
                assert!(wu.weights().iter().all(|w| w.abs() <= b1));
                assert!(wd.weights().iter().all(|w| w.abs() <= b16));
            }
        }
        assert!(p.recon.iter().all(|g| g.bias().unwrap().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_is_deterministic() {
        let a = SinetParams::<f64>::init(tiny(Variant::Full), 3).unwrap();
        let b = SinetParams::<f64>::init(tiny(Variant::Full), 3).unwrap();
        let c = SinetParams::<f64>::init(tiny(Variant::Full), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn slices_cover_all_params() {
        for v in Variant::ALL {
            let mut p = SinetParams::<f64>::init(tiny(v), 1).unwrap();
            let n = p.num_params();
            let m: usize = p.param_slices_mut().iter().map(|(_, s)| s.len()).sum();
            assert_eq!(n, m);
        }
        let p = SinetParams::<f64>::zeros(tiny(Variant::Full)).unwrap();
        // per branch: 2 iterations × 3 banks × 18 weights + 2 schedule scalars; G: 18 + 1
        assert_eq!(p.num_params(), 3 * (2 * 3 * 18 + 2) + 3 * 19);
        let p = SinetParams::<f64>::zeros(tiny(Variant::Ds2TiedLcsc)).unwrap();
        assert_eq!(p.num_params(), 3 * (2 * 18 + 2) + 3 * 19);
    }

    #[test]
    fn split_rejects_wrong_channels() {
        assert!(split_channels(&Tensor3::<f64>::zeros(2, 2, 2)).is_err());
        let a = Tensor3::<f64>::zeros(2, 2, 1);
        let b = Tensor3::<f64>::zeros(2, 3, 1);
        assert!(concat_channels(&a, &a, &b).is_err());
    }

    #[test]
    fn forward_rejects_grayscale() {
        let p = SinetParams::<f64>::init(tiny(Variant::Full), 1).unwrap();
        assert!(p.forward(&Tensor3::zeros(5, 5, 1)).is_err());
    }

    #[test]
    fn infer_matches_forward() {
        for v in Variant::ALL {
            let p = SinetParams::<f64>::init(tiny(v), 2).unwrap();
            let img = Tensor3::from_fn(6, 5, 3, |y, x, c| ((y * 5 + x) * 3 + c) as f64 / 90.0);
            assert_eq!(p.forward(&img).unwrap().enhanced, p.infer(&img).unwrap());
        }
    }
}
