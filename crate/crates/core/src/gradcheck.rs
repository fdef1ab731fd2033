//! Central finite-difference verification of the network backward pass on
//! the full training loss.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::sobel_gradients;
use crate::error::Result;
use crate::loss::{loss_with_grad, total_loss, LossConfig};
use crate::model::{Branch, BranchTrace, ModelConfig, ParamFamily, SinetParams};
use crate::tensor::Tensor3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Square image side.
    pub size: usize,
    /// Parameters compared (at least this many, when the model has them).
    pub samples: usize,
    /// Always-included samples per parameter family.
    pub per_family: usize,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error; only guards `0 / 0`.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            size: 12,
            samples: 256,
            per_family: 8,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyReport {
    pub family: ParamFamily,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub seed: u64,
    pub variant: String,
    pub checked: usize,
    /// Candidates discarded because a ±step probe changed a kink pattern.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub families: Vec<FamilyReport>,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "grad check seed {} ({}): {} params, {} skipped, max rel err {:.3e} (tol {:.0e}) {}",
            self.seed,
            self.variant,
            self.checked,
            self.skipped,
            self.max_rel_error,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )?;
        for fam in &self.families {
            writeln!(f, "  {:<14} n={:<4} max rel err {:.3e}", fam.family.name(), fam.checked, fam.max_rel_error)?;
        }
        Ok(())
    }
}

/// Loss value plus every point where it is non-smooth, as a boolean
/// pattern: shrinkage active sets and the signs of the absolute-value
/// residuals.
fn evaluate(
    params: &SinetParams<f64>,
    source: &Tensor3<f64>,
    truth: &Tensor3<f64>,
    loss: &LossConfig,
) -> Result<(f64, Vec<bool>)> {
    let pass = params.forward(source)?;
    let mut sig = Vec::new();
    for t in &pass.traces {
        if let BranchTrace::Sparse(tr) = t {
            sig.extend(tr.active_pattern());
        }
    }
    let resid_sign = |a: &Tensor3<f64>, b: &Tensor3<f64>| -> Vec<bool> {
        a.data().iter().zip(b.data()).flat_map(|(x, y)| [x > y, x < y]).collect()
    };
    sig.extend(resid_sign(&pass.enhanced, truth));
    sig.extend(resid_sign(&sobel_gradients(&pass.enhanced), &sobel_gradients(truth)));
    Ok((total_loss(&pass.enhanced, truth, loss)?, sig))
}

/// Writes `value` into parameter `(slice, elem)`.
fn set_param(params: &mut SinetParams<f64>, slice: usize, elem: usize, value: f64) {
    params.param_slices_mut()[slice].1[elem] = value;
}

/// Random model (initialization plus perturbed schedules and biases) and a
/// random image pair, all derived from `seed`.
pub fn random_instance(config: ModelConfig, size: usize, seed: u64) -> Result<(SinetParams<f64>, Tensor3<f64>, Tensor3<f64>)> {
    let mut params = SinetParams::<f64>::init(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6A09_E667_F3BC_C908);
    for branch in &mut params.branches {
        if let Branch::Sparse(s) = branch {
            s.schedule.w_raw += rng.random_range(-0.5..0.5);
            s.schedule.b_theta += rng.random_range(-0.5..0.5);
        }
    }
    for (fam, slice) in params.param_slices_mut() {
        if matches!(fam, ParamFamily::ReconBias | ParamFamily::PlainBias) {
            slice.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let source = Tensor3::from_fn(size, size, 3, |_, _, _| rng.random_range(0.0..1.0));
    let truth = Tensor3::from_fn(size, size, 3, |_, _, _| rng.random_range(0.0..1.0));
    Ok((params, source, truth))
}

pub fn grad_check(config: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    grad_check_with(config, seed, &GradCheckConfig::default(), &LossConfig::default())
}

pub fn grad_check_with(
    config: &ModelConfig,
    seed: u64,
    check: &GradCheckConfig,
    loss: &LossConfig,
) -> Result<GradCheckReport> {
    config.validate()?;
    let (params, source, truth) = random_instance(*config, check.size, seed)?;
    let pass = params.forward(&source)?;
    let (_, upstream) = loss_with_grad(&pass.enhanced, &truth, loss)?;
    let grads = params.backward(&source, &upstream, &pass)?;
    let analytic: Vec<Vec<f64>> = grads.param_slices().into_iter().map(|(_, s)| s.to_vec()).collect();
    let (_, base_sig) = evaluate(&params, &source, &truth, loss)?;

    // Candidate pool grouped by family, each shuffled.
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9));
    let mut pools: BTreeMap<ParamFamily, Vec<(usize, usize)>> = BTreeMap::new();
    for (si, (fam, slice)) in params.param_slices().into_iter().enumerate() {
        let pool = pools.entry(fam).or_default();
        pool.extend((0..slice.len()).map(|e| (si, e)));
    }
    for pool in pools.values_mut() {
        pool.shuffle(&mut rng);
    }

    let mut probe = params.clone();
    let mut family_err: BTreeMap<ParamFamily, (usize, f64)> = BTreeMap::new();
    let mut skipped = 0;
    let mut checked = 0;
    let mut max_rel = 0.0f64;

    let mut try_one = |si: usize, ei: usize, fam: ParamFamily, probe: &mut SinetParams<f64>| -> Result<bool> {
        let orig = params.param_slices()[si].1[ei];
        set_param(probe, si, ei, orig + check.step);
        let (lp, sig_p) = evaluate(probe, &source, &truth, loss)?;
        set_param(probe, si, ei, orig - check.step);
        let (lm, sig_m) = evaluate(probe, &source, &truth, loss)?;
        set_param(probe, si, ei, orig);
        if sig_p != base_sig || sig_m != base_sig {
            return Ok(false);
        }
        let numeric = (lp - lm) / (2.0 * check.step);
        let a = analytic[si][ei];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(check.floor);
        let e = family_err.entry(fam).or_insert((0, 0.0));
        e.0 += 1;
        e.1 = e.1.max(rel);
        max_rel = max_rel.max(rel);
        Ok(true)
    };

    // Guaranteed coverage of every family first, resampling on kinks.
    let mut leftovers = Vec::new();
    for (&fam, pool) in &pools {
        let mut taken = 0;
        let mut it = pool.iter();
        for &(si, ei) in it.by_ref() {
            if taken == check.per_family {
                leftovers.push((fam, si, ei));
                break;
            }
            if try_one(si, ei, fam, &mut probe)? {
                taken += 1;
                checked += 1;
            } else {
                skipped += 1;
            }
        }
        leftovers.extend(it.map(|&(si, ei)| (fam, si, ei)));
    }
    leftovers.shuffle(&mut rng);
    for (fam, si, ei) in leftovers {
        if checked >= check.samples {
            break;
        }
        if try_one(si, ei, fam, &mut probe)? {
            checked += 1;
        } else {
            skipped += 1;
        }
    }

    let families: Vec<FamilyReport> = pools
        .keys()
        .map(|&fam| {
            let (n, e) = family_err.get(&fam).copied().unwrap_or((0, f64::NAN));
            FamilyReport {
                family: fam,
                checked: n,
                max_rel_error: e,
            }
        })
        .collect();
    let passed = max_rel < check.tolerance && families.iter().all(|f| f.checked > 0);
    Ok(GradCheckReport {
        seed,
        variant: config.variant.name().to_string(),
        checked,
        skipped,
        max_rel_error: max_rel,
        tolerance: check.tolerance,
        families,
        passed,
    })
}
