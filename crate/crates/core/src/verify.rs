//! Built-in self-checks, run by `sinet verify`.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv2d_adjoint, conv2d_same, KernelBank};
use crate::csc::{estimate_lipschitz, CscProblem};
use crate::error::Result;
use crate::gradcheck::grad_check;
use crate::model::{ModelConfig, Variant};
use crate::scalar::softplus_inverse;
use crate::sfeb::{SfebParams, ThresholdSchedule};
use crate::tensor::Tensor3;

pub const ISTA_TOLERANCE: f64 = 1e-10;
pub const ADJOINT_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Worst error observed across cases.
    pub worst: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} cases, worst {:.3e} (tol {:.0e}), {:.2}s",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst,
            self.tolerance,
            self.seconds
        )
    }
}

fn uniform_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, lo: f64, hi: f64) -> Tensor3<f64> {
    Tensor3::from_fn(h, w, c, |_, _, _| rng.random_range(lo..hi))
}

fn uniform_bank(rng: &mut ChaCha8Rng, out: usize, inp: usize, k: usize) -> KernelBank<f64> {
    let w = (0..out * inp * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    KernelBank::new(out, inp, k, w, None).expect("valid bank shape")
}

/// A random single-channel CSC problem with step `1/L̂`.
pub fn random_csc_problem(seed: u64, size: usize, filters: usize, kernel: usize, iterations: usize) -> Result<CscProblem<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dict = uniform_bank(&mut rng, 1, filters, kernel);
    let obs = uniform_tensor(&mut rng, size, size, 1, 0.0, 1.0);
    let lambda = rng.random_range(0.01..0.2);
    let l = estimate_lipschitz(&dict, size, size);
    CscProblem::new(obs, dict, lambda, 1.0 / l, iterations)
}

/// Max-norm distance between a tied block's per-iteration codes and the
/// ISTA iterates on the same problem (6×6, K=2, 3×3, 4 iterations).
pub fn ista_equivalence_case(seed: u64) -> Result<f64> {
    let iters = 4;
    let problem = random_csc_problem(seed, 6, 2, 3, iters)?;
    let step = problem.step_size();
    let theta = problem.lambda() * step;
    let encoder = problem.dictionary().adjoint_bank().scaled(step);
    let schedule = ThresholdSchedule::new(0.0, softplus_inverse(theta));
    let block = SfebParams::from_banks(Vec::new(), vec![encoder], vec![problem.dictionary().clone()], schedule, iters, true)?;
    let thresholds = vec![schedule.theta_at(0); iters];
    let (_, trace) = block.forward_with_thresholds(problem.observation(), &thresholds)?;
    let ista = problem.solve_trace();
    let mut worst = 0.0f64;
    for (code, reference) in trace.codes().into_iter().zip(&ista) {
        worst = worst.max(code.max_abs_diff(reference)?);
    }
    Ok(worst)
}

/// Relative mismatch of `<W x, y>` and `<x, Wᵀ y>` for a random bank and
/// random tensors of random shape.
pub fn adjoint_identity_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(1..10);
    let w = rng.random_range(1..10);
    let cin = rng.random_range(1..5);
    let cout = rng.random_range(1..5);
    let k = 2 * rng.random_range(0..4) + 1;
    let bank = uniform_bank(&mut rng, cout, cin, k);
    let x = uniform_tensor(&mut rng, h, w, cin, -1.0, 1.0);
    let y = uniform_tensor(&mut rng, h, w, cout, -1.0, 1.0);
    let lhs = conv2d_same(&x, &bank)?.dot(&y)?;
    let rhs = x.dot(&conv2d_adjoint(&y, &bank)?)?;
    Ok((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE))
}

fn run_suite(
    name: &'static str,
    cases: usize,
    tolerance: f64,
    mut case: impl FnMut(u64) -> Result<f64>,
) -> Result<SuiteResult> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut passed = true;
    for i in 0..cases {
        let e = case(i as u64)?;
        passed &= e <= tolerance;
        worst = worst.max(e);
    }
    Ok(SuiteResult {
        name,
        passed,
        cases,
        worst,
        tolerance,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn ista_equivalence_suite() -> Result<SuiteResult> {
    run_suite("ista-equivalence", 10, ISTA_TOLERANCE, ista_equivalence_case)
}

pub fn adjoint_identity_suite() -> Result<SuiteResult> {
    run_suite("adjoint-identity", 100, ADJOINT_TOLERANCE, adjoint_identity_case)
}

/// Model configuration the gradient suite runs on.
pub fn grad_check_config() -> ModelConfig {
    ModelConfig::new(4, 3, 2, Variant::Full)
}

pub fn grad_check_suite() -> Result<SuiteResult> {
    let start = Instant::now();
    let cfg = grad_check_config();
    let mut worst = 0.0f64;
    let mut passed = true;
    let mut tolerance = 0.0;
    for seed in 0..5 {
        let r = grad_check(&cfg, seed)?;
        log::info!("{r}");
        passed &= r.passed;
        worst = worst.max(r.max_rel_error);
        tolerance = r.tolerance;
    }
    Ok(SuiteResult {
        name: "grad-check",
        passed,
        cases: 5,
        worst,
        tolerance,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_all() -> Result<Vec<SuiteResult>> {
    Ok(vec![ista_equivalence_suite()?, adjoint_identity_suite()?, grad_check_suite()?])
}
