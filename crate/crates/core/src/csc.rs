//! ℓ1-regularized convolutional sparse coding: the soft-thresholding
//! proximal operator, the objective, and a plain ISTA solver used as the
//! reference for the unrolled blocks.
//!
//! The objective uses unreduced norms,
//! `½‖s − D(z)‖₂² + λ‖z‖₁`, so the ISTA threshold is `λ·step`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv2d_adjoint, conv2d_same, KernelBank};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor3;

const POWER_ITERATIONS: usize = 50;
const POWER_SEED: u64 = 0x5EED_C5C0;

/// `sgn(x)·max(|x| − θ, 0)` for one value.
#[inline]
pub fn shrink<T: Real>(x: T, theta: T) -> T {
    if x > theta {
        x - theta
    } else if x < -theta {
        x + theta
    } else {
        T::zero()
    }
}

pub fn soft_threshold<T: Real>(x: &Tensor3<T>, theta: T) -> Result<Tensor3<T>> {
    if !(theta >= T::zero()) {
        return Err(Error::arg(format!("threshold must be nonnegative, got {theta}")));
    }
    Ok(x.map(|v| shrink(v, theta)))
}

/// One single-channel CSC instance with an explicit ISTA step.
#[derive(Clone, Debug)]
pub struct CscProblem<T> {
    observation: Tensor3<T>,
    dictionary: KernelBank<T>,
    lambda: T,
    step_size: T,
    iterations: usize,
}

impl<T: Real> CscProblem<T> {
    pub fn new(
        observation: Tensor3<T>,
        dictionary: KernelBank<T>,
        lambda: T,
        step_size: T,
        iterations: usize,
    ) -> Result<Self> {
        if observation.channels() != 1 {
            return Err(Error::arg("CSC observation must be a single-channel image"));
        }
        if dictionary.out_channels() != 1 || dictionary.has_bias() {
            return Err(Error::arg("CSC dictionary must be a bias-free K→1 bank"));
        }
        if !(lambda >= T::zero()) {
            return Err(Error::arg(format!("lambda must be nonnegative, got {lambda}")));
        }
        if !(step_size > T::zero()) {
            return Err(Error::arg(format!("step size must be positive, got {step_size}")));
        }
        Ok(Self {
            observation,
            dictionary,
            lambda,
            step_size,
            iterations,
        })
    }

    pub fn observation(&self) -> &Tensor3<T> {
        &self.observation
    }

    pub fn dictionary(&self) -> &KernelBank<T> {
        &self.dictionary
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn step_size(&self) -> T {
        self.step_size
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Number of code maps K.
    pub fn filters(&self) -> usize {
        self.dictionary.in_channels()
    }

    pub fn zero_code(&self) -> Tensor3<T> {
        Tensor3::zeros(self.observation.height(), self.observation.width(), self.filters())
    }

    fn check_code(&self, z: &Tensor3<T>) -> Result<()> {
        let (h, w, _) = self.observation.shape();
        if z.shape() != (h, w, self.filters()) {
            return Err(Error::arg(format!(
                "code shape {:?} does not match problem {:?}",
                z.shape(),
                (h, w, self.filters())
            )));
        }
        Ok(())
    }

    pub fn objective(&self, z: &Tensor3<T>) -> Result<T> {
        self.check_code(z)?;
        let residual = self.observation.sub(&conv2d_same(z, &self.dictionary)?)?;
        Ok(T::lit(0.5) * residual.sq_sum() + self.lambda * z.abs_sum())
    }

    /// `S_{λ·step}(z − step·Dᵀ(D(z) − s))`
    pub fn ista_step(&self, z: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check_code(z)?;
        let residual = conv2d_same(z, &self.dictionary)?.sub(&self.observation)?;
        let grad = conv2d_adjoint(&residual, &self.dictionary)?;
        let mut next = z.clone();
        next.axpy(-self.step_size, &grad)?;
        soft_threshold(&next, self.lambda * self.step_size)
    }

    /// Final code after `iterations` ISTA steps from `z = 0`.
    pub fn solve(&self) -> Tensor3<T> {
        let mut z = self.zero_code();
        for _ in 0..self.iterations {
            z = self.ista_step(&z).expect("shapes validated at construction");
        }
        z
    }

    /// Iterates `z¹ … zⁿ` (the zero start is not included).
    pub fn solve_trace(&self) -> Vec<Tensor3<T>> {
        let mut z = self.zero_code();
        let mut trace = Vec::with_capacity(self.iterations);
        for _ in 0..self.iterations {
            z = self.ista_step(&z).expect("shapes validated at construction");
            trace.push(z.clone());
        }
        trace
    }
}

pub fn csc_objective<T: Real>(problem: &CscProblem<T>, z: &Tensor3<T>) -> Result<T> {
    problem.objective(z)
}

pub fn ista_solve<T: Real>(problem: &CscProblem<T>) -> Tensor3<T> {
    problem.solve()
}

/// Power-iteration estimate of the largest eigenvalue of `DᵀD` on an
/// `height × width` grid. Deterministic: the start vector uses a fixed seed.
pub fn estimate_lipschitz<T: Real>(dictionary: &KernelBank<T>, height: usize, width: usize) -> T {
    let bank = dictionary.without_bias();
    let k = bank.in_channels();
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = Tensor3::from_fn(height, width, k, |_, _, _| T::lit(rng.random_range(-1.0..1.0)));
    let norm = v.sq_sum().sqrt();
    v = v.scale(T::one() / norm);
    let mut estimate = T::zero();
    for _ in 0..POWER_ITERATIONS {
        let dv = conv2d_same(&v, &bank).expect("code matches dictionary");
        let next = conv2d_adjoint(&dv, &bank).expect("image matches dictionary");
        let n = next.sq_sum().sqrt();
        if n == T::zero() {
            return T::zero();
        }
        estimate = n;
        v = next.scale(T::one() / n);
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shrink_branches() {
        assert!((shrink(1.2f64, 0.5) - 0.7).abs() < 1e-15);
        assert_eq!(shrink(-0.3f64, 0.5), 0.0);
        assert_eq!(shrink(-2.0f64, 0.5), -1.5);
    }

    #[test]
    fn negative_threshold_rejected() {
        let t = Tensor3::<f64>::zeros(2, 2, 1);
        assert!(matches!(soft_threshold(&t, -0.1), Err(Error::Argument(_))));
        assert!(soft_threshold(&t, f64::NAN).is_err());
    }

    #[test]
    fn problem_validation() {
        let obs = Tensor3::<f64>::zeros(4, 4, 1);
        let d = KernelBank::<f64>::zeros(1, 2, 3, false);
        assert!(CscProblem::new(obs.clone(), d.clone(), -1.0, 0.1, 3).is_err());
        assert!(CscProblem::new(obs.clone(), d.clone(), 0.1, 0.0, 3).is_err());
        assert!(CscProblem::new(obs.clone(), KernelBank::zeros(1, 2, 3, true), 0.1, 0.1, 3).is_err());
        assert!(CscProblem::new(obs.clone(), KernelBank::zeros(2, 2, 3, false), 0.1, 0.1, 3).is_err());
        assert!(CscProblem::new(Tensor3::zeros(4, 4, 3), d.clone(), 0.1, 0.1, 3).is_err());
        let p = CscProblem::new(obs, d, 0.1, 0.1, 3).unwrap();
        assert!(p.objective(&Tensor3::zeros(4, 4, 3)).is_err());
    }

    #[test]
    fn zero_iterations_gives_zero_code() {
        let obs = Tensor3::filled(4, 4, 1, 0.5f64);
        let d = KernelBank::new(1, 2, 1, vec![1.0, 0.5], None).unwrap();
        let p = CscProblem::new(obs, d, 0.1, 0.5, 0).unwrap();
        assert_eq!(p.solve().abs_sum(), 0.0);
        assert!(p.solve_trace().is_empty());
    }

    #[test]
    fn objective_at_zero_code() {
        let obs = Tensor3::from_fn(3, 3, 1, |y, x, _| (y + 2 * x) as f64 * 0.1);
        let d = KernelBank::new(1, 2, 1, vec![1.0, -1.0], None).unwrap();
        let p = CscProblem::new(obs.clone(), d, 0.3, 0.5, 1).unwrap();
        assert_eq!(p.objective(&p.zero_code()).unwrap(), 0.5 * obs.sq_sum());
    }

    #[test]
    fn lipschitz_trivial_cases() {
        assert_eq!(estimate_lipschitz(&KernelBank::<f64>::zeros(1, 3, 3, false), 8, 8), 0.0);
        let c = 1.7f64;
        let d = KernelBank::new(1, 1, 1, vec![c], None).unwrap();
        assert!((estimate_lipschitz(&d, 8, 8) - c * c).abs() < 1e-12);
    }
}
