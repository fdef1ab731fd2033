//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::model::SinetParams;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T> {
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every tensor in `params` using the matching `grads`.
    /// Moments are allocated (as zeros) on the first call.
    pub fn step(&mut self, cfg: &AdamConfig, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::arg(format!(
                "adam: {} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() && self.step == 0 {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::arg("adam: parameter list changed between steps"));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::arg(format!(
                    "adam: tensor sizes differ (param {}, grad {}, state {})",
                    p.len(),
                    g.len(),
                    m.len()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::lit(cfg.beta1);
        let b2 = T::lit(cfg.beta2);
        let one = T::one();
        let lr = T::lit(cfg.learning_rate);
        let eps = T::lit(cfg.epsilon);
        let c1 = one - T::lit(cfg.beta1.powi(t));
        let c2 = one - T::lit(cfg.beta2.powi(t));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Adam update of a whole network.
pub fn adam_step<T: Real>(
    params: &mut SinetParams<T>,
    grads: &SinetParams<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.config() != grads.config() {
        return Err(Error::arg("adam: gradient layout differs from parameters"));
    }
    let g: Vec<&[T]> = grads.param_slices().into_iter().map(|(_, s)| s).collect();
    let mut p: Vec<&mut [T]> = params.param_slices_mut().into_iter().map(|(_, s)| s).collect();
    state.step(cfg, &mut p, &g)
}
