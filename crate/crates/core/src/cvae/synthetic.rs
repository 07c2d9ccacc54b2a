//! One-dimensional conditional behavior density with a numerically exact
//! `log π_β(a|s)`, used to measure how well the density estimators recover it.
//!
//! `s ~ U[-1, 1]`, `z ~ N(0, 1)` and
//! `a = s + half_separation · tanh(sharpness · z) + noise_std · ε`.
//! The result is a continuous Gaussian mixture with two modes near
//! `s ± half_separation`; its density is the integral over `z`, evaluated by
//! trapezoidal quadrature.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{gaussian_log_pdf, log_sum_exp, Tensor};

const QUADRATURE_HALF_WIDTH: f64 = 9.0;
const QUADRATURE_NODES: usize = 6001;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureTask {
    pub half_separation: f64,
    pub sharpness: f64,
    pub noise_std: f64,
    /// Symmetric action bound handed to the density models.
    pub action_bound: f64,
}

impl Default for MixtureTask {
    fn default() -> Self {
        Self {
            half_separation: 2.0,
            sharpness: 3.0,
            noise_std: 1.25,
            action_bound: 8.0,
        }
    }
}

impl MixtureTask {
    /// Mean of `a` given the state and the latent draw.
    pub fn mixture_mean(&self, s: f64, z: f64) -> f64 {
        s + self.half_separation * (self.sharpness * z).tanh()
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> (Tensor, Tensor) {
        let mut states = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        for _ in 0..n {
            let s: f64 = rng.random_range(-1.0..1.0);
            let z: f64 = rng.sample(StandardNormal);
            let eps: f64 = rng.sample(StandardNormal);
            states.push(s);
            actions.push(self.mixture_mean(s, z) + self.noise_std * eps);
        }
        (
            Tensor::matrix(n, 1, states).expect("state column"),
            Tensor::matrix(n, 1, actions).expect("action column"),
        )
    }

    pub fn log_density(&self, s: f64, a: f64) -> f64 {
        let h = 2.0 * QUADRATURE_HALF_WIDTH / (QUADRATURE_NODES - 1) as f64;
        let log_var = 2.0 * self.noise_std.ln();
        let terms: Vec<f64> = (0..QUADRATURE_NODES)
            .map(|i| {
                let z = -QUADRATURE_HALF_WIDTH + i as f64 * h;
                let end_weight = if i == 0 || i + 1 == QUADRATURE_NODES { 0.5 } else { 1.0 };
                gaussian_log_pdf(a, self.mixture_mean(s, z), log_var)
                    + gaussian_log_pdf(z, 0.0, 0.0)
                    + (end_weight * h).ln()
            })
            .collect();
        log_sum_exp(&terms)
    }

    pub fn bounds(&self) -> ([f64; 1], [f64; 1]) {
        ([-self.action_bound], [self.action_bound])
    }
}
