//! Adam with the standard defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8), no
//! weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::fusion::FusionModel;
use crate::linalg::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    step: u64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, model: &FusionModel<T>) -> Self {
        let shapes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
        Adam {
            config,
            step: 0,
            first_moment: shapes.iter().map(|n| vec![T::zero(); *n]).collect(),
            second_moment: shapes.iter().map(|n| vec![T::zero(); *n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of `model` from `grads`.
    pub fn step(&mut self, model: &mut FusionModel<T>, grads: &FusionModel<T>) {
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - num_traits::Float::powi(c.beta1, t);
        let bias2 = 1.0 - num_traits::Float::powi(c.beta2, t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step_size = T::lit(c.learning_rate / bias1);
        let inv_sqrt_bias2 = T::lit(1.0 / num_traits::Float::sqrt(bias2));
        let eps = T::lit(c.epsilon);

        let params = model.param_slices_mut();
        let grad_slices = grads.param_slices();
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grad_slices)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                p[i] = p[i] - step_size * m[i] / (v[i].sqrt() * inv_sqrt_bias2 + eps);
            }
        }
    }
}
