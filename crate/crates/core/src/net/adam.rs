use crate::error::{check_dim, Result};
use crate::scalar::Scalar;

/// Adam moment estimates for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step_count: u64,
    first_moment: Vec<T>,
    second_moment: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(num_params: usize, learning_rate: T) -> Self {
        Self::with_betas(num_params, learning_rate, T::lit(0.9), T::lit(0.999), T::lit(1e-8))
    }

    pub fn with_betas(num_params: usize, learning_rate: T, beta1: T, beta2: T, eps: T) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            step_count: 0,
            first_moment: vec![T::zero(); num_params],
            second_moment: vec![T::zero(); num_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) -> Result<()> {
        check_dim("adam params", self.first_moment.len(), params.len())?;
        check_dim("adam gradient", self.first_moment.len(), grad.len())?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let one = T::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            let m = &mut self.first_moment[i];
            *m = self.beta1 * *m + (one - self.beta1) * g;
            let v = &mut self.second_moment[i];
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
