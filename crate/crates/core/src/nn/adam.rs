use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

/// Bias-corrected ADAM over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        AdamState {
            step_count: 0,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            learning_rate,
        }
    }

    /// Applies one update. `params` and `grads` are matched slice by slice and
    /// together must cover exactly the length the state was built for.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim("adam slices", params.len(), grads.len()));
        }
        let total: usize = params.iter().map(|p| p.len()).sum();
        if total != self.first_moment.len() {
            return Err(Error::dim("adam parameters", self.first_moment.len(), total));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::dim("adam gradient", p.len(), g.len()));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut offset = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            let m = &mut self.first_moment[offset..offset + p.len()];
            let v = &mut self.second_moment[offset..offset + p.len()];
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
            offset += p.len();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.5, -2.0];
        let mut st = AdamState::new(2, DEFAULT_LEARNING_RATE);
        st.update(&mut [&mut p[..]], &[&[0.0, 0.0][..]]).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02] {
            let mut p = [0.0];
            let mut st = AdamState::new(1, 1e-4);
            st.update(&mut [&mut p[..]], &[&[g][..]]).unwrap();
            let expected = -1e-4 * g / (f64::abs(g) + 1e-8);
            assert!((p[0] - expected).abs() < 1e-18);
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn constant_positive_gradient_shrinks_monotonically() {
        let mut p = [1.0];
        let mut st = AdamState::new(1, 1e-4);
        let mut prev = p[0];
        for _ in 0..2 {
            st.update(&mut [&mut p[..]], &[&[0.5][..]]).unwrap();
            assert!(p[0] < prev);
            prev = p[0];
        }
        // With a constant gradient both bias-corrected moments equal g and g².
        assert!((p[0] - (1.0 - 2.0 * 1e-4 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = [0.0, 0.0];
        let mut st = AdamState::new(3, 1e-4);
        assert!(st.update(&mut [&mut p[..]], &[&[1.0, 1.0][..]]).is_err());
    }
}
