//! Adam with bias correction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math;

/// Optimizer state for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// State with the usual defaults `beta1 = 0.9`, `beta2 = 0.999`,
    /// `eps = 1e-8`.
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update of `params` in place.
///
/// A NaN or infinite gradient aborts before anything is modified.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(shape_err(format!(
            "{} params, {} grads, optimizer sized for {}",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Divergence(i));
    }
    state.step_count += 1;
    let t = state.step_count.min(i32::MAX as u64) as i32;
    let bc1 = 1.0 - math::powi(state.beta1, t);
    let bc2 = 1.0 - math::powi(state.beta2, t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= state.lr * m_hat / (math::sqrt(v_hat) + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut st = AdamState::new(3, 0.1);
        for _ in 0..3 {
            adam_step(&mut p, &[0.0; 3], &mut st).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(st.step_count, 3);
    }

    #[test]
    fn scalar_steps_match_hand_formula() {
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
        let mut p = [1.0];
        let mut st = AdamState::new(1, lr);
        adam_step(&mut p, &[1.0], &mut st).unwrap();
        // m = 0.1, v = 0.001, m_hat = 1, v_hat = 1
        let after_one = 1.0 - lr * 1.0 / (1.0 + eps);
        assert!((p[0] - after_one).abs() < 1e-15);

        adam_step(&mut p, &[1.0], &mut st).unwrap();
        let m2 = b1 * 0.1 + (1.0 - b1);
        let v2 = b2 * 0.001 + (1.0 - b2);
        let m_hat = m2 / (1.0 - b1 * b1);
        let v_hat = v2 / (1.0 - b2 * b2);
        let after_two = after_one - lr * m_hat / (v_hat.sqrt() + eps);
        assert!((p[0] - after_two).abs() < 1e-15);
        assert_eq!(st.step_count, 2);
    }

    #[test]
    fn nan_gradient_is_divergence() {
        let mut p = vec![1.0, 1.0];
        let mut st = AdamState::new(2, 0.1);
        assert_eq!(
            adam_step(&mut p, &[0.0, f64::NAN], &mut st),
            Err(Error::Divergence(1))
        );
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(st.step_count, 0);
    }

    #[test]
    fn length_mismatch() {
        let mut p = vec![1.0, 1.0];
        let mut st = AdamState::new(2, 0.1);
        assert!(matches!(adam_step(&mut p, &[0.0], &mut st), Err(Error::Shape(_))));
    }
}
