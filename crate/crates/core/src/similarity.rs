//! Cosine similarity, used for both the embedding and the concept scorer.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math;

/// `a . b / (|a| |b|)`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape_err(format!("lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (math::norm(a), math::norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((math::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity together with its gradients with respect to both
/// arguments.
pub fn cosine_sim_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(shape_err(format!("lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (math::norm(a), math::norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let s = math::dot(a, b) / (na * nb);
    let inv = 1.0 / (na * nb);
    let da = a
        .iter()
        .zip(b)
        .map(|(x, y)| y * inv - s * x / (na * na))
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(x, y)| x * inv - s * y / (nb * nb))
        .collect();
    Ok((s, da, db))
}
