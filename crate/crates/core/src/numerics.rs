//! Dense vector math used by the prototype losses.
//!
//! Everything here works on plain `f64` slices. Each differentiable
//! primitive comes with its analytic derivative, and
//! [`finite_difference_gradient`] is the central-difference oracle the
//! tests use to check them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to a probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Denominator floor for the per-parameter relative error in
/// [`compare_gradients`]. Below this magnitude both gradients are
/// dominated by finite-difference round-off.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `Σ (a_i − b_i)²`.
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// `1 − cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Distance used to compare embeddings with prototypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    SquaredEuclidean,
    Cosine,
}

impl Distance {
    pub fn eval(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            Distance::SquaredEuclidean => squared_euclidean(a, b),
            Distance::Cosine => cosine_distance(a, b),
        }
    }

    /// Partial derivatives `(∂d/∂a, ∂d/∂b)`.
    pub fn grad(self, a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dims(a, b)?;
        match self {
            Distance::SquaredEuclidean => {
                let ga: Vec<f64> = a.iter().zip(b).map(|(x, y)| 2.0 * (x - y)).collect();
                let gb = ga.iter().map(|g| -g).collect();
                Ok((ga, gb))
            }
            Distance::Cosine => {
                let (na, nb) = (norm(a), norm(b));
                if na == 0.0 || nb == 0.0 {
                    return Err(Error::ZeroNorm);
                }
                let ab = dot(a, b);
                // d = 1 - ab / (na nb)
                let ga = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| -(y / (na * nb) - ab * x / (na * na * na * nb)))
                    .collect();
                let gb = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| -(x / (na * nb) - ab * y / (na * nb * nb * nb)))
                    .collect();
                Ok((ga, gb))
            }
        }
    }
}

/// `softmax(−dists)`, stabilized by shifting with the smallest distance.
pub fn softmax_over_neg_distances(dists: &[f64]) -> Result<Vec<f64>> {
    if dists.is_empty() {
        return Err(Error::Empty("distance list"));
    }
    if dists.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("distance list"));
    }
    let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = dists.iter().map(|d| (-(d - min)).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `−log(probs[target])`, with the probability clamped at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    let p = *probs.get(target).ok_or(Error::IndexOutOfRange {
        index: target,
        len: probs.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Central differences `(L(θ+ε·e_i) − L(θ−ε·e_i)) / 2ε` for every parameter.
pub fn finite_difference_gradient<F>(mut loss_fn: F, params: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + eps;
        let up = loss_fn(&theta);
        theta[i] = orig - eps;
        let down = loss_fn(&theta);
        theta[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub per_parameter_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative_error < tol
    }
}

/// Elementwise `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> Result<GradCheckReport> {
    check_dims(analytic, numeric)?;
    let per_parameter_errors: Vec<f64> = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR))
        .collect();
    let max_relative_error = per_parameter_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_relative_error,
        per_parameter_errors,
    })
}
