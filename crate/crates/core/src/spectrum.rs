//! Empirical kernel spectrum and the effective dimension
//! `d_lambda = sum_j 1 / (1 + lambda / mu_j)`.

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::GramMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumDiagnostic {
    /// Eigenvalues of `K / n`, nonincreasing.
    pub eigenvalues: Vec<f64>,
    pub lambda: f64,
    pub d_lambda: f64,
}

/// Eigenvalues of `K / n` in nonincreasing order.
///
/// Rounding can leave tiny negative values on a positive semidefinite
/// matrix; anything above `-1e-10 * largest` is clamped to zero, anything
/// below is reported as an error.
pub fn empirical_eigenvalues(k: &GramMatrix) -> Result<Vec<f64>> {
    let n = k.n();
    let entries = k.entries();
    let scale = 1.0 / n as f64;
    let m = Mat::from_fn(n, n, |i, j| entries[[i, j]] * scale);
    let mut eig = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::InvalidInput(format!("eigenvalue computation failed: {e:?}")))?;
    eig.reverse();
    let largest = eig.first().copied().unwrap_or(0.0).max(0.0);
    let floor = -1e-10 * largest.max(f64::MIN_POSITIVE);
    if let Some(&low) = eig.last() {
        if low < floor {
            return invalid(format!("kernel matrix is not positive semidefinite (eigenvalue {low:e})"));
        }
    }
    Ok(eig.into_iter().map(|v| v.max(0.0)).collect())
}

/// Raw eigenvalues of `K / n`, nondecreasing, without clamping.
pub fn raw_eigenvalues(k: &GramMatrix) -> Result<Vec<f64>> {
    let n = k.n();
    let entries = k.entries();
    let m = Mat::from_fn(n, n, |i, j| entries[[i, j]] / n as f64);
    m.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::InvalidInput(format!("eigenvalue computation failed: {e:?}")))
}

/// Sum of `(1 + lambda / mu)^-1` over the supplied eigenvalues; zero
/// eigenvalues contribute nothing.
pub fn effective_dimension(eigenvalues: &[f64], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return invalid(format!("lambda must be positive and finite, got {lambda}"));
    }
    let mut total = 0.0;
    for &mu in eigenvalues {
        if !mu.is_finite() || mu < 0.0 {
            return invalid(format!("eigenvalues must be finite and nonnegative, got {mu}"));
        }
        if mu > 0.0 {
            total += mu / (mu + lambda);
        }
    }
    Ok(total)
}

pub fn diagnose(k: &GramMatrix, lambda: f64) -> Result<SpectrumDiagnostic> {
    let eigenvalues = empirical_eigenvalues(k)?;
    let d_lambda = effective_dimension(&eigenvalues, lambda)?;
    Ok(SpectrumDiagnostic { eigenvalues, lambda, d_lambda })
}
