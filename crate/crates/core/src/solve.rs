//! The ridge system `(K + ridge * I) beta = y`.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::error::{invalid, Error, Result};
use crate::kernel::GramMatrix;

/// Jitter starts at this fraction of the mean diagonal entry of `K`.
const JITTER_FRACTION: f64 = 1e-10;
/// Number of doublings tried after the first jittered attempt.
const JITTER_DOUBLINGS: u32 = 8;
const REFINEMENT_STEPS: usize = 3;

/// Residual tolerance `1e-8 * max(1, |y|_inf)`.
pub fn residual_tolerance(y: &[f64]) -> f64 {
    1e-8 * y.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

/// Solves `(K + ridge * I) beta = y` by Cholesky factorization.
///
/// When the factorization breaks down, `trace(K)/n * 1e-10` is added to the
/// diagonal and doubled on each further failure, up to eight doublings. The
/// solution is polished by iterative refinement against the unjittered
/// system.
pub fn regularized_solve(k: &GramMatrix, y: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let n = k.n();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if !(ridge > 0.0 && ridge.is_finite()) {
        return invalid(format!("ridge must be positive and finite, got {ridge}"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return invalid("response contains non-finite values");
    }
    let entries = k.entries();
    if n == 1 && entries[[0, 0]] + ridge > 0.0 {
        return Ok(vec![y[0] / (entries[[0, 0]] + ridge)]);
    }
    let system = |jitter: f64| Mat::from_fn(n, n, |i, j| entries[[i, j]] + if i == j { ridge + jitter } else { 0.0 });

    let base_jitter = JITTER_FRACTION * (k.trace().abs() / n as f64).max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    let mut attempt = 0;
    let llt = loop {
        match system(jitter).llt(Side::Lower) {
            Ok(llt) => break llt,
            Err(_) if attempt <= JITTER_DOUBLINGS => {
                jitter = if attempt == 0 { base_jitter } else { jitter * 2.0 };
                attempt += 1;
            }
            Err(_) => return Err(Error::Numerical { jitter }),
        }
    };

    let rhs = Mat::from_fn(n, 1, |i, _| y[i]);
    let sol = llt.solve(&rhs);
    let mut beta: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();

    let tol = residual_tolerance(y);
    for _ in 0..REFINEMENT_STEPS {
        let r = residual(k, &beta, y, ridge);
        if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= tol * 1e-2 {
            break;
        }
        let corr = llt.solve(&Mat::from_fn(n, 1, |i, _| r[i]));
        for (b, i) in beta.iter_mut().zip(0..n) {
            *b += corr[(i, 0)];
        }
    }
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical { jitter });
    }
    Ok(beta)
}

/// `y - (K + ridge * I) beta`.
pub fn residual(k: &GramMatrix, beta: &[f64], y: &[f64], ridge: f64) -> Vec<f64> {
    let entries = k.entries();
    entries
        .outer_iter()
        .zip(beta.iter().zip(y))
        .map(|(row, (&b, &yi))| {
            let kb: f64 = row.iter().zip(beta).map(|(a, c)| a * c).sum();
            yi - (kb + ridge * b)
        })
        .collect()
}
