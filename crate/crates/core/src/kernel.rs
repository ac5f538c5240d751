//! Kernel functions and Gram matrices.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A reproducing kernel `K(x, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(-|x - z|^2 / sigma^2)`.
    Gaussian { sigma: f64 },
    /// `(1 + x.z)^degree`.
    Polynomial { degree: u32 },
    /// `1 + min(x, z)`, scalar predictors only.
    Min,
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        let spec = KernelSpec::Gaussian { sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn polynomial(degree: u32) -> Result<Self> {
        let spec = KernelSpec::Polynomial { degree };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                invalid(format!("gaussian sigma must be positive and finite, got {sigma}"))
            }
            KernelSpec::Polynomial { degree: 0 } => invalid("polynomial degree must be at least 1"),
            _ => Ok(()),
        }
    }

    /// Checks that the kernel accepts predictors of dimension `dim`.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        self.validate()?;
        if dim == 0 {
            return invalid("predictors must have at least one dimension");
        }
        if matches!(self, KernelSpec::Min) && dim != 1 {
            return Err(Error::Unsupported(format!(
                "min kernel is defined for scalar predictors only, got dimension {dim}"
            )));
        }
        Ok(())
    }

    /// Evaluates `K(x, z)`.
    pub fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        if x.len() != z.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: z.len() });
        }
        self.check_dim(x.len())?;
        Ok(self.eval_unchecked(x, z))
    }

    /// Evaluation without argument checks; callers validate dimensions once.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], z: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { sigma } => {
                let sq: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (sigma * sigma)).exp()
            }
            KernelSpec::Polynomial { degree } => {
                let dot: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
                (1.0 + dot).powi(degree as i32)
            }
            KernelSpec::Min => 1.0 + x[0].min(z[0]),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Gaussian { sigma } => write!(f, "gaussian(sigma={sigma})"),
            KernelSpec::Polynomial { degree } => write!(f, "polynomial(degree={degree})"),
            KernelSpec::Min => write!(f, "min"),
        }
    }
}

/// Kernel family names accepted on the command line; the Gaussian scale is
/// supplied separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum KernelFamily {
    Gaussian,
    Polynomial(u32),
    Min,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFamily::Gaussian => write!(f, "gaussian"),
            KernelFamily::Polynomial(r) => write!(f, "polynomial:{r}"),
            KernelFamily::Min => write!(f, "min"),
        }
    }
}

impl From<KernelFamily> for String {
    fn from(k: KernelFamily) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for KernelFamily {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl KernelFamily {
    /// The concrete kernel; `sigma` is only read for the Gaussian family.
    pub fn with_sigma(self, sigma: f64) -> Result<KernelSpec> {
        match self {
            KernelFamily::Gaussian => KernelSpec::gaussian(sigma),
            KernelFamily::Polynomial(r) => KernelSpec::polynomial(r),
            KernelFamily::Min => Ok(KernelSpec::Min),
        }
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "gaussian" | "rbf" => Ok(KernelFamily::Gaussian),
            "min" => Ok(KernelFamily::Min),
            _ => {
                if let Some(deg) = s.strip_prefix("polynomial:").or_else(|| s.strip_prefix("poly:")) {
                    let degree = deg
                        .parse::<u32>()
                        .map_err(|_| Error::InvalidInput(format!("bad polynomial degree '{deg}'")))?;
                    Ok(KernelFamily::Polynomial(degree))
                } else if s == "polynomial" || s == "poly" {
                    Ok(KernelFamily::Polynomial(2))
                } else {
                    invalid(format!("unknown kernel '{s}' (expected gaussian, polynomial[:r] or min)"))
                }
            }
        }
    }
}

/// Dense symmetric kernel matrix over one point set.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: Array2<f64>,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.diag().sum()
    }

    /// Wraps an explicit matrix, checking that it is square and exactly
    /// symmetric.
    pub fn from_entries(entries: Array2<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return invalid(format!("gram matrix must be square and nonempty, got {:?}", entries.dim()));
        }
        for i in 0..n {
            for j in 0..i {
                if entries[[i, j]] != entries[[j, i]] {
                    return invalid(format!("gram matrix is not symmetric at ({i}, {j})"));
                }
            }
        }
        Ok(GramMatrix { entries })
    }
}

/// Builds the Gram matrix of `x` (rows are points).
///
/// The upper triangle is computed row by row, possibly in parallel, and
/// mirrored. Every entry goes through the same scalar path, so the result
/// does not depend on the number of threads.
pub fn gram(spec: &KernelSpec, x: ArrayView2<'_, f64>) -> Result<GramMatrix> {
    let n = x.nrows();
    if n == 0 {
        return invalid("gram matrix needs at least one point");
    }
    spec.check_dim(x.ncols())?;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).to_vec()).collect();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| spec.eval_unchecked(&rows[i], &rows[j])).collect())
        .collect();
    let mut entries = Array2::<f64>::zeros((n, n));
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            entries[[i, j]] = v;
            entries[[j, i]] = v;
        }
    }
    Ok(GramMatrix { entries })
}

/// Kernel values between two point sets: `out[[i, j]] = K(a_i, b_j)`.
pub fn cross_kernel(spec: &KernelSpec, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch { expected: a.ncols(), got: b.ncols() });
    }
    spec.check_dim(a.ncols())?;
    let a_rows: Vec<Vec<f64>> = a.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let b_rows: Vec<Vec<f64>> = b.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let values: Vec<f64> = a_rows
        .par_iter()
        .flat_map_iter(|a_row| b_rows.iter().map(move |b_row| spec.eval_unchecked(a_row, b_row)))
        .collect();
    Ok(Array2::from_shape_vec((a.nrows(), b.nrows()), values).expect("shape matches"))
}
