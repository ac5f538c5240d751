//! Synthetic regression problems with a strongly skewed response.
//!
//! The building block is the peak
//! `g(x, c) = 0.1 / (|x - c| + 0.05) * sin(0.01 pi / (|x - c| + 0.05))`,
//! which rises to `2 sin(0.2 pi)` at `x = c` and is close to zero a short
//! distance away, so most responses pile up near zero.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::krr::Dataset;
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_NOISE_SD: f64 = 0.1;

pub fn peak(x: &[f64], c: &[f64]) -> Result<f64> {
    if x.len() != c.len() {
        return Err(Error::DimensionMismatch { expected: c.len(), got: x.len() });
    }
    Ok(peak_unchecked(x, c))
}

fn peak_unchecked(x: &[f64], c: &[f64]) -> f64 {
    let r = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() + 0.05;
    0.1 / r * (0.01 * PI / r).sin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// One peak at `0.4 * 1_d`.
    UniPeak,
    /// Peaks at `0.4 * 1_d` and, with weight 0.4, at `0.7 * 1_d`.
    DoublePeak,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::UniPeak => "uni_peak",
            Shape::DoublePeak => "double_peak",
        })
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "uni_peak" | "uni" => Ok(Shape::UniPeak),
            "double_peak" | "double" => Ok(Shape::DoublePeak),
            other => invalid(format!("unknown shape '{other}' (expected uni_peak or double_peak)")),
        }
    }
}

/// The noiseless regression function of a [`Shape`] in `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueFunction {
    shape: Shape,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl TrueFunction {
    pub fn new(shape: Shape, d: usize) -> Result<Self> {
        if d == 0 {
            return invalid("dimension must be at least 1");
        }
        Ok(TrueFunction { shape, first: vec![0.4; d], second: vec![0.7; d] })
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self.shape {
            Shape::UniPeak => peak_unchecked(x, &self.first),
            Shape::DoublePeak => peak_unchecked(x, &self.first) + 0.4 * peak_unchecked(x, &self.second),
        }
    }

    /// Evaluates at every row of `x`.
    pub fn eval_rows(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.ncols() });
        }
        Ok(x.rows().into_iter().map(|r| self.eval_unchecked(&r.to_vec())).collect())
    }
}

pub fn true_function(shape: Shape, d: usize) -> Result<TrueFunction> {
    TrueFunction::new(shape, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub shape: Shape,
    pub n: usize,
    pub d: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return invalid("synthetic data needs n >= 1 and d >= 1");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return invalid(format!("noise sd must be finite and nonnegative, got {}", self.noise_sd));
        }
        Ok(())
    }
}

/// Draws `x ~ U[0,1]^d` and `y = f(x) + N(0, noise_sd^2)`.
///
/// Predictors and noise come from separate streams of `spec.seed`, so the
/// design does not change with the noise level.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, TrueFunction)> {
    spec.validate()?;
    let truth = TrueFunction::new(spec.shape, spec.d)?;
    let mut x_rng = stream_rng(spec.seed, Stream::Predictors, &[]);
    let x = Array2::from_shape_simple_fn((spec.n, spec.d), || x_rng.random::<f64>());
    let mut y = truth.eval_rows(&x)?;
    if spec.noise_sd > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut e_rng = stream_rng(spec.seed, Stream::Noise, &[]);
        for v in y.iter_mut() {
            *v += noise.sample(&mut e_rng);
        }
    }
    Ok((Dataset::new(x, y)?, truth))
}

/// Evaluation points in `[0,1]^d`: the midpoint grid for `d = 1`, a seeded
/// uniform sample otherwise.
pub fn test_points(d: usize, q: usize, seed: u64) -> Array2<f64> {
    if d == 1 {
        return Array2::from_shape_fn((q, 1), |(i, _)| (i as f64 + 0.5) / q as f64);
    }
    let mut rng = stream_rng(seed, Stream::TestGrid, &[]);
    Array2::from_shape_simple_fn((q, d), || rng.random::<f64>())
}

/// Column names of the housing-style table written by [`housing_like`].
pub const HOUSING_COLUMNS: [&str; 4] = ["longitude", "latitude", "cbd_distance", "price_per_sqm"];

/// A table shaped like a city housing-price sample: longitude, latitude,
/// distance to a central business district, and a positive, right-skewed
/// price per square meter that decays with distance and spikes in a few
/// small premium pockets.
pub fn housing_like(n: usize, seed: u64) -> Result<(Vec<&'static str>, Array2<f64>)> {
    if n == 0 {
        return invalid("housing table needs at least one row");
    }
    const CBD: (f64, f64) = (144.963, -37.814);
    // degrees to km at this latitude
    const KM_LON: f64 = 88.0;
    const KM_LAT: f64 = 111.0;
    let pockets = [(144.99, -37.84, 9000.0), (145.03, -37.80, 14000.0), (144.95, -37.79, 6000.0)];
    let mut rng = stream_rng(seed, Stream::Predictors, &[]);
    let mut e_rng = stream_rng(seed, Stream::Noise, &[]);
    let noise = Normal::new(0.0, 0.25).expect("valid sd");
    let mut table = Array2::zeros((n, 4));
    for i in 0..n {
        let lon = CBD.0 + rng.random_range(-0.35..0.35);
        let lat = CBD.1 + rng.random_range(-0.3..0.3);
        let dist = (((lon - CBD.0) * KM_LON).powi(2) + ((lat - CBD.1) * KM_LAT).powi(2)).sqrt();
        let mut price = 3500.0 * (-dist / 12.0).exp() + 600.0;
        for &(plon, plat, height) in &pockets {
            let r = (((lon - plon) * KM_LON).powi(2) + ((lat - plat) * KM_LAT).powi(2)).sqrt();
            price += height * (-r * r / 0.8).exp();
        }
        price *= f64::exp(noise.sample(&mut e_rng));
        table[[i, 0]] = lon;
        table[[i, 1]] = lat;
        table[[i, 2]] = dist;
        table[[i, 3]] = price.clamp(20.0, 30000.0);
    }
    Ok((HOUSING_COLUMNS.to_vec(), table))
}
