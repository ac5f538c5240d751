//! Single-machine kernel ridge regression.
//!
//! For `n` observations the penalized least-squares problem
//! `(1/n) sum (y_i - f(x_i))^2 + lambda |f|_H^2` is solved by
//! `f(x) = sum_i beta_i K(x_i, x)` with `(K + n lambda I) beta = y`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::kernel::{cross_kernel, gram, KernelSpec};
use crate::rng::rng_from_seed;
use crate::solve::regularized_solve;

/// Rows used by [`median_bandwidth`] when no probe size is given.
pub const DEFAULT_BANDWIDTH_PROBE: usize = 1000;
/// Largest sample [`select_lambda`] fits on; bigger inputs are subsampled.
pub const LAMBDA_PROBE_LIMIT: usize = 4000;
pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.2;

/// Twenty log-spaced values from `1e-8` to `1`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-8, 1.0, 20)
}

pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect()
}

/// Predictors, response, and the original row each observation came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    origin_ids: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset whose origin ids are `0..n`.
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let origin_ids = (0..y.len()).collect();
        Self::with_origins(x, y, origin_ids)
    }

    pub fn with_origins(x: Array2<f64>, y: Array1<f64>, origin_ids: Vec<usize>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return invalid("dataset must contain at least one observation");
        }
        if x.ncols() == 0 {
            return invalid("dataset must contain at least one predictor");
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: y.len() });
        }
        if origin_ids.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: origin_ids.len() });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return invalid("dataset contains non-finite values");
        }
        Ok(Dataset { x, y, origin_ids })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn y_slice(&self) -> &[f64] {
        self.y.as_slice().expect("response is contiguous")
    }

    pub fn origin_ids(&self) -> &[usize] {
        &self.origin_ids
    }

    /// Rows `idx` of this dataset, in the given order. Origin ids carry over.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return invalid(format!("row index {bad} out of range for {} rows", self.n()));
        }
        let x = self.x.select(Axis(0), idx);
        let y = self.y.select(Axis(0), idx);
        let origin_ids = idx.iter().map(|&i| self.origin_ids[i]).collect();
        Dataset::with_origins(x, y, origin_ids)
    }
}

/// A fitted kernel ridge regression function.
#[derive(Debug, Clone, PartialEq)]
pub struct KrrModel {
    pub centers: Array2<f64>,
    pub coefficients: Array1<f64>,
    pub kernel: KernelSpec,
    pub lambda: f64,
}

/// Fits KRR with the usual `ridge = n * lambda`.
pub fn fit(data: &Dataset, spec: &KernelSpec, lambda: f64) -> Result<KrrModel> {
    fit_with_ridge(data, spec, lambda, data.n() as f64 * lambda)
}

/// Fits KRR with an explicit ridge added to the Gram diagonal; `lambda` is
/// recorded on the model.
pub fn fit_with_ridge(data: &Dataset, spec: &KernelSpec, lambda: f64, ridge: f64) -> Result<KrrModel> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return invalid(format!("lambda must be positive and finite, got {lambda}"));
    }
    let k = gram(spec, data.x().view())?;
    let beta = regularized_solve(&k, data.y_slice(), ridge)?;
    Ok(KrrModel {
        centers: data.x().clone(),
        coefficients: Array1::from(beta),
        kernel: *spec,
        lambda,
    })
}

/// Evaluates `sum_i beta_i K(center_i, x)` at each row of `x_new`.
pub fn predict(model: &KrrModel, x_new: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if x_new.ncols() != model.centers.ncols() {
        return Err(Error::DimensionMismatch { expected: model.centers.ncols(), got: x_new.ncols() });
    }
    if x_new.nrows() == 0 {
        return Ok(Array1::zeros(0));
    }
    let cross = cross_kernel(&model.kernel, x_new, model.centers.view())?;
    Ok(cross.dot(&model.coefficients))
}

/// Median pairwise Euclidean distance over a seeded probe of at most
/// `probe_size` rows.
///
/// A zero median falls back to the smallest nonzero distance.
pub fn median_bandwidth(x: ArrayView2<'_, f64>, probe_size: usize, seed: u64) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return invalid("bandwidth selection needs at least two rows");
    }
    if probe_size < 2 {
        return invalid("bandwidth probe must cover at least two rows");
    }
    let mut rows: Vec<usize> = (0..n).collect();
    if probe_size < n {
        let mut rng = rng_from_seed(seed);
        rows.shuffle(&mut rng);
        rows.truncate(probe_size);
        rows.sort_unstable();
    }
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            let sq: f64 = x.row(i).iter().zip(x.row(j)).map(|(p, q)| (p - q) * (p - q)).sum();
            dists.push(sq.sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) };
    if median > 0.0 {
        return Ok(median);
    }
    dists
        .into_iter()
        .find(|&d| d > 0.0)
        .ok_or_else(|| Error::DegenerateData("all probed predictor rows are identical".into()))
}

/// Picks `lambda` from `grid` by seeded holdout validation.
///
/// The sample (or a probe of at most [`LAMBDA_PROBE_LIMIT`] rows) is split
/// into a retained part and a holdout of `floor(holdout_fraction * n)`
/// rows. Each candidate is fit on the retained rows with
/// `ridge = global_n * lambda * share`, where `share = n_retained / global_n`
/// is the retained part's fraction of the full sample, i.e. the candidate is
/// read as the per-observation penalty of the whole sample. The candidate
/// with the smallest held-out squared error wins; ties go to the larger
/// value.
pub fn select_lambda(
    data: &Dataset,
    spec: &KernelSpec,
    grid: &[f64],
    global_n: usize,
    holdout_fraction: f64,
    seed: u64,
) -> Result<f64> {
    let candidates = lambda_candidates(grid)?;
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let split = HoldoutSplit::new(data, global_n, holdout_fraction, LAMBDA_PROBE_LIMIT, seed)?;
    split.best_lambda(spec, &candidates).map(|(lambda, _)| lambda)
}

/// Default bandwidth candidates: the median heuristic halved `0..=5` times,
/// listed in ascending order.
pub fn default_sigma_grid(median: f64) -> Vec<f64> {
    (0..6).rev().map(|j| median / f64::powi(2.0, j)).collect()
}

/// Joint holdout choice of a Gaussian bandwidth and `lambda`.
///
/// Every `(sigma, lambda)` pair is scored on one seeded split of a probe of
/// at most [`DEFAULT_BANDWIDTH_PROBE`] rows. The winning `sigma` is then
/// kept and `lambda` is re-selected with [`select_lambda`] on the usual
/// probe. Ties in the first stage go to the larger bandwidth.
pub fn select_bandwidth(
    data: &Dataset,
    sigma_grid: &[f64],
    lambda_grid: &[f64],
    global_n: usize,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if sigma_grid.is_empty() {
        return invalid("bandwidth grid is empty");
    }
    if sigma_grid.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return invalid("bandwidth grid values must be positive and finite");
    }
    if sigma_grid.windows(2).any(|w| w[1] < w[0]) {
        return invalid("bandwidth grid must be sorted ascending");
    }
    let candidates = lambda_candidates(lambda_grid)?;
    let split = HoldoutSplit::new(data, global_n, holdout_fraction, DEFAULT_BANDWIDTH_PROBE, seed)?;

    let mut best: Option<(f64, f64)> = None;
    let mut first_failure = None;
    for &sigma in sigma_grid.iter().rev() {
        let spec = KernelSpec::gaussian(sigma)?;
        match split.best_lambda(&spec, &candidates) {
            Ok((_, err)) => match best {
                Some((_, e)) if err >= e => {}
                _ => best = Some((sigma, err)),
            },
            Err(e) => {
                first_failure.get_or_insert(e);
            }
        }
    }
    let sigma = match (best, first_failure) {
        (Some((sigma, _)), _) => sigma,
        (None, Some(e)) => return Err(e),
        (None, None) => return invalid("no bandwidth candidate could be evaluated"),
    };
    let lambda = select_lambda(data, &KernelSpec::gaussian(sigma)?, lambda_grid, global_n, holdout_fraction, seed)?;
    Ok((sigma, lambda))
}

fn lambda_candidates(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return invalid("lambda grid is empty");
    }
    if grid.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        return invalid("lambda grid values must be positive and finite");
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return invalid("lambda grid must be sorted ascending");
    }
    let mut candidates = grid.to_vec();
    candidates.dedup();
    Ok(candidates)
}

struct HoldoutSplit {
    train: Dataset,
    valid: Dataset,
    global_n: usize,
}

impl HoldoutSplit {
    fn new(data: &Dataset, global_n: usize, holdout_fraction: f64, limit: usize, seed: u64) -> Result<Self> {
        if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
            return invalid(format!("holdout fraction must lie in (0, 1), got {holdout_fraction}"));
        }
        if global_n < data.n() {
            return invalid(format!("global sample size {global_n} is smaller than the data ({})", data.n()));
        }
        let mut rng = rng_from_seed(seed);
        let mut rows: Vec<usize> = (0..data.n()).collect();
        rows.shuffle(&mut rng);
        rows.truncate(limit);
        let holdout = (holdout_fraction * rows.len() as f64).floor() as usize;
        if holdout == 0 || holdout >= rows.len() {
            return invalid(format!(
                "holdout fraction {holdout_fraction} leaves {holdout} of {} rows for validation",
                rows.len()
            ));
        }
        let (valid_rows, fit_rows) = rows.split_at(holdout);
        Ok(HoldoutSplit { train: data.subset(fit_rows)?, valid: data.subset(valid_rows)?, global_n })
    }

    /// Best candidate and its held-out squared error.
    fn best_lambda(&self, spec: &KernelSpec, candidates: &[f64]) -> Result<(f64, f64)> {
        let (train, valid) = (&self.train, &self.valid);
        let k = gram(spec, train.x().view())?;
        let cross = cross_kernel(spec, valid.x().view(), train.x().view())?;
        let share = train.n() as f64 / self.global_n as f64;

        let errors: Vec<Result<f64>> = candidates
            .par_iter()
            .map(|&lambda| {
                let ridge = self.global_n as f64 * lambda * share;
                let beta = Array1::from(regularized_solve(&k, train.y_slice(), ridge)?);
                let pred = cross.dot(&beta);
                Ok(pred.iter().zip(valid.y()).map(|(p, y)| (p - y) * (p - y)).sum::<f64>())
            })
            .collect();

        let mut best: Option<(f64, f64)> = None;
        let mut first_failure = None;
        for (&lambda, err) in candidates.iter().zip(errors) {
            // A candidate whose system cannot be factored is skipped, not fatal.
            let err = match err {
                Ok(e) => e,
                Err(e) => {
                    first_failure.get_or_insert(e);
                    continue;
                }
            };
            match best {
                Some((_, e)) if err > e => {}
                _ => best = Some((lambda, err)),
            }
        }
        match (best, first_failure) {
            (Some(b), _) => Ok(b),
            (None, Some(e)) => Err(e),
            (None, None) => invalid("no lambda candidate could be evaluated"),
        }
    }
}
