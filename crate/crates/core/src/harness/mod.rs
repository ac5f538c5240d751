//! Experiment orchestration, file formats and the pieces of the command-line
//! pipeline that are worth testing without a process boundary.

pub mod config;
pub mod experiment;
pub mod io;
pub mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dac::{fit_dac, DacModel, FitOptions, PlanRecipe};
use crate::error::{invalid, Error, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::krr::{
    default_lambda_grid, default_sigma_grid, median_bandwidth, select_bandwidth, select_lambda, Dataset,
    DEFAULT_BANDWIDTH_PROBE, DEFAULT_HOLDOUT_FRACTION,
};
use crate::partition::{classical_plan, make_slices, oversample_plan, PartitionPlan, SlicingRule};
use crate::rng::{derive_seed, Stream};

pub use config::ExperimentConfig;
pub use experiment::{mse_against_truth, run_experiment, run_real_data, CellRecord, ExperimentReport};
pub use io::{load_csv, load_features};
pub use split::stratified_split;

/// Which estimator to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Full,
    ClassicalDac,
    OversampledDac,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Full => "full",
            Estimator::ClassicalDac => "dac",
            Estimator::OversampledDac => "odac",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Estimator::Full),
            "dac" | "classical_dac" => Ok(Estimator::ClassicalDac),
            "odac" | "oversampled_dac" => Ok(Estimator::OversampledDac),
            other => invalid(format!("unknown estimator '{other}' (expected full, dac or odac)")),
        }
    }
}

/// How the Gaussian bandwidth is chosen when none is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    #[default]
    Median,
    /// Joint holdout search over halvings of the median heuristic.
    Holdout,
}

impl FromStr for BandwidthRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "median" => Ok(BandwidthRule::Median),
            "holdout" => Ok(BandwidthRule::Holdout),
            other => invalid(format!("unknown bandwidth rule '{other}' (expected median or holdout)")),
        }
    }
}

/// Kernel family plus optional fixed tuning values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuning {
    pub kernel: KernelFamily,
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    pub bandwidth: BandwidthRule,
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning { kernel: KernelFamily::Gaussian, sigma: None, lambda: None, bandwidth: BandwidthRule::Median }
    }
}

/// Fixes the kernel and the global `lambda` for `data`.
///
/// Missing values are chosen from the full sample: the bandwidth by the
/// median heuristic or the holdout search, `lambda` by holdout validation
/// over the default grid. `seed` feeds both searches.
pub fn resolve_tuning(data: &Dataset, tuning: &Tuning, seed: u64) -> Result<(KernelSpec, f64)> {
    let n = data.n();
    let bw_seed = derive_seed(seed, Stream::Bandwidth, &[]);
    let lambda_seed = derive_seed(seed, Stream::Lambda, &[]);
    let (spec, mut lambda) = match (tuning.kernel, tuning.sigma) {
        (KernelFamily::Gaussian, Some(sigma)) => (KernelSpec::gaussian(sigma)?, tuning.lambda),
        (KernelFamily::Gaussian, None) => {
            let median = median_bandwidth(data.x().view(), DEFAULT_BANDWIDTH_PROBE, bw_seed)?;
            match tuning.bandwidth {
                BandwidthRule::Median => (KernelSpec::gaussian(median)?, tuning.lambda),
                BandwidthRule::Holdout => {
                    let lambda_grid = match tuning.lambda {
                        Some(l) => vec![l],
                        None => default_lambda_grid(),
                    };
                    let (sigma, lambda) = select_bandwidth(
                        data,
                        &default_sigma_grid(median),
                        &lambda_grid,
                        n,
                        DEFAULT_HOLDOUT_FRACTION,
                        bw_seed,
                    )?;
                    (KernelSpec::gaussian(sigma)?, Some(lambda))
                }
            }
        }
        (family, _) => (family.with_sigma(1.0)?, tuning.lambda),
    };
    spec.check_dim(data.dim())?;
    if lambda.is_none() {
        lambda = Some(select_lambda(data, &spec, &default_lambda_grid(), n, DEFAULT_HOLDOUT_FRACTION, lambda_seed)?);
    }
    Ok((spec, lambda.expect("set above")))
}

/// Partition settings for one estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanSettings {
    pub estimator: Estimator,
    pub k: usize,
    pub rule: SlicingRule,
    pub tau: f64,
    pub seed: u64,
}

/// The node plan for `settings`, the recipe that regenerates it and the
/// number of slices used (1 unless oversampling).
pub fn build_plan(y: &[f64], settings: &PlanSettings) -> Result<(PartitionPlan, PlanRecipe, usize)> {
    let n = y.len();
    match settings.estimator {
        Estimator::Full => {
            let plan = PartitionPlan {
                k: 1,
                seed: settings.seed,
                node_assignments: vec![(0..n).collect()],
                pre_dedup_total: n,
                post_dedup_total: n,
            };
            Ok((plan, PlanRecipe::Full { n }, 1))
        }
        Estimator::ClassicalDac => {
            let plan = classical_plan(n, settings.k, settings.seed)?;
            Ok((plan, PlanRecipe::Classical { n, k: settings.k, seed: settings.seed }, 1))
        }
        Estimator::OversampledDac => {
            let slices = make_slices(y, settings.rule)?;
            let plan = oversample_plan(y, &slices, settings.tau, settings.k, settings.seed)?;
            let recipe = PlanRecipe::Oversampled {
                n,
                k: settings.k,
                seed: settings.seed,
                rule: settings.rule,
                slices: slices.len(),
                tau: settings.tau,
            };
            Ok((plan, recipe, slices.len()))
        }
    }
}

/// Plans and fits one estimator with a fixed kernel and `lambda`.
pub fn fit_estimator(
    data: &Dataset,
    spec: &KernelSpec,
    lambda: f64,
    settings: &PlanSettings,
    options: FitOptions,
) -> Result<DacModel> {
    let (plan, recipe, _) = build_plan(data.y_slice(), settings)?;
    fit_dac(data, &plan, spec, lambda, recipe, options)
}
