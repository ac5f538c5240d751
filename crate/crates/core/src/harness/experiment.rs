//! Replicated MSE comparisons.
//!
//! A synthetic run loops over every `(n, d)` pair and replicate. Each such
//! unit draws one dataset, fixes the kernel and `lambda` once, and then fits
//! every requested estimator configuration on that same data, so estimator
//! cells are paired replicate by replicate. Units may run in parallel; all
//! randomness is keyed on `(master_seed, n, d, replicate)` and results are
//! gathered in a fixed order, so the report does not depend on scheduling.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dac::{fit_dac, predict_dac, FitOptions};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::krr::Dataset;
use crate::partition::{make_slices, SlicingRule};
use crate::rng::{derive_seed, Stream};
use crate::synth::{generate, test_points, SynthSpec};

use super::config::ExperimentConfig;
use super::split::stratified_split;
use super::{build_plan, resolve_tuning, Estimator, PlanSettings};

/// Mean squared difference between predictions and the target values.
pub fn mse_against_truth(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: predictions.len() });
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput("no evaluation points".into()));
    }
    Ok(predictions.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / truth.len() as f64)
}

/// Kernel and `lambda` chosen for one dataset draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub n: usize,
    pub d: usize,
    pub replicate: usize,
    pub kernel: Option<KernelSpec>,
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Aggregate over replicates for one estimator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub estimator: Estimator,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub slicing: Option<SlicingRule>,
    pub tau: Option<f64>,
    /// `None` where that replicate failed.
    pub replicate_mse: Vec<Option<f64>>,
    pub mean_mse: Option<f64>,
    /// Sample standard deviation of the replicate MSEs over `sqrt(count)`.
    pub se_mse: Option<f64>,
    pub mean_slices: Option<f64>,
    pub node_size_min: Option<usize>,
    pub node_size_mean: Option<f64>,
    pub node_size_max: Option<usize>,
    pub mean_pre_dedup_total: Option<f64>,
    pub mean_post_dedup_total: Option<f64>,
    /// Every plan covered all rows and had `post <= pre <= l * n`.
    pub bound_holds: bool,
    /// Wall-clock seconds for planning plus fitting; the only field that
    /// differs between identical runs.
    pub mean_fit_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CellRecord {
    pub fn ok_replicates(&self) -> usize {
        self.replicate_mse.iter().flatten().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub selections: Vec<Selection>,
    pub cells: Vec<CellRecord>,
}

/// Names of the flat CSV columns, in order.
pub const CSV_COLUMNS: [&str; 19] = [
    "estimator",
    "n",
    "d",
    "k",
    "slicing",
    "tau",
    "replicates",
    "ok_replicates",
    "mean_mse",
    "se_mse",
    "mean_slices",
    "node_size_min",
    "node_size_mean",
    "node_size_max",
    "mean_pre_dedup_total",
    "mean_post_dedup_total",
    "bound_holds",
    "mean_fit_seconds",
    "error",
];

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// The report as JSON with every timing field removed.
    pub fn body_without_timing(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        strip_timing(&mut v);
        Ok(serde_json::to_string_pretty(&v)?)
    }

    /// One row per cell, preceded by a `#` line holding the config as JSON.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        writeln!(out, "# config: {}", serde_json::to_string(&self.config)?).expect("string write");
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS)?;
        for c in &self.cells {
            w.write_record([
                c.estimator.to_string(),
                c.n.to_string(),
                c.d.to_string(),
                c.k.to_string(),
                opt(&c.slicing),
                opt(&c.tau),
                c.replicate_mse.len().to_string(),
                c.ok_replicates().to_string(),
                opt(&c.mean_mse),
                opt(&c.se_mse),
                opt(&c.mean_slices),
                opt(&c.node_size_min),
                opt(&c.node_size_mean),
                opt(&c.node_size_max),
                opt(&c.mean_pre_dedup_total),
                opt(&c.mean_post_dedup_total),
                c.bound_holds.to_string(),
                opt(&c.mean_fit_seconds),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        let put = |p: &Path, text: String| {
            std::fs::write(p, text).map_err(|e| Error::Io { path: p.display().to_string(), source: e })
        };
        put(json_path, self.to_json()?)?;
        put(csv_path, self.to_csv()?)
    }

    /// The cell matching an estimator configuration, if present.
    pub fn cell(&self, estimator: Estimator, n: usize, d: usize, k: usize, slicing: Option<SlicingRule>, tau: Option<f64>) -> Option<&CellRecord> {
        self.cells.iter().find(|c| {
            c.estimator == estimator && c.n == n && c.d == d && c.k == k && c.slicing == slicing && c.tau == tau
        })
    }
}

/// Removes `mean_fit_seconds` (and any other `*_seconds` key) recursively.
pub fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("_seconds"));
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// One estimator configuration within an `(n, d)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CellKey {
    estimator: Estimator,
    k: usize,
    rule: Option<SlicingRule>,
    tau: Option<f64>,
}

fn cell_keys(config: &ExperimentConfig) -> Vec<CellKey> {
    let mut keys = Vec::new();
    if config.estimators.contains(&Estimator::Full) {
        keys.push(CellKey { estimator: Estimator::Full, k: 1, rule: None, tau: None });
    }
    for &k in &config.k_values {
        if config.estimators.contains(&Estimator::ClassicalDac) {
            keys.push(CellKey { estimator: Estimator::ClassicalDac, k, rule: None, tau: None });
        }
        if config.estimators.contains(&Estimator::OversampledDac) {
            for &rule in &config.slicing_rules {
                for &tau in &config.tau_values {
                    keys.push(CellKey { estimator: Estimator::OversampledDac, k, rule: Some(rule), tau: Some(tau) });
                }
            }
        }
    }
    keys
}

#[derive(Debug, Clone)]
struct Outcome {
    mse: f64,
    slices: usize,
    node_min: usize,
    node_mean: f64,
    node_max: usize,
    pre: usize,
    post: usize,
    bound_ok: bool,
    seconds: f64,
}

type UnitResult = (Selection, Vec<std::result::Result<Outcome, String>>);

/// Fits and scores every cell on one dataset. `target` is what predictions
/// at `eval_x` are compared against.
fn score_cells(
    keys: &[CellKey],
    train: &Dataset,
    spec: &KernelSpec,
    lambda: f64,
    eval_x: &ndarray::Array2<f64>,
    target: &[f64],
    unit_seed: u64,
    config: &ExperimentConfig,
) -> Vec<std::result::Result<Outcome, String>> {
    keys.iter()
        .map(|key| {
            let settings = PlanSettings {
                estimator: key.estimator,
                k: key.k,
                rule: key.rule.unwrap_or(SlicingRule::Fixed(1)),
                tau: key.tau.unwrap_or(1.0),
                seed: derive_seed(unit_seed, Stream::Partition, &[key.k as u64]),
            };
            let run = || -> Result<Outcome> {
                let start = Instant::now();
                let (plan, recipe, slices) = build_plan(train.y_slice(), &settings)?;
                let model = fit_dac(
                    train,
                    &plan,
                    spec,
                    lambda,
                    recipe,
                    FitOptions { workers: 0, node_ridge: config.node_ridge },
                )?;
                let seconds = start.elapsed().as_secs_f64();
                let pred = predict_dac(&model, eval_x.view())?;
                let sizes = plan.node_sizes();
                let n = train.n();
                Ok(Outcome {
                    mse: mse_against_truth(pred.as_slice().expect("contiguous"), target)?,
                    slices,
                    node_min: *sizes.iter().min().expect("k >= 1"),
                    node_mean: sizes.iter().sum::<usize>() as f64 / sizes.len() as f64,
                    node_max: *sizes.iter().max().expect("k >= 1"),
                    pre: plan.pre_dedup_total,
                    post: plan.post_dedup_total,
                    bound_ok: plan.validate(n).is_ok() && plan.post_dedup_total <= plan.pre_dedup_total && plan.pre_dedup_total <= slices * n,
                    seconds,
                })
            };
            run().map_err(|e| e.to_string())
        })
        .collect()
}

fn synthetic_unit(config: &ExperimentConfig, keys: &[CellKey], n: usize, d: usize, r: usize) -> UnitResult {
    let unit_seed = derive_seed(config.master_seed, Stream::Replicate, &[n as u64, d as u64, r as u64]);
    let mut selection = Selection { n, d, replicate: r, kernel: None, lambda: None, error: None };
    let prepared = (|| -> Result<_> {
        let (data, truth) = generate(&SynthSpec { shape: config.shape, n, d, noise_sd: config.noise_sd, seed: unit_seed })?;
        let (spec, lambda) = resolve_tuning(&data, &config.tuning(), unit_seed)?;
        let grid = test_points(d, config.test_grid_size, unit_seed);
        let target = truth.eval_rows(&grid)?.to_vec();
        Ok((data, spec, lambda, grid, target))
    })();
    match prepared {
        Ok((data, spec, lambda, grid, target)) => {
            selection.kernel = Some(spec);
            selection.lambda = Some(lambda);
            let outcomes = score_cells(keys, &data, &spec, lambda, &grid, &target, unit_seed, config);
            (selection, outcomes)
        }
        Err(e) => {
            let msg = e.to_string();
            selection.error = Some(msg.clone());
            (selection, vec![Err(msg); keys.len()])
        }
    }
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

fn aggregate(key: &CellKey, n: usize, d: usize, outcomes: &[&std::result::Result<Outcome, String>]) -> CellRecord {
    let ok: Vec<&Outcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let error = outcomes
        .iter()
        .enumerate()
        .find_map(|(r, o)| o.as_ref().err().map(|e| format!("replicate {r}: {e}")));
    let m = ok.len();
    let mean = |f: &dyn Fn(&Outcome) -> f64| (m > 0).then(|| ok.iter().map(|o| f(o)).sum::<f64>() / m as f64);
    let mean_mse = mean(&|o| o.mse);
    let se_mse = mean_mse.map(|mu| {
        if m < 2 {
            0.0
        } else {
            let var = ok.iter().map(|o| (o.mse - mu) * (o.mse - mu)).sum::<f64>() / (m - 1) as f64;
            (var / m as f64).sqrt()
        }
    });
    CellRecord {
        estimator: key.estimator,
        n,
        d,
        k: key.k,
        slicing: key.rule,
        tau: key.tau,
        replicate_mse: outcomes.iter().map(|o| o.as_ref().ok().map(|o| o.mse)).collect(),
        mean_mse,
        se_mse,
        mean_slices: mean(&|o| o.slices as f64),
        node_size_min: ok.iter().map(|o| o.node_min).min(),
        node_size_mean: mean(&|o| o.node_mean),
        node_size_max: ok.iter().map(|o| o.node_max).max(),
        mean_pre_dedup_total: mean(&|o| o.pre as f64),
        mean_post_dedup_total: mean(&|o| o.post as f64),
        bound_holds: ok.iter().all(|o| o.bound_ok),
        mean_fit_seconds: mean(&|o| o.seconds),
        error,
    }
}

fn assemble(config: &ExperimentConfig, keys: &[CellKey], groups: Vec<((usize, usize), Vec<UnitResult>)>) -> ExperimentReport {
    let mut selections = Vec::new();
    let mut cells = Vec::new();
    for ((n, d), units) in groups {
        for (ci, key) in keys.iter().enumerate() {
            let outcomes: Vec<_> = units.iter().map(|(_, o)| &o[ci]).collect();
            cells.push(aggregate(key, n, d, &outcomes));
        }
        selections.extend(units.into_iter().map(|(s, _)| s));
    }
    ExperimentReport { config: config.clone(), selections, cells }
}

/// Runs a synthetic experiment. Failing cells are reported, not raised;
/// only an invalid config is an error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if config.data.is_some() {
        return Err(Error::Config("config names a data file; use run_real_data".into()));
    }
    let keys = cell_keys(config);
    let units: Vec<(usize, usize, usize)> = config
        .n_values
        .iter()
        .flat_map(|&n| config.d_values.iter().flat_map(move |&d| (0..config.replicates).map(move |r| (n, d, r))))
        .collect();
    let results: Vec<UnitResult> =
        in_pool(config.workers, || units.par_iter().map(|&(n, d, r)| synthetic_unit(config, &keys, n, d, r)).collect())?;

    let mut groups = Vec::new();
    let mut it = results.into_iter();
    for &n in &config.n_values {
        for &d in &config.d_values {
            groups.push(((n, d), it.by_ref().take(config.replicates).collect()));
        }
    }
    Ok(assemble(config, &keys, groups))
}

/// Repeated stratified train/test evaluation on observed data.
///
/// Each replicate holds out `test_fraction` of every response slice (slices
/// from the first configured rule), tunes on the training part, and scores
/// each estimator by squared error against the held-out responses.
pub fn run_real_data(data: &Dataset, config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut config = config.clone();
    config.n_values = vec![data.n()];
    config.d_values = vec![data.dim()];
    config.validate()?;
    let keys = cell_keys(&config);
    let strata = make_slices(data.y_slice(), config.slicing_rules[0])?;
    let (n, d) = (data.n(), data.dim());

    let unit = |r: usize| -> UnitResult {
        let unit_seed = derive_seed(config.master_seed, Stream::Replicate, &[n as u64, d as u64, r as u64]);
        let mut selection = Selection { n, d, replicate: r, kernel: None, lambda: None, error: None };
        let prepared = (|| -> Result<_> {
            let (train, test) = stratified_split(data, config.test_fraction, &strata, derive_seed(unit_seed, Stream::Split, &[]))?;
            let (spec, lambda) = resolve_tuning(&train, &config.tuning(), unit_seed)?;
            Ok((train, test, spec, lambda))
        })();
        match prepared {
            Ok((train, test, spec, lambda)) => {
                selection.kernel = Some(spec);
                selection.lambda = Some(lambda);
                let outcomes = score_cells(&keys, &train, &spec, lambda, test.x(), test.y_slice(), unit_seed, &config);
                (selection, outcomes)
            }
            Err(e) => {
                let msg = e.to_string();
                selection.error = Some(msg.clone());
                (selection, vec![Err(msg); keys.len()])
            }
        }
    };
    let results: Vec<UnitResult> =
        in_pool(config.workers, || (0..config.replicates).into_par_iter().map(unit).collect())?;
    Ok(assemble(&config, &keys, vec![((n, d), results)]))
}
