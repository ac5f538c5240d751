//! Experiment configuration.
//!
//! A config file is flat `key = value` text, one setting per line, `#`
//! starting a comment. Keys are the long command-line flag names without the
//! dashes; list-valued keys take comma-separated values:
//!
//! ```text
//! estimator = full,dac,odac
//! shape = uni_peak
//! n = 2000,4000
//! d = 1
//! nodes = 20
//! slicing = scott
//! tau = 0.2,0.5,1
//! replicates = 20
//! seed = 7
//! ```

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dac::NodeRidge;
use crate::error::{Error, Result};
use crate::kernel::KernelFamily;
use crate::partition::SlicingRule;
use crate::synth::{Shape, DEFAULT_NOISE_SD};

use super::{BandwidthRule, Estimator, Tuning};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub estimators: Vec<Estimator>,
    pub shape: Shape,
    pub n_values: Vec<usize>,
    pub d_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub slicing_rules: Vec<SlicingRule>,
    pub tau_values: Vec<f64>,
    pub replicates: usize,
    pub master_seed: u64,
    pub test_grid_size: usize,
    pub noise_sd: f64,
    pub kernel: KernelFamily,
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    pub bandwidth: BandwidthRule,
    pub node_ridge: NodeRidge,
    /// CSV file for a real-data run; synthetic data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<String>,
    pub test_fraction: f64,
    /// Not part of the report: results do not depend on it.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            estimators: vec![Estimator::Full, Estimator::ClassicalDac, Estimator::OversampledDac],
            shape: Shape::UniPeak,
            n_values: vec![2000],
            d_values: vec![1],
            k_values: vec![20],
            slicing_rules: vec![SlicingRule::Scott],
            tau_values: vec![1.0],
            replicates: 20,
            master_seed: 0,
            test_grid_size: 2000,
            noise_sd: DEFAULT_NOISE_SD,
            kernel: KernelFamily::Gaussian,
            sigma: None,
            lambda: None,
            bandwidth: BandwidthRule::Median,
            node_ridge: NodeRidge::SharedTotal,
            data: None,
            response: None,
            features: Vec::new(),
            test_fraction: 0.1,
            workers: 0,
        }
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(format!("invalid value '{value}' for {key}: {why}"))
}

fn one<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| bad(key, value, e))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = value.split(',').map(|v| one(key, v)).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(bad(key, value, "empty list"));
    }
    Ok(items)
}

/// Parses `p/q` or a plain decimal.
fn fraction(key: &str, value: &str) -> Result<f64> {
    let v = value.trim();
    match v.split_once('/') {
        Some((p, q)) => {
            let p: f64 = one(key, p)?;
            let q: f64 = one(key, q)?;
            Ok(p / q)
        }
        None => one(key, v),
    }
}

impl ExperimentConfig {
    pub fn tuning(&self) -> Tuning {
        Tuning { kernel: self.kernel, sigma: self.sigma, lambda: self.lambda, bandwidth: self.bandwidth }
    }

    /// Sets one key; keys and values as in the config file.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "estimator" | "estimators" => self.estimators = list(key, value)?,
            "shape" => self.shape = one(key, value)?,
            "n" => self.n_values = list(key, value)?,
            "d" => self.d_values = list(key, value)?,
            "nodes" | "k" => self.k_values = list(key, value)?,
            "slicing" => self.slicing_rules = list(key, value)?,
            "tau" => {
                self.tau_values = value.split(',').map(|v| fraction(key, v)).collect::<Result<_>>()?;
            }
            "replicates" => self.replicates = one(key, value)?,
            "seed" => self.master_seed = one(key, value)?,
            "test-grid" => self.test_grid_size = one(key, value)?,
            "noise" => self.noise_sd = one(key, value)?,
            "kernel" => self.kernel = one(key, value)?,
            "sigma" => self.sigma = Some(one(key, value)?),
            "lambda" => self.lambda = Some(one(key, value)?),
            "bandwidth" => self.bandwidth = one(key, value)?,
            "ridge" => self.node_ridge = one(key, value)?,
            "workers" => self.workers = one(key, value)?,
            "data" => self.data = Some(value.trim().to_string()),
            "response" => self.response = Some(value.trim().to_string()),
            "features" => self.features = value.split(',').map(|s| s.trim().to_string()).collect(),
            "test-fraction" => self.test_fraction = fraction(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", i + 1)))?;
            self.apply(key, value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.estimators.is_empty() {
            return fail("no estimators selected".into());
        }
        if self.replicates == 0 {
            return fail("replicates must be at least 1".into());
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return fail("node counts must be positive".into());
        }
        if self.slicing_rules.is_empty() || self.tau_values.is_empty() {
            return fail("slicing rules and tau values must be nonempty".into());
        }
        if let Some(t) = self.tau_values.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return fail(format!("tau must lie in (0, 1], got {t}"));
        }
        if self.test_grid_size == 0 {
            return fail("test grid must have at least one point".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return fail(format!("noise sd must be finite and nonnegative, got {}", self.noise_sd));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail(format!("test fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        if let Some(s) = self.sigma.filter(|s| !(*s > 0.0 && s.is_finite())) {
            return fail(format!("sigma must be positive, got {s}"));
        }
        if let Some(l) = self.lambda.filter(|l| !(*l > 0.0 && l.is_finite())) {
            return fail(format!("lambda must be positive, got {l}"));
        }
        if self.data.is_none() {
            if self.n_values.is_empty() || self.n_values.contains(&0) || self.d_values.is_empty() || self.d_values.contains(&0)
            {
                return fail("sample sizes and dimensions must be positive".into());
            }
            let n_min = *self.n_values.iter().min().expect("nonempty");
            if let Some(k) = self.k_values.iter().find(|&&k| k > n_min) {
                return fail(format!("{k} nodes exceed the smallest sample size {n_min}"));
            }
        } else if self.response.is_none() {
            return fail("a data file needs a response column".into());
        }
        Ok(())
    }
}
