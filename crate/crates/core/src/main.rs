use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use ndarray::Axis;
use serde_json::json;

use skewkrr::dac::{predict_dac, DacModel, FitOptions, NodeRidge};
use skewkrr::error::Error;
use skewkrr::gram;
use skewkrr::harness::io::{csv_headers, default_feature_names, write_dataset, write_predictions, write_table};
use skewkrr::harness::{
    fit_estimator, load_csv, load_features, resolve_tuning, run_experiment, run_real_data, BandwidthRule, Estimator,
    ExperimentConfig, PlanSettings, Tuning,
};
use skewkrr::kernel::KernelFamily;
use skewkrr::partition::{copy_count, make_slices, SlicingRule};
use skewkrr::rng::{stream_rng, Stream};
use skewkrr::spectrum::diagnose;
use skewkrr::synth::{generate, housing_like, Shape, SynthSpec, DEFAULT_NOISE_SD};

#[derive(Parser)]
#[command(name = "skewkrr", version, about = "Divide-and-conquer kernel ridge regression with response-adaptive oversampling")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "SKEWKRR_WORKERS")]
    workers: Option<usize>,
    /// gaussian, polynomial[:r] or min.
    #[arg(long, global = true)]
    kernel: Option<String>,
    /// Gaussian bandwidth; chosen from the data when omitted.
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Regularization; chosen by holdout validation when omitted.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Number of nodes k (comma list for bench).
    #[arg(long, global = true)]
    nodes: Option<String>,
    /// fixed:L, scott, sturges or fd (comma list for bench).
    #[arg(long, global = true)]
    slicing: Option<String>,
    /// Oversampling scale in (0, 1] (comma list for bench).
    #[arg(long, global = true)]
    tau: Option<String>,
    /// full, dac or odac (comma list for bench).
    #[arg(long, global = true)]
    estimator: Option<String>,
    /// Bandwidth rule when --sigma is omitted: median or holdout.
    #[arg(long, global = true)]
    bandwidth: Option<String>,
    /// Node ridge scaling: total (post-de-duplication total) or node (node size).
    #[arg(long, global = true)]
    ridge: Option<String>,
    /// Output path; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model from a CSV file and write it as JSON.
    Fit {
        data: PathBuf,
        #[arg(long, default_value = "y")]
        response: String,
        /// Comma-separated feature columns; all other columns by default.
        #[arg(long)]
        features: Option<String>,
    },
    /// Predict with a saved model.
    Predict { model: PathBuf, data: PathBuf },
    /// Write a synthetic dataset as CSV.
    Simulate {
        #[arg(long, default_value = "uni_peak")]
        shape: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value_t = DEFAULT_NOISE_SD)]
        noise: f64,
        /// Write the housing-style table instead.
        #[arg(long)]
        housing: bool,
    },
    /// Run a replicated experiment and write JSON and CSV reports.
    Bench(BenchArgs),
    /// Effective dimension and response-slice histogram of a dataset.
    Diagnose {
        data: PathBuf,
        #[arg(long, default_value = "y")]
        response: String,
        #[arg(long)]
        features: Option<String>,
        /// Rows used for the spectrum.
        #[arg(long, default_value_t = 2000)]
        probe: usize,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Flat key = value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    shape: Option<String>,
    /// Sample sizes (comma list).
    #[arg(long)]
    n: Option<String>,
    /// Dimensions (comma list).
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    #[arg(long = "test-grid")]
    test_grid: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    /// CSV file for a real-data run.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    features: Option<String>,
    #[arg(long = "test-fraction")]
    test_fraction: Option<String>,
    /// CSV report path; defaults to --out with a .csv extension.
    #[arg(long)]
    csv: Option<PathBuf>,
}

type CliResult<T> = Result<T, String>;

fn single<T: FromStr>(flag: &str, value: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| format!("invalid value '{value}' for --{flag}: {e}"))
}

fn or_default<T: FromStr>(flag: &str, value: &Option<String>, default: T) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value.as_deref().map_or(Ok(default), |v| single(flag, v))
}

fn fail(e: Error) -> String {
    e.to_string()
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| e.to_string()),
    }
}

fn feature_list(path: &Path, response: &str, features: &Option<String>) -> CliResult<Vec<String>> {
    match features {
        Some(f) => Ok(f.split(',').map(|s| s.trim().to_string()).collect()),
        None => Ok(csv_headers(path).map_err(fail)?.into_iter().filter(|h| h != response).collect()),
    }
}

fn tuning(g: &Global) -> CliResult<Tuning> {
    Ok(Tuning {
        kernel: or_default("kernel", &g.kernel, KernelFamily::Gaussian)?,
        sigma: g.sigma,
        lambda: g.lambda,
        bandwidth: or_default("bandwidth", &g.bandwidth, BandwidthRule::Median)?,
    })
}

fn cmd_fit(g: &Global, data: &Path, response: &str, features: &Option<String>) -> CliResult<()> {
    let features = feature_list(data, response, features)?;
    let dataset = load_csv(data, response, &features).map_err(fail)?;
    let seed = g.seed.unwrap_or(0);
    let settings = PlanSettings {
        estimator: or_default("estimator", &g.estimator, Estimator::OversampledDac)?,
        k: or_default("nodes", &g.nodes, 20usize)?,
        rule: or_default("slicing", &g.slicing, SlicingRule::Scott)?,
        tau: or_default("tau", &g.tau, 1.0f64)?,
        seed: skewkrr::rng::derive_seed(seed, Stream::Partition, &[]),
    };
    let options = FitOptions {
        workers: g.workers.unwrap_or(0),
        node_ridge: or_default("ridge", &g.ridge, NodeRidge::SharedTotal)?,
    };
    let (spec, lambda) = resolve_tuning(&dataset, &tuning(g)?, seed).map_err(fail)?;
    let mut model = fit_estimator(&dataset, &spec, lambda, &settings, options).map_err(fail)?;
    model.feature_columns = features;
    emit(&g.out, &model.to_json().map_err(fail)?)
}

fn cmd_predict(g: &Global, model: &Path, data: &Path) -> CliResult<()> {
    let text = fs::read_to_string(model).map_err(|e| format!("cannot read {}: {e}", model.display()))?;
    let model = DacModel::from_json(&text).map_err(fail)?;
    let features = if model.feature_columns.is_empty() {
        default_feature_names(model.dim())
    } else {
        model.feature_columns.clone()
    };
    let x = load_features(data, &features).map_err(fail)?;
    let preds = predict_dac(&model, x.view()).map_err(fail)?;
    match &g.out {
        Some(p) => {
            let mut f = fs::File::create(p).map_err(|e| format!("cannot write {}: {e}", p.display()))?;
            write_predictions(&mut f, &preds).map_err(fail)
        }
        None => write_predictions(&mut io::stdout(), &preds).map_err(fail),
    }
}

fn cmd_simulate(g: &Global, shape: &str, n: usize, d: usize, noise: f64, housing: bool) -> CliResult<()> {
    let out = g.out.as_ref().ok_or("simulate needs --out")?;
    let seed = g.seed.unwrap_or(0);
    if housing {
        let (names, table) = housing_like(n, seed).map_err(fail)?;
        let names: Vec<String> = names.into_iter().map(String::from).collect();
        return write_table(out, &names, &table).map_err(fail);
    }
    let shape: Shape = single("shape", shape)?;
    let (data, _) = generate(&SynthSpec { shape, n, d, noise_sd: noise, seed }).map_err(fail)?;
    write_dataset(out, &default_feature_names(d), "y", &data).map_err(fail)
}

fn cmd_bench(g: &Global, b: &BenchArgs) -> CliResult<()> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = &b.config {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        config.apply_text(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    let flags: [(&str, Option<String>); 21] = [
        ("seed", g.seed.map(|s| s.to_string())),
        ("workers", g.workers.map(|w| w.to_string())),
        ("kernel", g.kernel.clone()),
        ("sigma", g.sigma.map(|s| s.to_string())),
        ("lambda", g.lambda.map(|s| s.to_string())),
        ("nodes", g.nodes.clone()),
        ("slicing", g.slicing.clone()),
        ("tau", g.tau.clone()),
        ("estimator", g.estimator.clone()),
        ("bandwidth", g.bandwidth.clone()),
        ("ridge", g.ridge.clone()),
        ("shape", b.shape.clone()),
        ("n", b.n.clone()),
        ("d", b.d.clone()),
        ("replicates", b.replicates.clone()),
        ("test-grid", b.test_grid.clone()),
        ("noise", b.noise.clone()),
        ("data", b.data.clone()),
        ("response", b.response.clone()),
        ("features", b.features.clone()),
        ("test-fraction", b.test_fraction.clone()),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            config.apply(key, &v).map_err(|e| format!("--{key}: {e}"))?;
        }
    }
    config.validate().map_err(fail)?;

    let report = match config.data.clone() {
        Some(path) => {
            let path = PathBuf::from(path);
            let response = config.response.clone().expect("validated");
            let features = if config.features.is_empty() {
                feature_list(&path, &response, &None)?
            } else {
                config.features.clone()
            };
            let data = load_csv(&path, &response, &features).map_err(fail)?;
            config.features = features;
            run_real_data(&data, &config)
        }
        None => run_experiment(&config),
    }
    .map_err(fail)?;

    for c in &report.cells {
        let label = match (c.slicing, c.tau) {
            (Some(rule), Some(tau)) => format!("{} {rule} tau={tau}", c.estimator),
            _ => c.estimator.to_string(),
        };
        let mse = c.mean_mse.map_or("failed".to_string(), |m| format!("{m:.6e} +- {:.2e}", c.se_mse.unwrap_or(0.0)));
        eprintln!("n={} d={} k={} {label}: mse {mse}", c.n, c.d, c.k);
    }
    let json = report.to_json().map_err(fail)?;
    emit(&g.out, &json)?;
    let csv_path = b.csv.clone().or_else(|| g.out.as_ref().map(|p| p.with_extension("csv")));
    if let Some(p) = csv_path {
        fs::write(&p, report.to_csv().map_err(fail)?).map_err(|e| format!("cannot write {}: {e}", p.display()))?;
    }
    Ok(())
}

fn cmd_diagnose(g: &Global, data: &Path, response: &str, features: &Option<String>, probe: usize) -> CliResult<()> {
    use rand::seq::index::sample;

    let features = feature_list(data, response, features)?;
    let dataset = load_csv(data, response, &features).map_err(fail)?;
    let seed = g.seed.unwrap_or(0);
    let (spec, lambda) = resolve_tuning(&dataset, &tuning(g)?, seed).map_err(fail)?;

    let n = dataset.n();
    let rows: Vec<usize> = if n > probe {
        let mut rng = stream_rng(seed, Stream::Split, &[]);
        let mut r = sample(&mut rng, n, probe).into_vec();
        r.sort_unstable();
        r
    } else {
        (0..n).collect()
    };
    let x = dataset.x().select(Axis(0), &rows);
    let k = gram(&spec, x.view()).map_err(fail)?;
    let spectrum = diagnose(&k, lambda).map_err(fail)?;

    let rule: SlicingRule = or_default("slicing", &g.slicing, SlicingRule::Scott)?;
    let tau: f64 = or_default("tau", &g.tau, 1.0)?;
    let slices = make_slices(dataset.y_slice(), rule).map_err(fail)?;
    let largest = slices.counts.iter().copied().max().unwrap_or(0);
    let copies: Vec<usize> = slices
        .counts
        .iter()
        .map(|&c| if c == 0 { Ok(0) } else { copy_count(largest, c, tau) })
        .collect::<Result<_, _>>()
        .map_err(fail)?;
    let oversampled: usize = copies.iter().zip(&slices.counts).map(|(a, b)| a * b).sum();

    let report = json!({
        "n": n,
        "d": dataset.dim(),
        "response": response,
        "features": features,
        "kernel": spec,
        "lambda": lambda,
        "spectrum_rows": rows.len(),
        "d_lambda": spectrum.d_lambda,
        "leading_eigenvalues": spectrum.eigenvalues.iter().take(10).collect::<Vec<_>>(),
        "slicing": {
            "rule": rule,
            "slices": slices.len(),
            "boundaries": slices.boundaries,
            "counts": slices.counts,
            "copies": copies,
            "tau": tau,
            "oversampled_total": oversampled,
        },
    });
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    text.push('\n');
    emit(&g.out, &text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match &cli.command {
        Command::Fit { data, response, features } => cmd_fit(g, data, response, features),
        Command::Predict { model, data } => cmd_predict(g, model, data),
        Command::Simulate { shape, n, d, noise, housing } => cmd_simulate(g, shape, *n, *d, *noise, *housing),
        Command::Bench(b) => cmd_bench(g, b),
        Command::Diagnose { data, response, features, probe } => cmd_diagnose(g, data, response, features, *probe),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
