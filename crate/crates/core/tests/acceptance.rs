//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if a required criterion fails. Criterion 8 is advisory
//! and only warns.

use std::process::{Command, ExitCode};
use std::time::Instant;

use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skewkrr::dac::{fit_dac, predict_dac, FitOptions, NodeRidge, PlanRecipe};
use skewkrr::harness::experiment::strip_timing;
use skewkrr::harness::split::stratum_test_size;
use skewkrr::harness::{run_experiment, stratified_split, BandwidthRule, Estimator, ExperimentConfig, ExperimentReport};
use skewkrr::krr::{fit, median_bandwidth, predict, select_lambda, default_lambda_grid};
use skewkrr::partition::{classical_plan, copy_count, make_slices, oversample_plan, slice_count, SlicingRule};
use skewkrr::rng::{derive_seed, Stream};
use skewkrr::synth::{generate, peak, test_points, Shape, SynthSpec};
use skewkrr::{gram, regularized_solve, Dataset, KernelSpec};

enum Verdict {
    Pass,
    Fail,
    Warn,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn check(ok: bool, detail: String) -> Outcome {
    Outcome { verdict: if ok { Verdict::Pass } else { Verdict::Fail }, detail }
}

fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    for &n in &[50usize, 500] {
        for &d in &[1usize, 2] {
            let seed = derive_seed(1, Stream::Replicate, &[n as u64, d as u64]);
            let (data, _) = generate(&SynthSpec { shape: Shape::UniPeak, n, d, noise_sd: 0.1, seed }).unwrap();
            let sigma = median_bandwidth(data.x().view(), 1000, seed).unwrap();
            let spec = KernelSpec::gaussian(sigma).unwrap();
            let lambda = select_lambda(&data, &spec, &default_lambda_grid(), n, 0.2, seed).unwrap();
            let grid = test_points(d, 500, seed);
            let full = predict(&fit(&data, &spec, lambda).unwrap(), grid.view()).unwrap();

            let classical = classical_plan(n, 1, seed).unwrap();
            let m = fit_dac(&data, &classical, &spec, lambda, PlanRecipe::Classical { n, k: 1, seed }, FitOptions::default()).unwrap();
            worst = worst.max(max_abs_diff(&predict_dac(&m, grid.view()).unwrap(), &full));

            let slices = make_slices(data.y_slice(), SlicingRule::Fixed(1)).unwrap();
            let over = oversample_plan(data.y_slice(), &slices, 1.0, 1, seed).unwrap();
            let recipe = PlanRecipe::Oversampled { n, k: 1, seed, rule: SlicingRule::Fixed(1), slices: 1, tau: 1.0 };
            let m = fit_dac(&data, &over, &spec, lambda, recipe, FitOptions::default()).unwrap();
            worst = worst.max(max_abs_diff(&predict_dac(&m, grid.view()).unwrap(), &full));
        }
    }
    check(worst <= 1e-8, format!("max |dac - full| = {worst:.3e} (limit 1e-8)"))
}

/// Gaussian elimination with partial pivoting.
fn lu_solve(a: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| m[[p, col]].abs().total_cmp(&m[[q, col]].abs())).unwrap();
        if piv != col {
            for c in 0..n {
                m.swap([col, c], [piv, c]);
            }
            rhs.swap(col, piv);
        }
        for r in col + 1..n {
            let f = m[[r, col]] / m[[col, col]];
            for c in col..n {
                m[[r, c]] -= f * m[[col, c]];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[[r, c]] * x[c]).sum();
        x[r] = (rhs[r] - s) / m[[r, r]];
    }
    x
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=200);
        let d = rng.random_range(1..=3);
        let pts = Array2::from_shape_fn((n, d), |_| rng.random::<f64>());
        let spec = KernelSpec::gaussian(rng.random_range(0.1..1.0)).unwrap();
        let k = gram(&spec, pts.view()).unwrap();
        let ridge = 10f64.powf(rng.random_range(-2.0..0.0));
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let beta = regularized_solve(&k, &y, ridge).unwrap();
        let mut a = k.entries().clone();
        for i in 0..n {
            a[[i, i]] += ridge;
        }
        let oracle = lu_solve(&a, &y);
        worst = beta.iter().zip(&oracle).fold(worst, |m, (b, o)| m.max((b - o).abs()));
    }
    check(worst <= 1e-9, format!("100 systems, max entrywise gap {worst:.3e} (limit 1e-9)"))
}

/// The shared run behind criteria 3 to 5: uni-peak, d = 1, n = 2000,
/// noise 0.1, k = 20, 20 replicates, one master seed.
fn skew_run() -> ExperimentReport {
    let config = ExperimentConfig {
        estimators: vec![Estimator::ClassicalDac, Estimator::OversampledDac],
        shape: Shape::UniPeak,
        n_values: vec![2000],
        d_values: vec![1],
        k_values: vec![20],
        slicing_rules: vec![SlicingRule::Scott, SlicingRule::Fixed(3)],
        tau_values: vec![0.2, 0.5, 1.0],
        replicates: 20,
        master_seed: 20,
        test_grid_size: 2000,
        noise_sd: 0.1,
        bandwidth: BandwidthRule::Holdout,
        ..ExperimentConfig::default()
    };
    run_experiment(&config).unwrap()
}

fn odac(r: &ExperimentReport, rule: SlicingRule, tau: f64) -> &skewkrr::harness::CellRecord {
    r.cell(Estimator::OversampledDac, 2000, 1, 20, Some(rule), Some(tau)).unwrap()
}

fn criterion_3(r: &ExperimentReport, secs: f64) -> Outcome {
    let cl = r.cell(Estimator::ClassicalDac, 2000, 1, 20, None, None).unwrap();
    let ov = odac(r, SlicingRule::Scott, 1.0);
    let wins = cl
        .replicate_mse
        .iter()
        .zip(&ov.replicate_mse)
        .filter(|(c, o)| matches!((c, o), (Some(c), Some(o)) if o < c))
        .count();
    let (mc, mo) = (cl.mean_mse.unwrap(), ov.mean_mse.unwrap());
    check(
        mo < mc && wins >= 15 && secs < 300.0,
        format!("mean mse oversampled {mo:.4e} vs classical {mc:.4e}, oversampled wins {wins}/20, run {secs:.0}s"),
    )
}

fn criterion_4(r: &ExperimentReport) -> Outcome {
    let cells: Vec<_> = [0.2, 0.5, 1.0].iter().map(|&t| odac(r, SlicingRule::Scott, t)).collect();
    // a larger tau may exceed a smaller one by at most the larger of the two
    // standard errors
    let ok = cells.windows(2).all(|w| {
        let (lo, hi) = (w[0], w[1]);
        hi.mean_mse.unwrap() <= lo.mean_mse.unwrap() + hi.se_mse.unwrap().max(lo.se_mse.unwrap())
    });
    let shown: Vec<String> = cells
        .iter()
        .map(|c| format!("tau={} {:.4e}+-{:.1e}", c.tau.unwrap(), c.mean_mse.unwrap(), c.se_mse.unwrap()))
        .collect();
    check(ok, shown.join(", "))
}

fn criterion_5(r: &ExperimentReport) -> Outcome {
    let scott = odac(r, SlicingRule::Scott, 1.0);
    let fixed = odac(r, SlicingRule::Fixed(3), 1.0);
    let (ms, mf) = (scott.mean_mse.unwrap(), fixed.mean_mse.unwrap());
    let se = scott.se_mse.unwrap().max(fixed.se_mse.unwrap());
    check(
        ms <= mf + se,
        format!("scott {ms:.4e} (l~{:.0}) vs fixed:3 {mf:.4e}, allowance {se:.1e}", scott.mean_slices.unwrap()),
    )
}

fn criterion_6() -> Outcome {
    // Fixed kernel and lambda; the sample size doubles, and with it the
    // post-de-duplication total.
    let spec = KernelSpec::gaussian(0.1).unwrap();
    let lambda = 1e-4;
    let at = array![[0.5]];
    let mut stats = Vec::new();
    for &n in &[1000usize, 2000] {
        let mut preds = Vec::new();
        let mut total = 0.0;
        for r in 0..50u64 {
            let seed = derive_seed(6, Stream::Replicate, &[n as u64, r]);
            let (data, _) = generate(&SynthSpec { shape: Shape::UniPeak, n, d: 1, noise_sd: 0.1, seed }).unwrap();
            let slices = make_slices(data.y_slice(), SlicingRule::Scott).unwrap();
            let plan = oversample_plan(data.y_slice(), &slices, 1.0, 20, derive_seed(seed, Stream::Partition, &[])).unwrap();
            total += plan.post_dedup_total as f64 / 50.0;
            let recipe = PlanRecipe::Full { n };
            let m = fit_dac(&data, &plan, &spec, lambda, recipe, FitOptions { workers: 0, node_ridge: NodeRidge::SharedTotal }).unwrap();
            preds.push(predict_dac(&m, at.view()).unwrap()[0]);
        }
        let mean = preds.iter().sum::<f64>() / preds.len() as f64;
        let var = preds.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (preds.len() - 1) as f64;
        stats.push((total, var));
    }
    let ratio = stats[1].1 / stats[0].1;
    check(
        (0.35..=0.75).contains(&ratio),
        format!(
            "N~ {:.0} -> {:.0} ({:.2}x), variance {:.3e} -> {:.3e}, ratio {ratio:.3} (band 0.35..0.75)",
            stats[0].0,
            stats[1].0,
            stats[1].0 / stats[0].0,
            stats[0].1,
            stats[1].1
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = Vec::new();
    for case in 0..200 {
        let n = rng.random_range(2..400);
        let kind = case % 4;
        let y: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                match kind {
                    0 => (-u.ln()).powi(3),
                    1 => u,
                    2 => (6.0 * u).floor(),
                    _ => if u < 0.97 { 0.0 } else { 1.0 + u },
                }
            })
            .collect();
        let rule = match rng.random_range(0..4) {
            0 => SlicingRule::Fixed(rng.random_range(1..40)),
            1 => SlicingRule::Scott,
            2 => SlicingRule::Sturges,
            _ => SlicingRule::FreedmanDiaconis,
        };
        let tau = rng.random_range(0.01..=1.0);
        let k = rng.random_range(1..=n.min(50));
        let seed = rng.random::<u64>();
        let slices = make_slices(&y, rule).unwrap();
        let plan = oversample_plan(&y, &slices, tau, k, seed).unwrap();
        let ok = plan.validate(n).is_ok()
            && plan.post_dedup_total <= plan.pre_dedup_total
            && plan.pre_dedup_total <= slices.len() * n;
        if !ok {
            bad.push(format!("case {case} ({rule}, tau {tau:.2}, k {k}, n {n})"));
        }
    }
    check(bad.is_empty(), format!("200 plans, {} violations {}", bad.len(), bad.join("; ")))
}

fn criterion_8() -> Outcome {
    let n = 5000;
    let seed = derive_seed(8, Stream::Replicate, &[]);
    let (data, _) = generate(&SynthSpec { shape: Shape::UniPeak, n, d: 1, noise_sd: 0.1, seed }).unwrap();
    let spec = KernelSpec::gaussian(median_bandwidth(data.x().view(), 1000, seed).unwrap()).unwrap();
    let lambda = 1e-4;
    let time = |oversample: bool| {
        let mut best = f64::INFINITY;
        let mut total = 0;
        for rep in 0..3 {
            let start = Instant::now();
            let plan = if oversample {
                let slices = make_slices(data.y_slice(), SlicingRule::Fixed(5)).unwrap();
                oversample_plan(data.y_slice(), &slices, 1.0, 20, rep).unwrap()
            } else {
                classical_plan(n, 20, rep).unwrap()
            };
            fit_dac(&data, &plan, &spec, lambda, PlanRecipe::Full { n }, FitOptions::default()).unwrap();
            best = best.min(start.elapsed().as_secs_f64());
            total = plan.post_dedup_total;
        }
        (best, total)
    };
    let (tc, _) = time(false);
    let (to, total) = time(true);
    let ratio = to / tc;
    Outcome {
        verdict: if ratio <= 5.0 { Verdict::Pass } else { Verdict::Warn },
        detail: format!("classical {tc:.3}s, oversampled {to:.3}s (N~ {total}), ratio {ratio:.2} (soft limit 5)"),
    }
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.cfg");
    std::fs::write(
        &cfg,
        "estimator = full,dac,odac\nn = 400\nd = 1,2\nnodes = 4,8\nslicing = scott,sturges\ntau = 0.5,1\nreplicates = 3\nseed = 99\ntest-grid = 300\nbandwidth = holdout\n",
    )
    .unwrap();
    let start = Instant::now();
    let mut bodies = Vec::new();
    for workers in ["1", "4"] {
        let out = dir.path().join(format!("report{workers}.json"));
        let status = Command::new(env!("CARGO_BIN_EXE_skewkrr"))
            .args(["bench", "--config"])
            .arg(&cfg)
            .args(["--workers", workers, "--out"])
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return check(false, format!("bench failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        strip_timing(&mut v);
        let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
        // drop the timing column from the flat table as well
        let csv: Vec<String> = csv
            .lines()
            .map(|l| if l.starts_with('#') { l.to_string() } else { l.split(',').enumerate().filter(|(i, _)| *i != 17).map(|(_, f)| f).collect::<Vec<_>>().join(",") })
            .collect();
        bodies.push((serde_json::to_string(&v).unwrap(), csv));
    }
    let secs = start.elapsed().as_secs_f64();
    let same = bodies[0] == bodies[1];
    check(same && secs < 120.0, format!("workers 1 vs 4: bodies identical = {same}, {secs:.1}s"))
}

fn criterion_10() -> Outcome {
    let c = [0.3, 0.6];
    let p = peak(&c, &c).unwrap();
    let want = 2.0 * (0.2 * std::f64::consts::PI).sin();
    let sturges = slice_count(&(0..1024).map(f64::from).collect::<Vec<_>>(), SlicingRule::Sturges).unwrap();
    let copies = copy_count(100, 30, 1.0).unwrap();

    let mut y = vec![0.0; 100];
    y.extend(vec![1.0; 30]);
    let n = y.len();
    let data = Dataset::new(Array2::from_shape_fn((n, 1), |(i, _)| i as f64), Array1::from(y)).unwrap();
    let strata = make_slices(data.y_slice(), SlicingRule::Fixed(2)).unwrap();
    let (_, test) = stratified_split(&data, 0.1, &strata, 10).unwrap();
    let high = test.y_slice().iter().filter(|&&v| v == 1.0).count();
    let split = (test.n() - high, high);

    let ok = (p - want).abs() <= 1e-9
        && sturges == 11
        && copies == 3
        && split == (10, 3)
        && (stratum_test_size(100, 0.1), stratum_test_size(30, 0.1)) == (10, 3);
    check(
        ok,
        format!("peak(c,c) = {p:.12} (want {want:.12}), sturges(1024) = {sturges}, copy_count(100,30,1) = {copies}, split (100,30)@0.1 = {split:?}"),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: usize, title: &str, o: Outcome| {
        let tag = match o.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Warn => "WARN",
        };
        println!("criterion {id:>2} [{tag}] {title}: {}", o.detail);
    };

    report(1, "reduction identity", criterion_1());
    report(2, "solver oracle", criterion_2());
    let start = Instant::now();
    let skew = skew_run();
    let secs = start.elapsed().as_secs_f64();
    report(3, "skew rescue", criterion_3(&skew, secs));
    report(4, "tau ordering", criterion_4(&skew));
    report(5, "slicing rule", criterion_5(&skew));
    report(6, "variance scaling", criterion_6());
    report(7, "N~ bound", criterion_7());
    report(8, "cost comparability", criterion_8());
    report(9, "determinism", criterion_9());
    report(10, "hand values", criterion_10());

    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all required criteria passed");
        ExitCode::SUCCESS
    }
}
