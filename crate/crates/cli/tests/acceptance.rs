//! Acceptance checks at full scale.
//!
//! Each criterion is its own test and prints one `PASS` or `FAIL` line to the
//! real stdout, so the lines show up even when the harness captures output.
//! The convergence criteria read the reports of the `paper` preset, which is
//! run twice through the binary (4 workers, then 1) so the same runs also
//! decide reproducibility. Expect the whole target to take tens of minutes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use hedgesim::analysis::{
    limit_constants, run_convergence_study, theoretical_rebalance_limit, DiscountVariant, QuadratureConfig, StudyConfig,
};
use hedgesim::hedge::StrategySpec;
use hedgesim::limits::{branch_probability, collect_gap_batch, GapBatchConfig, NormalizedGapBatch, TestFunction};
use hedgesim::pricing::{ProbeGrid, DELTA_CLIP};
use hedgesim::{bs_closed_form, pde_surface, ContractSpec, MarketModel, PdeGridConfig, PricingSurface, RngPolicy};
use serde_json::Value;

const S0: f64 = 100.0;
const SIGMA: f64 = 0.2;
const SEED: u64 = 20_240_917;

/// `(1/6) s0^2 (e^{sigma^2 T} - 1)` with `r = 0`, `T = 1`.
fn adaptive_oracle() -> f64 {
    S0 * S0 * ((SIGMA * SIGMA).exp() - 1.0) / 6.0
}

/// `s0^2 (e^{sigma^2 T} - 1)`.
fn bound_oracle() -> f64 {
    S0 * S0 * ((SIGMA * SIGMA).exp() - 1.0)
}

fn report(criterion: u32, pass: bool, detail: String) {
    let line = format!(
        "criterion {criterion:>2}: {} {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "criterion {criterion} failed: {detail}");
}

struct PaperRuns {
    _dir: tempfile::TempDir,
    four: PathBuf,
    one: PathBuf,
    summary: Value,
}

fn run_paper(out: &Path, workers: &str) {
    let status = Command::new(env!("CARGO_BIN_EXE_hedgesim"))
        .args(["convergence", "--preset", "paper", "--out"])
        .arg(out)
        .args(["--workers", workers, "--seed", &SEED.to_string()])
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .status()
        .expect("binary runs");
    // exit 4 still leaves complete reports behind
    assert!(matches!(status.code(), Some(0 | 4)), "paper run failed with {status}");
}

fn paper() -> &'static PaperRuns {
    static RUNS: OnceLock<PaperRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let four = dir.path().join("w4");
        let one = dir.path().join("w1");
        run_paper(&four, "4");
        run_paper(&one, "1");
        let summary = serde_json::from_str(&fs::read_to_string(four.join("paper/summary.json")).unwrap()).unwrap();
        PaperRuns {
            _dir: dir,
            four,
            one,
            summary,
        }
    })
}

fn study(kind: &str) -> &'static Value {
    paper().summary["studies"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["kind"] == kind)
        .expect("study present")
}

fn constant(name: &str) -> f64 {
    paper().summary["constants"][name].as_f64().unwrap()
}

fn level(kind: &str, parameter: f64) -> &'static Value {
    study(kind)["levels"]
        .as_array()
        .unwrap()
        .iter()
        .find(|l| l["parameter"].as_f64() == Some(parameter))
        .expect("level present")
}

fn mean_se(v: &Value) -> (f64, f64) {
    (v["mean"].as_f64().unwrap(), v["se"].as_f64().unwrap())
}

#[test]
fn c01_adaptive_error_constant() {
    let target = adaptive_oracle();
    let quad = constant("adaptive_double");
    let mut devs = Vec::new();
    for eta in [0.05, 0.02, 0.01] {
        let (m, se) = mean_se(&level("adaptive", eta)["scaled_error"]);
        devs.push((eta, m, se, (m - target).abs()));
    }
    let (_, est, se, dev) = devs[2];
    let close = dev <= 0.05 * target;
    // a later deviation may exceed an earlier one only within the combined 95% band
    let monotone = devs
        .windows(2)
        .all(|w| w[1].3 <= w[0].3 + 1.96 * (w[0].2 * w[0].2 + w[1].2 * w[1].2).sqrt());
    let ladder: Vec<String> = devs.iter().map(|d| format!("{}: {:.2}±{:.2}", d.0, d.1, d.2)).collect();
    report(
        1,
        close && monotone && (quad - target).abs() < 1e-6 * target,
        format!(
            "E[R^2]/eta^2 at 0.01 = {est:.3} ± {se:.3} vs {target:.3} ({:+.1}%), ladder [{}], deviations non-increasing: {monotone}",
            100.0 * (est / target - 1.0),
            ladder.join(", ")
        ),
    );
}

#[test]
fn c02_rebalance_constant() {
    let model = MarketModel::black_scholes(0.0, S0, SIGMA).unwrap();
    let contract = ContractSpec::call(100.0, 1.0).unwrap();
    let surface = bs_closed_form(&model, &contract).unwrap();
    let coarse = theoretical_rebalance_limit(&model, &contract, &surface, &QuadratureConfig::default()).unwrap();
    let fine = QuadratureConfig {
        time_nodes: 48,
        space_nodes: 48,
        half_width_sd: 10.0,
    };
    let refined = theoretical_rebalance_limit(&model, &contract, &surface, &fine).unwrap();
    let stable = (refined / coarse - 1.0).abs() < 0.01;
    let target = constant("rebalance");
    let (m, se) = mean_se(&level("adaptive", 0.01)["scaled_count"]);
    report(
        2,
        stable && (m - target).abs() <= 0.05 * target,
        format!(
            "eta^2 E[N] at 0.01 = {m:.5} ± {se:.5} vs {target:.5} ({:+.2}%), refined quadrature {refined:.5}",
            100.0 * (m / target - 1.0)
        ),
    );
}

#[test]
fn c03_product_constant() {
    let target = constant("adaptive_double") * constant("rebalance");
    let (m, se) = mean_se(&level("adaptive", 0.01)["product"]);
    report(
        3,
        (m - target).abs() <= 0.08 * target,
        format!(
            "E[N] E[R^2] at 0.01 = {m:.3} ± {se:.3} vs {target:.3} ({:+.1}%)",
            100.0 * (m / target - 1.0)
        ),
    );
}

fn gap_batch() -> &'static NormalizedGapBatch {
    static BATCH: OnceLock<NormalizedGapBatch> = OnceLock::new();
    BATCH.get_or_init(|| {
        let model = MarketModel::black_scholes(0.0, S0, SIGMA).unwrap();
        let surface = bs_closed_form(&model, &ContractSpec::call(100.0, 1.0).unwrap()).unwrap();
        let config = GapBatchConfig {
            eta: 0.005,
            t: 0.5,
            paths: 100_000,
            ..GapBatchConfig::default()
        };
        collect_gap_batch(&model, &surface, &config, &RngPolicy::new(SEED)).unwrap()
    })
}

#[test]
fn c04_triangular_shape() {
    let batch = gap_batch();
    let ks = batch.ks().unwrap();
    let (m2, se2) = (batch.second_moment().mean, batch.second_moment().se);
    let second_ok = (m2 - 1.0 / 6.0).abs() <= 3.0 * se2;
    let f = batch.factorization(TestFunction::Square);
    let fact_ok = f.difference.within(0.0, 3.0);
    report(
        4,
        ks < 0.02 && second_ok && fact_ok && !batch.pre_asymptotic,
        format!(
            "KS = {ks:.4}, E[(D/eta)^2] = {m2:.5} ± {se2:.5} vs {:.5}, weighted factorization diff = {:.3} ± {:.3}",
            1.0 / 6.0,
            f.difference.mean,
            f.difference.se
        ),
    );
}

#[test]
fn c05_branch_law() {
    let table = branch_probability(gap_batch());
    let worst = table
        .bins
        .iter()
        .map(|b| (b.p_hat - b.one_minus_z).abs() / b.se)
        .fold(0.0, f64::max);
    let failing: Vec<String> = table
        .bins
        .iter()
        .filter(|b| !b.within_3se)
        .map(|b| {
            format!(
                "[{:.1},{:.1}) {:.4} vs {:.2}",
                b.z_low, b.z_high, b.p_hat, b.one_minus_z
            )
        })
        .collect();
    report(
        5,
        table.bins.len() == 10 && table.all_within(),
        format!(
            "largest deviation {worst:.2} SE, bins outside 3 SE: [{}]",
            failing.join("; ")
        ),
    );
}

#[test]
fn c06_equidistant_benchmark() {
    let target = constant("equidistant");
    let (m, se) = mean_se(&level("equidistant", 256.0)["scaled_error"]);
    let slope = study("equidistant")["slope"]["slope"].as_f64().unwrap();
    report(
        6,
        (m - target).abs() <= 0.05 * target && (-1.1..=-0.9).contains(&slope),
        format!(
            "n E[R^2] at 256 = {m:.3} ± {se:.3} vs {target:.3} ({:+.1}%), slope {slope:.4}",
            100.0 * (m / target - 1.0)
        ),
    );
}

#[test]
fn c07_isometry_bound() {
    let bound = constant("bound");
    let oracle = bound_oracle();
    let levels = study("adaptive")["bound"]["levels"].as_array().unwrap();
    let holds = levels.iter().all(|l| l["holds"].as_bool().unwrap());
    let detail: Vec<String> = levels
        .iter()
        .map(|l| {
            format!(
                "{}: {:.3e} <= {:.3e}",
                l["eta"],
                l["estimate"].as_f64().unwrap(),
                l["bound"].as_f64().unwrap()
            )
        })
        .collect();
    report(
        7,
        holds && levels.len() == 3 && (bound / oracle - 1.0).abs() < 1e-6,
        format!("bound integral {bound:.3} vs {oracle:.3}, {}", detail.join(", ")),
    );
}

#[test]
fn c08_martingale() {
    let mut worst: (f64, String) = (0.0, String::new());
    let mut all = true;
    for s in paper().summary["studies"].as_array().unwrap() {
        for l in s["levels"].as_array().unwrap() {
            let (m, se) = mean_se(&l["mean_error"]);
            let z = (m / se).abs();
            all &= z <= 3.0;
            if z >= worst.0 {
                worst = (z, format!("{} {}", s["kind"], l["parameter"]));
            }
        }
    }
    report(8, all, format!("largest |mean R| / SE = {:.2} at {}", worst.0, worst.1));
}

#[test]
fn c09_pricing_oracle() {
    let model = MarketModel::black_scholes(0.0, S0, SIGMA).unwrap();
    let contract = ContractSpec::call(100.0, 1.0).unwrap();
    let exact = bs_closed_form(&model, &contract).unwrap();
    let pde = pde_surface(&model, &contract, &PdeGridConfig::default()).unwrap();
    let mut max_err = 0.0f64;
    let mut monotone = true;
    let mut inside = true;
    for i in 0..=95 {
        let t = 0.95 * i as f64 / 95.0;
        let mut prev = 0.0;
        for j in 0..=200 {
            let s = 50.0 * 4f64.powf(j as f64 / 200.0);
            let d = pde.delta(t, s).unwrap();
            max_err = max_err.max((d - exact.delta(t, s).unwrap()).abs());
            // strictness is only meaningful where delta has not saturated in double precision
            let saturated = d <= DELTA_CLIP || d >= 1.0 - DELTA_CLIP;
            inside &= (0.0..=1.0).contains(&d) && (saturated || (d > 0.0 && d < 1.0));
            monotone &= j == 0 || d > prev || (saturated && d >= prev - 1e-12);
            prev = d;
        }
    }
    let probe = ProbeGrid::around_strike(100.0, pde.max_time(), 25, 81, 0.0)
        .unwrap()
        .evaluate(&pde)
        .unwrap();
    report(
        9,
        max_err < 5e-4 && monotone && inside && probe.speed_finite,
        format!(
            "max |delta error| = {max_err:.2e}, monotone {monotone}, in (0,1) {inside}, max |speed| {:.3e}",
            probe.max_abs_speed
        ),
    );
}

#[test]
fn c10_discount_variant_arbitration() {
    let model = MarketModel::black_scholes(0.10, S0, SIGMA).unwrap();
    let contract = ContractSpec::call(100.0, 1.0).unwrap();
    let surface = bs_closed_form(&model, &contract).unwrap();
    let constants = limit_constants(&model, &contract, &surface, &QuadratureConfig::default()).unwrap();
    let ladder: Vec<StrategySpec> = [0.05, 0.02, 0.01]
        .iter()
        .map(|&eta| StrategySpec::Adaptive { eta })
        .collect();
    let config = StudyConfig {
        paths: 50_000,
        ..StudyConfig::default()
    };
    let study = run_convergence_study(
        &ladder,
        &model,
        &surface,
        &config,
        &RngPolicy::new(SEED),
        Some(constants),
    )
    .unwrap();
    let a = study.arbitration.expect("positive rate gives an arbitration");
    let separated = (a.single - a.double).abs() > 0.05 * a.single.min(a.double);
    let winner = match a.winner {
        DiscountVariant::Single => "e^{-rt}",
        DiscountVariant::Double => "e^{-2rt}",
    };
    report(
        10,
        separated && a.decisive,
        format!(
            "E[R^2]/eta^2 at 0.01 = {:.3} ± {:.3}; e^(-rt) {:.3} (z {:+.1}), e^(-2rt) {:.3} (z {:+.1}); closer: {winner}",
            a.estimate, a.se, a.single, a.z_single, a.double, a.z_double
        ),
    );
}

#[test]
fn c11_reproducible_manifests() {
    let runs = paper();
    let a = fs::read(runs.four.join("paper/manifest.json")).unwrap();
    let b = fs::read(runs.one.join("paper/manifest.json")).unwrap();
    let files = ["summary.json", "levels.csv", "config.json"];
    let same_files = files.iter().all(|f| {
        fs::read(runs.four.join("paper").join(f)).unwrap() == fs::read(runs.one.join("paper").join(f)).unwrap()
    });
    report(
        11,
        a == b && same_files,
        format!("manifests identical: {}, outputs identical: {same_files}", a == b),
    );
}
