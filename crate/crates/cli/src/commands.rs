//! The three study commands.
//!
//! Each command writes `summary.json`, its CSV tables, `config.json` and a
//! manifest into `<out>/<name>/`. Statistical invariants that fail are listed
//! in the summary and turn into exit status 4 after the files are written.

use std::collections::BTreeMap;
use std::path::PathBuf;

use hedgesim::analysis::{
    isometry_bound_check, limit_constants, run_convergence_study, study_grid, BoundReport, ConvergenceStudy,
    LadderKind, LevelEstimate, LimitConstants, StudyConfig,
};
use hedgesim::hedge::{run_equidistant_hedge, AdaptiveHedger, HedgeRunResult, StrategySpec};
use hedgesim::limits::{
    branch_probability, collect_gap_batch, BranchTable, Factorization, GapBatchConfig, TestFunction,
};
use hedgesim::pricing::{BlackScholesSurface, PdeSurface};
use hedgesim::rng::StreamTag;
use hedgesim::stats::MeanSe;
use hedgesim::{bs_closed_form, pde_surface, PathGenerator, PricingSurface, RngPolicy};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{PricingMethod, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{OutputDir, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Hedge many paths with the configured strategy.
    Hedge,
    /// Run the convergence ladders against the limit constants.
    Convergence,
    /// Sample the normalised hedge-ratio gap and test it against the triangular law.
    Limitcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Hedge => "hedge",
            Command::Convergence => "convergence",
            Command::Limitcheck => "limitcheck",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Invariant {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

impl Invariant {
    fn martingale(label: String, m: &MeanSe) -> Invariant {
        Invariant {
            name: format!("martingale {label}"),
            holds: m.within(0.0, 3.0),
            detail: format!("mean hedging error {:.4e} with standard error {:.4e}", m.mean, m.se),
        }
    }
}

enum Surface {
    Closed(BlackScholesSurface),
    Pde(PdeSurface),
}

/// Runs `$body` with `$s` bound to the concrete surface.
macro_rules! with_surface {
    ($surface:expr, |$s:ident| $body:expr) => {
        match $surface {
            Surface::Closed($s) => $body,
            Surface::Pde($s) => $body,
        }
    };
}

fn build_surface(cfg: &RunConfig) -> CliResult<Surface> {
    let closed = match cfg.pricing.method {
        PricingMethod::Auto => cfg.model.constant_sigma().is_some(),
        PricingMethod::ClosedForm => true,
        PricingMethod::Pde => false,
    };
    Ok(if closed {
        Surface::Closed(bs_closed_form(&cfg.model, &cfg.contract)?)
    } else {
        Surface::Pde(pde_surface(&cfg.model, &cfg.contract, &cfg.pricing.pde)?)
    })
}

/// Validates, runs and persists one command. Returns the output directory.
pub fn execute(command: Command, cfg: &RunConfig, out_root: Option<PathBuf>) -> CliResult<(PathBuf, RunManifest)> {
    cfg.validate()?;
    if command == Command::Hedge && cfg.strategy.is_none() {
        return Err(CliError::Config(
            "at `strategy`: the hedge command needs a strategy".into(),
        ));
    }
    if command == Command::Convergence && cfg.study.ladders.is_empty() {
        return Err(CliError::Config(
            "at `study.ladders`: the convergence command needs a ladder".into(),
        ));
    }
    let root = out_root
        .unwrap_or_else(|| PathBuf::from(&cfg.output.directory))
        .join(&cfg.name);
    let mut out = OutputDir::create(root)?;
    let surface = build_surface(cfg)?;
    let invariants = with_surface!(&surface, |s| match command {
        Command::Hedge => hedge(cfg, s, &mut out)?,
        Command::Convergence => convergence(cfg, s, &mut out)?,
        Command::Limitcheck => limitcheck(cfg, s, &mut out)?,
    });
    let dir = out.path().to_path_buf();
    let manifest = out.finish(command.name(), cfg)?;
    let failed: Vec<&str> = invariants
        .iter()
        .filter(|i| !i.holds)
        .map(|i| i.name.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Invariant(format!(
            "{} (reports written to {})",
            failed.join(", "),
            dir.display()
        )));
    }
    Ok((dir, manifest))
}

/// Distinct warnings with their number of occurrences, in sorted order.
fn tally<'a>(warnings: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in warnings {
        *counts.entry(w.as_str()).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(w, n)| {
            if n == 1 {
                w.to_string()
            } else {
                format!("{w} ({n} paths)")
            }
        })
        .collect()
}

#[derive(Serialize)]
struct HedgeSummary<'a> {
    name: &'a str,
    command: &'static str,
    seed: u64,
    strategy: StrategySpec,
    paths: usize,
    mean_error: MeanSe,
    second_moment: MeanSe,
    /// `E[R^2] / eta^2` or `n E[R^2]`.
    scaled_error: MeanSe,
    mean_rebalances: MeanSe,
    max_overshoot: f64,
    invariants: Vec<Invariant>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct PathRow {
    path: u64,
    error: f64,
    rebalances: usize,
    first_rebalance: Option<f64>,
    last_rebalance: Option<f64>,
    max_overshoot: f64,
}

fn hedge<S: PricingSurface>(cfg: &RunConfig, surface: &S, out: &mut OutputDir) -> CliResult<Vec<Invariant>> {
    let strategy = cfg.strategy.expect("checked by execute");
    let study = &cfg.study;
    let policy = RngPolicy::new(cfg.rng.seed);
    let grid = study_grid(&[strategy], cfg.contract.maturity, &study.grid)?;
    let generator = PathGenerator::new(cfg.model.clone(), grid, policy);
    let hedger = match strategy {
        StrategySpec::Adaptive { eta } => Some(AdaptiveHedger::new(surface, cfg.model.s0, eta, &study.crossing)?),
        StrategySpec::Equidistant { .. } => None,
    };
    let results: Vec<HedgeRunResult> = (0..study.paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = generator.generate(i)?;
            match (strategy, &hedger) {
                (StrategySpec::Adaptive { eta }, Some(h)) => {
                    h.run(&path, &mut policy.stream(StreamTag::crossing_for(eta), i))
                }
                (StrategySpec::Equidistant { n }, _) => run_equidistant_hedge(&path, surface, n),
                _ => unreachable!("hedger built for adaptive strategies"),
            }
        })
        .collect::<hedgesim::Result<_>>()?;

    let errors: Vec<f64> = results.iter().map(|r| r.r).collect();
    let squares: Vec<f64> = errors.iter().map(|r| r * r).collect();
    let counts: Vec<f64> = results.iter().map(|r| r.n as f64).collect();
    let second_moment = MeanSe::of(&squares);
    let scale = match strategy {
        StrategySpec::Adaptive { eta } => 1.0 / (eta * eta),
        StrategySpec::Equidistant { n } => n as f64,
    };
    let mean_error = MeanSe::of(&errors);
    let invariants = vec![Invariant::martingale(
        format!("{} {}", strategy.label(), strategy.parameter()),
        &mean_error,
    )];
    let summary = HedgeSummary {
        name: &cfg.name,
        command: "hedge",
        seed: cfg.rng.seed,
        strategy,
        paths: results.len(),
        mean_error,
        second_moment,
        scaled_error: MeanSe {
            mean: second_moment.mean * scale,
            se: second_moment.se * scale,
            n: second_moment.n,
        },
        mean_rebalances: MeanSe::of(&counts),
        max_overshoot: results.iter().map(|r| r.max_overshoot).fold(0.0, f64::max),
        invariants: invariants.clone(),
        warnings: tally(results.iter().flat_map(|r| r.warnings.iter())),
    };
    out.json("summary.json", &summary)?;
    if cfg.output.csv() {
        let rows: Vec<PathRow> = results
            .iter()
            .map(|r| PathRow {
                path: r.seed_id,
                error: r.r,
                rebalances: r.n,
                first_rebalance: r.first_rebalance,
                last_rebalance: r.last_rebalance,
                max_overshoot: r.max_overshoot,
            })
            .collect();
        out.csv(
            "paths.csv",
            &[
                "path",
                "error",
                "rebalances",
                "first_rebalance",
                "last_rebalance",
                "max_overshoot",
            ],
            &rows,
        )?;
    }
    Ok(invariants)
}

#[derive(Serialize)]
struct StudyReport<'a> {
    #[serde(flatten)]
    study: &'a ConvergenceStudy,
    bound: Option<BoundReport>,
}

#[derive(Serialize)]
struct ConvergenceSummary<'a> {
    name: &'a str,
    command: &'static str,
    seed: u64,
    paths: usize,
    constants: LimitConstants,
    studies: Vec<StudyReport<'a>>,
    invariants: Vec<Invariant>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct LevelRow {
    strategy: &'static str,
    parameter: f64,
    paths: usize,
    mean_error: f64,
    mean_error_se: f64,
    second_moment: f64,
    second_moment_se: f64,
    scaled_error: f64,
    scaled_error_se: f64,
    target_single: f64,
    target_double: f64,
    scaled_count: Option<f64>,
    scaled_count_se: Option<f64>,
    product: Option<f64>,
    product_se: Option<f64>,
    mean_rebalances: f64,
    max_overshoot: f64,
}

fn level_row(l: &LevelEstimate, c: &LimitConstants) -> LevelRow {
    let (target_single, target_double) = match l.strategy {
        StrategySpec::Adaptive { .. } => (c.adaptive_single, c.adaptive_double),
        StrategySpec::Equidistant { .. } => (c.equidistant, c.equidistant),
    };
    LevelRow {
        strategy: l.strategy.label(),
        parameter: l.parameter,
        paths: l.paths,
        mean_error: l.mean_error.mean,
        mean_error_se: l.mean_error.se,
        second_moment: l.second_moment.mean,
        second_moment_se: l.second_moment.se,
        scaled_error: l.scaled_error.mean,
        scaled_error_se: l.scaled_error.se,
        target_single,
        target_double,
        scaled_count: l.scaled_count.map(|m| m.mean),
        scaled_count_se: l.scaled_count.map(|m| m.se),
        product: l.product.map(|m| m.mean),
        product_se: l.product.map(|m| m.se),
        mean_rebalances: l.mean_rebalances,
        max_overshoot: l.max_overshoot,
    }
}

const LEVEL_HEADER: [&str; 17] = [
    "strategy",
    "parameter",
    "paths",
    "mean_error",
    "mean_error_se",
    "second_moment",
    "second_moment_se",
    "scaled_error",
    "scaled_error_se",
    "target_single",
    "target_double",
    "scaled_count",
    "scaled_count_se",
    "product",
    "product_se",
    "mean_rebalances",
    "max_overshoot",
];

fn convergence<S: PricingSurface>(cfg: &RunConfig, surface: &S, out: &mut OutputDir) -> CliResult<Vec<Invariant>> {
    let constants = limit_constants(&cfg.model, &cfg.contract, surface, &cfg.quadrature)?;
    let policy = RngPolicy::new(cfg.rng.seed);
    let study_config = StudyConfig {
        paths: cfg.study.paths,
        grid: cfg.study.grid,
        crossing: cfg.study.crossing,
    };
    let mut studies = Vec::with_capacity(cfg.study.ladders.len());
    for ladder in &cfg.study.ladders {
        eprintln!(
            "hedgesim: {} ladder, {} levels, {} paths",
            ladder[0].label(),
            ladder.len(),
            cfg.study.paths
        );
        studies.push(run_convergence_study(
            ladder,
            &cfg.model,
            surface,
            &study_config,
            &policy,
            Some(constants),
        )?);
    }
    let mut invariants = Vec::new();
    let mut reports = Vec::with_capacity(studies.len());
    for study in &studies {
        for l in &study.levels {
            invariants.push(Invariant::martingale(
                format!("{} {}", l.strategy.label(), l.parameter),
                &l.mean_error,
            ));
        }
        let bound = if study.kind == LadderKind::Adaptive {
            let b = isometry_bound_check(study, constants.bound)?;
            for l in &b.levels {
                invariants.push(Invariant {
                    name: format!("isometry bound adaptive {}", l.eta),
                    holds: l.holds,
                    detail: format!(
                        "E[R^2] = {:.4e} (se {:.2e}) against bound {:.4e}",
                        l.estimate, l.se, l.bound
                    ),
                });
            }
            Some(b)
        } else {
            None
        };
        reports.push(StudyReport { study, bound });
    }
    let summary = ConvergenceSummary {
        name: &cfg.name,
        command: "convergence",
        seed: cfg.rng.seed,
        paths: cfg.study.paths,
        constants,
        warnings: studies.iter().flat_map(|s| s.warnings.iter().cloned()).collect(),
        studies: reports,
        invariants: invariants.clone(),
    };
    out.json("summary.json", &summary)?;
    if cfg.output.csv() {
        let rows: Vec<LevelRow> = studies
            .iter()
            .flat_map(|s| s.levels.iter().map(|l| level_row(l, &constants)))
            .collect();
        out.csv("levels.csv", &LEVEL_HEADER, &rows)?;
    }
    Ok(invariants)
}

#[derive(Serialize)]
struct GapReport {
    eta: f64,
    t: f64,
    paths: usize,
    mean_trades: f64,
    pre_asymptotic: bool,
    ks: f64,
    mean: MeanSe,
    second_moment: MeanSe,
    triangular_second_moment: f64,
    factorization: Vec<Factorization>,
    branch: BranchTable,
    max_overshoot: f64,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct LimitSummary<'a> {
    name: &'a str,
    command: &'static str,
    seed: u64,
    batches: Vec<GapReport>,
    invariants: Vec<Invariant>,
}

#[derive(Serialize)]
struct HistogramRow {
    eta: f64,
    t: f64,
    left: f64,
    right: f64,
    count: usize,
    density: f64,
    triangular_mass: f64,
}

#[derive(Serialize)]
struct BranchRow {
    eta: f64,
    t: f64,
    z_low: f64,
    z_high: f64,
    count: usize,
    p_hat: f64,
    se: f64,
    one_minus_z: f64,
    within_3se: bool,
}

const HISTOGRAM_BINS: usize = 20;

fn limitcheck<S: PricingSurface>(cfg: &RunConfig, surface: &S, out: &mut OutputDir) -> CliResult<Vec<Invariant>> {
    let policy = RngPolicy::new(cfg.rng.seed);
    let obs = &cfg.study.observation;
    let mut batches = Vec::new();
    let mut invariants = Vec::new();
    let mut histogram = Vec::new();
    let mut branches = Vec::new();
    for &eta in &obs.etas {
        for &t in &obs.times {
            eprintln!("hedgesim: gap batch eta = {eta}, t = {t}, {} paths", obs.paths);
            let config = GapBatchConfig {
                eta,
                t,
                paths: obs.paths,
                max_step: obs.max_step,
                crossing: cfg.study.crossing,
            };
            let batch = collect_gap_batch(&cfg.model, surface, &config, &policy)?;
            let branch = branch_probability(&batch);
            let limit = 1.0 + cfg.study.crossing.tol_overshoot;
            invariants.push(Invariant {
                name: format!("gap support eta {eta} t {t}"),
                holds: batch.max_overshoot <= limit - 1.0,
                detail: format!("max |D / eta| = {:.4} against {limit}", 1.0 + batch.max_overshoot),
            });
            let width = 2.0 / HISTOGRAM_BINS as f64;
            histogram.extend(batch.histogram(HISTOGRAM_BINS).into_iter().map(|b| HistogramRow {
                eta,
                t,
                left: b.left,
                right: b.right,
                count: b.count,
                density: b.count as f64 / (batch.len() as f64 * width),
                triangular_mass: b.triangular_mass,
            }));
            branches.extend(branch.bins.iter().map(|b| BranchRow {
                eta,
                t,
                z_low: b.z_low,
                z_high: b.z_high,
                count: b.count,
                p_hat: b.p_hat,
                se: b.se,
                one_minus_z: b.one_minus_z,
                within_3se: b.within_3se,
            }));
            batches.push(GapReport {
                eta,
                t,
                paths: batch.len(),
                mean_trades: batch.mean_trades,
                pre_asymptotic: batch.pre_asymptotic,
                ks: batch.ks()?,
                mean: batch.mean(),
                second_moment: batch.second_moment(),
                triangular_second_moment: 1.0 / 6.0,
                factorization: vec![
                    batch.factorization(TestFunction::Square),
                    batch.factorization(TestFunction::CosPi),
                ],
                max_overshoot: batch.max_overshoot,
                warnings: batch.warnings.clone(),
                branch,
            });
        }
    }
    out.json(
        "summary.json",
        &LimitSummary {
            name: &cfg.name,
            command: "limitcheck",
            seed: cfg.rng.seed,
            batches,
            invariants: invariants.clone(),
        },
    )?;
    if cfg.output.csv() {
        out.csv(
            "histogram.csv",
            &["eta", "t", "left", "right", "count", "density", "triangular_mass"],
            &histogram,
        )?;
        out.csv(
            "branch.csv",
            &[
                "eta",
                "t",
                "z_low",
                "z_high",
                "count",
                "p_hat",
                "se",
                "one_minus_z",
                "within_3se",
            ],
            &branches,
        )?;
    }
    Ok(invariants)
}
