//! Convergence studies over a ladder of thresholds or grid sizes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::hedge::{run_equidistant_hedge, AdaptiveHedger, CrossingConfig, StrategySpec};
use crate::model::{MarketModel, PathGenerator, TimeGrid};
use crate::pricing::PricingSurface;
use crate::rng::{RngPolicy, StreamTag};
use crate::stats::{covariance, weighted_line_fit, LineFit, MeanSe};

use super::constants::{DiscountVariant, LimitConstants};

/// Relative standard error above which a level is flagged as under-powered.
pub const UNDERPOWERED_SE: f64 = 0.2;

/// Base simulation grid: uniform steps of at most `max_step`, geometric
/// grading towards expiry, and a final knot `cutoff * T` before maturity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub max_step: f64,
    pub grading: f64,
    pub cutoff: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            max_step: 1.0 / 4096.0,
            grading: 0.03,
            cutoff: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub paths: usize,
    pub grid: GridConfig,
    pub crossing: CrossingConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            paths: 100_000,
            grid: GridConfig::default(),
            crossing: CrossingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LadderKind {
    Adaptive,
    Equidistant,
}

/// Statistics of one ladder level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelEstimate {
    pub strategy: StrategySpec,
    pub parameter: f64,
    pub paths: usize,
    pub mean_error: MeanSe,
    /// `E[R^2]`.
    pub second_moment: MeanSe,
    /// `E[R^2] / eta^2` or `n E[R^2]`.
    pub scaled_error: MeanSe,
    /// `eta^2 E[N]` (adaptive only).
    pub scaled_count: Option<MeanSe>,
    /// `E[N] E[R^2]` with a delta-method standard error (adaptive only).
    pub product: Option<MeanSe>,
    pub mean_rebalances: f64,
    pub max_overshoot: f64,
    pub warnings: Vec<String>,
    /// Per-path hedging errors, in path order.
    #[serde(skip)]
    pub errors: Vec<f64>,
    /// Per-path rebalance counts, in path order.
    #[serde(skip)]
    pub counts: Vec<usize>,
}

/// Which discount variant of the adaptive constant the simulation favours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariantArbitration {
    pub parameter: f64,
    pub estimate: f64,
    pub se: f64,
    pub single: f64,
    pub double: f64,
    /// `(estimate - target) / se` per variant.
    pub z_single: f64,
    pub z_double: f64,
    pub winner: DiscountVariant,
    /// The targets differ by more than 5% and the losing one lies more than
    /// 3 standard errors away.
    pub decisive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub kind: LadderKind,
    pub levels: Vec<LevelEstimate>,
    /// Log-log fit of `E[R^2]` against `eta` or `n`.
    pub slope: LineFit,
    pub targets: Option<LimitConstants>,
    pub arbitration: Option<VariantArbitration>,
    pub warnings: Vec<String>,
}

impl ConvergenceStudy {
    /// Target of the scaled error under the given discount variant.
    pub fn error_target(&self, variant: DiscountVariant) -> Option<f64> {
        let t = self.targets?;
        Some(match self.kind {
            LadderKind::Adaptive => t.adaptive(variant),
            LadderKind::Equidistant => t.equidistant,
        })
    }
}

/// Checks ladder length, kind and ordering.
pub fn validate_ladder(ladder: &[StrategySpec]) -> Result<LadderKind> {
    if ladder.len() < 3 {
        return Err(HedgeError::Configuration(format!(
            "a convergence ladder needs at least 3 levels, got {}",
            ladder.len()
        )));
    }
    for s in ladder {
        s.validate()?;
    }
    let kind = match ladder[0] {
        StrategySpec::Adaptive { .. } => LadderKind::Adaptive,
        StrategySpec::Equidistant { .. } => LadderKind::Equidistant,
    };
    let mut prev: Option<f64> = None;
    for s in ladder {
        let (k, p) = match *s {
            StrategySpec::Adaptive { eta } => (LadderKind::Adaptive, -eta),
            StrategySpec::Equidistant { n } => (LadderKind::Equidistant, n as f64),
        };
        if k != kind {
            return Err(HedgeError::Configuration("a ladder cannot mix strategy kinds".into()));
        }
        if prev.is_some_and(|q| p <= q) {
            return Err(HedgeError::Configuration(
                "ladder must be strictly decreasing in eta or strictly increasing in n".into(),
            ));
        }
        prev = Some(p);
    }
    Ok(kind)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Simulation grid for a ladder. Equidistant ladders use a uniform grid
/// through every rebalance knot.
pub fn study_grid(ladder: &[StrategySpec], maturity: f64, grid: &GridConfig) -> Result<TimeGrid> {
    let ns: Vec<usize> = ladder
        .iter()
        .filter_map(|s| match *s {
            StrategySpec::Equidistant { n } => Some(n),
            StrategySpec::Adaptive { .. } => None,
        })
        .collect();
    if ns.len() == ladder.len() {
        let lcm = ns.iter().fold(1usize, |a, &b| a / gcd(a, b) * b);
        let min_steps = (maturity / grid.max_step).ceil() as usize;
        let steps = lcm * min_steps.div_ceil(lcm).max(1);
        return TimeGrid::uniform(maturity, steps);
    }
    let base = TimeGrid::graded(maturity, grid.max_step, grid.grading, grid.cutoff)?;
    let mut knots = Vec::new();
    for &n in &ns {
        knots.extend((1..n).map(|i| maturity * i as f64 / n as f64));
    }
    base.with_knots(&knots)
}

/// Hedges the same paths under every ladder level. Adaptive levels draw
/// their crossing randomness from per-threshold streams, so adding a level
/// never changes the others.
pub fn run_convergence_study<S: PricingSurface + ?Sized>(
    ladder: &[StrategySpec],
    model: &MarketModel,
    surface: &S,
    config: &StudyConfig,
    policy: &RngPolicy,
    targets: Option<LimitConstants>,
) -> Result<ConvergenceStudy> {
    let kind = validate_ladder(ladder)?;
    config.crossing.validate()?;
    if config.paths < 2 {
        return Err(HedgeError::param("paths", config.paths as f64, "need at least 2 paths"));
    }
    let maturity = surface.maturity();
    let generator = PathGenerator::new(model.clone(), study_grid(ladder, maturity, &config.grid)?, *policy);
    let hedgers = ladder
        .iter()
        .map(|s| match *s {
            StrategySpec::Adaptive { eta } => AdaptiveHedger::new(surface, model.s0, eta, &config.crossing).map(Some),
            StrategySpec::Equidistant { .. } => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;

    // one row per path: (R, N, overshoot) per level
    let rows: Vec<Vec<(f64, usize, f64)>> = (0..config.paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = generator.generate(i)?;
            ladder
                .iter()
                .zip(&hedgers)
                .map(|(s, h)| match (*s, h) {
                    (StrategySpec::Adaptive { eta }, Some(h)) => {
                        let mut rng = policy.stream(StreamTag::crossing_for(eta), i);
                        h.run(&path, &mut rng).map(|r| (r.r, r.n, r.max_overshoot))
                    }
                    (StrategySpec::Equidistant { n }, _) => {
                        run_equidistant_hedge(&path, surface, n).map(|r| (r.r, r.n, 0.0))
                    }
                    _ => unreachable!("hedger built for every adaptive level"),
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    let mut levels = Vec::with_capacity(ladder.len());
    for (j, s) in ladder.iter().enumerate() {
        let errors: Vec<f64> = rows.iter().map(|r| r[j].0).collect();
        let counts: Vec<usize> = rows.iter().map(|r| r[j].1).collect();
        let max_overshoot = rows.iter().map(|r| r[j].2).fold(0.0, f64::max);
        levels.push(level_estimate(*s, errors, counts, max_overshoot));
    }
    for l in &levels {
        warnings.extend(
            l.warnings
                .iter()
                .map(|w| format!("{} {}: {w}", l.strategy.label(), l.parameter)),
        );
    }
    let xs: Vec<f64> = levels.iter().map(|l| l.parameter.ln()).collect();
    let ys: Vec<f64> = levels.iter().map(|l| l.second_moment.mean.ln()).collect();
    let sds: Vec<f64> = levels
        .iter()
        .map(|l| l.second_moment.se / l.second_moment.mean)
        .collect();
    let slope = weighted_line_fit(&xs, &ys, &sds);
    let arbitration = match (kind, targets) {
        (LadderKind::Adaptive, Some(t)) if model.r > 0.0 => levels.last().map(|l| arbitrate(l, &t)),
        _ => None,
    };
    Ok(ConvergenceStudy {
        kind,
        levels,
        slope,
        targets,
        arbitration,
        warnings,
    })
}

fn level_estimate(strategy: StrategySpec, errors: Vec<f64>, counts: Vec<usize>, max_overshoot: f64) -> LevelEstimate {
    let p = strategy.parameter();
    let squares: Vec<f64> = errors.iter().map(|r| r * r).collect();
    let second_moment = MeanSe::of(&squares);
    let n_f: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
    let mean_rebalances = n_f.iter().sum::<f64>() / n_f.len() as f64;
    let (scaled_error, scaled_count, product) = match strategy {
        StrategySpec::Adaptive { eta } => {
            let e2 = eta * eta;
            let count = MeanSe::of(&n_f);
            let m = squares.len() as f64;
            // var(A B) ~ B^2 var A + A^2 var B + 2 A B cov(A, B) for sample means
            let (a, b) = (count.mean, second_moment.mean);
            let var = b * b * count.se * count.se
                + a * a * second_moment.se * second_moment.se
                + 2.0 * a * b * covariance(&n_f, &squares) / m;
            (
                scale(second_moment, 1.0 / e2),
                Some(scale(count, e2)),
                Some(MeanSe {
                    mean: a * b,
                    se: var.max(0.0).sqrt(),
                    n: squares.len(),
                }),
            )
        }
        StrategySpec::Equidistant { n } => (scale(second_moment, n as f64), None, None),
    };
    let mut warnings = Vec::new();
    if !(scaled_error.se <= UNDERPOWERED_SE * scaled_error.mean.abs()) {
        warnings.push(format!(
            "under-powered: standard error {:.3e} exceeds 20% of the estimate {:.3e}",
            scaled_error.se, scaled_error.mean
        ));
    }
    LevelEstimate {
        strategy,
        parameter: p,
        paths: errors.len(),
        mean_error: MeanSe::of(&errors),
        second_moment,
        scaled_error,
        scaled_count,
        product,
        mean_rebalances,
        max_overshoot,
        warnings,
        errors,
        counts,
    }
}

fn scale(m: MeanSe, c: f64) -> MeanSe {
    MeanSe {
        mean: m.mean * c,
        se: m.se * c,
        n: m.n,
    }
}

fn arbitrate(level: &LevelEstimate, targets: &LimitConstants) -> VariantArbitration {
    let (est, se) = (level.scaled_error.mean, level.scaled_error.se);
    let (single, double) = (targets.adaptive_single, targets.adaptive_double);
    let z_single = (est - single) / se;
    let z_double = (est - double) / se;
    let (winner, loser_z) = if z_double.abs() <= z_single.abs() {
        (DiscountVariant::Double, z_single)
    } else {
        (DiscountVariant::Single, z_double)
    };
    let separated = (single - double).abs() > 0.05 * single.min(double);
    VariantArbitration {
        parameter: level.parameter,
        estimate: est,
        se,
        single,
        double,
        z_single,
        z_double,
        winner,
        decisive: separated && loser_z.abs() > 3.0,
    }
}

/// `E[R^2] <= eta^2 * bound + 3 SE` per adaptive level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub levels: Vec<BoundLevel>,
    pub holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundLevel {
    pub eta: f64,
    pub estimate: f64,
    pub se: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Checks the isometry bound `E[R^2] <= eta^2 int e^{-2rt} E[S^2 sigma^2] dt`
/// at every adaptive level.
pub fn isometry_bound_check(study: &ConvergenceStudy, bound_integral: f64) -> Result<BoundReport> {
    if study.kind != LadderKind::Adaptive {
        return Err(HedgeError::Argument(
            "the isometry bound applies to adaptive ladders".into(),
        ));
    }
    let levels: Vec<BoundLevel> = study
        .levels
        .iter()
        .map(|l| {
            let eta = l.parameter;
            let bound = eta * eta * bound_integral;
            let (estimate, se) = (l.second_moment.mean, l.second_moment.se);
            BoundLevel {
                eta,
                estimate,
                se,
                bound,
                holds: estimate <= bound + 3.0 * se,
            }
        })
        .collect();
    let holds = levels.iter().all(|l| l.holds);
    Ok(BoundReport { levels, holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::{bs_closed_form, ContractSpec};

    fn ladder(etas: &[f64]) -> Vec<StrategySpec> {
        etas.iter().map(|&eta| StrategySpec::Adaptive { eta }).collect()
    }

    #[test]
    fn ladder_validation() {
        assert!(validate_ladder(&ladder(&[0.1, 0.05])).is_err());
        assert!(validate_ladder(&ladder(&[0.1, 0.05, 0.05])).is_err());
        assert!(validate_ladder(&ladder(&[0.1, 0.05, 0.02])).is_ok());
        let mixed = [
            StrategySpec::Adaptive { eta: 0.1 },
            StrategySpec::Equidistant { n: 4 },
            StrategySpec::Equidistant { n: 8 },
        ];
        assert!(validate_ladder(&mixed).is_err());
        let eq: Vec<_> = [4, 16, 8].iter().map(|&n| StrategySpec::Equidistant { n }).collect();
        assert!(validate_ladder(&eq).is_err());
    }

    #[test]
    fn equidistant_grid_contains_every_knot() {
        let eq: Vec<_> = [4, 6, 16].iter().map(|&n| StrategySpec::Equidistant { n }).collect();
        let g = study_grid(&eq, 1.0, &GridConfig::default()).unwrap();
        assert_eq!(g.steps() % 48, 0);
        for n in [4, 6, 16] {
            for i in 0..=n {
                assert!(g.index_of(i as f64 / n as f64).is_some());
            }
        }
        assert!(g.max_step() <= 1.0 / 4096.0 + 1e-15);
    }

    #[test]
    fn small_study_is_deterministic_and_sane() {
        let m = MarketModel::black_scholes(0.0, 100.0, 0.2).unwrap();
        let s = bs_closed_form(&m, &ContractSpec::call(100.0, 1.0).unwrap()).unwrap();
        let config = StudyConfig {
            paths: 200,
            grid: GridConfig {
                max_step: 1.0 / 256.0,
                grading: 0.05,
                cutoff: 1e-6,
            },
            ..StudyConfig::default()
        };
        let l = ladder(&[0.2, 0.1, 0.05]);
        let a = run_convergence_study(&l, &m, &s, &config, &RngPolicy::new(3), None).unwrap();
        let b = run_convergence_study(&l, &m, &s, &config, &RngPolicy::new(3), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.levels.len(), 3);
        assert!(a.slope.slope > 1.0 && a.slope.slope < 3.0, "{:?}", a.slope);
        for lv in &a.levels {
            assert!(lv.mean_error.within(0.0, 4.0));
            let p = lv.product.unwrap();
            assert!((p.mean - lv.mean_rebalances * lv.second_moment.mean).abs() < 1e-9 * p.mean);
        }
        let report = isometry_bound_check(&a, 408.11).unwrap();
        assert!(report.holds);
    }

    #[test]
    fn underpowered_levels_are_flagged() {
        let l = level_estimate(StrategySpec::Equidistant { n: 4 }, vec![0.0, 0.0, 1.0], vec![4; 3], 0.0);
        assert!(!l.warnings.is_empty());
    }
}
