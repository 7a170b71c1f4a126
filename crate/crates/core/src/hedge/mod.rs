//! Hedging strategies run along simulated paths.
//!
//! Accounting is done in discounted units. The portfolio starts with the
//! option premium `u(0, s0)` and holds `H` shares between rebalances, so its
//! discounted value at maturity is `u(0, s0) + sum H (S~_{k+1} - S~_k)`. The
//! hedging error is the discounted payoff minus that value, which equals the
//! stochastic integral of the hedge-ratio gap against the discounted spot.

mod adaptive;

pub use adaptive::{gap_samples, run_adaptive_hedge, AdaptiveHedger};

use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::model::Path;
use crate::pricing::PricingSurface;

/// Rebalancing rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StrategySpec {
    /// Rebalance whenever the delta has moved by `eta` since the last trade.
    Adaptive { eta: f64 },
    /// Rebalance at `i T / n`.
    Equidistant { n: usize },
}

impl StrategySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StrategySpec::Adaptive { eta } if !(eta > 0.0 && eta < 1.0) => {
                Err(HedgeError::param("eta", eta, "adaptive threshold must lie in (0, 1)"))
            }
            StrategySpec::Equidistant { n: 0 } => Err(HedgeError::param(
                "n",
                0.0,
                "equidistant grid needs at least one interval",
            )),
            _ => Ok(()),
        }
    }

    /// The ladder parameter: `eta` or `n`.
    pub fn parameter(&self) -> f64 {
        match *self {
            StrategySpec::Adaptive { eta } => eta,
            StrategySpec::Equidistant { n } => n as f64,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            StrategySpec::Adaptive { .. } => "adaptive",
            StrategySpec::Equidistant { .. } => "equidistant",
        }
    }
}

/// Settings of the threshold-crossing sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossingConfig {
    /// Monitoring stops this fraction of the maturity before expiry (and
    /// never later than the surface allows); the last position is then held.
    pub cutoff_fraction: f64,
    /// Largest tolerated `|delta at a trade - target level| / eta`.
    pub tol_overshoot: f64,
    /// Keep the list of trade times.
    pub record_trades: bool,
    /// Evaluate the delta at every knot to track `max |D|`.
    pub diagnostics: bool,
}

impl Default for CrossingConfig {
    fn default() -> Self {
        CrossingConfig {
            cutoff_fraction: 1e-6,
            tol_overshoot: 0.05,
            record_trades: false,
            diagnostics: false,
        }
    }
}

impl CrossingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_fraction > 0.0 && self.cutoff_fraction < 0.5) {
            return Err(HedgeError::param(
                "cutoff_fraction",
                self.cutoff_fraction,
                "must lie in (0, 0.5)",
            ));
        }
        if !(self.tol_overshoot > 0.0) {
            return Err(HedgeError::param(
                "tol_overshoot",
                self.tol_overshoot,
                "must be positive",
            ));
        }
        Ok(())
    }
}

/// Outcome of hedging one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HedgeRunResult {
    /// Discounted hedging error at maturity (time-0 currency).
    pub r: f64,
    /// Number of rebalances after the initial hedge.
    pub n: usize,
    pub rebalance_times: Option<Vec<f64>>,
    pub first_rebalance: Option<f64>,
    pub last_rebalance: Option<f64>,
    /// Largest `|D|` seen at grid knots; only with diagnostics enabled.
    pub max_abs_gap: Option<f64>,
    /// Largest `|delta at trade - target| / eta` over the trades.
    pub max_overshoot: f64,
    pub seed_id: u64,
    pub warnings: Vec<String>,
}

/// Hedge-ratio gap observed at a fixed time under the adaptive rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapProcessSample {
    pub t: f64,
    /// `delta(t, S_t)` minus the delta held since the last trade.
    pub d: f64,
    pub x: f64,
    pub s: f64,
    /// Position of `x` inside its cell of the trade lattice, in `[0, 1)`.
    pub cell_position: f64,
    /// The held level is the lower edge of the cell containing `x`, so
    /// `d / eta` equals `cell_position` rather than `cell_position - 1`.
    pub lower_edge_held: bool,
    /// Trades made up to `t`.
    pub rebalances: usize,
}

/// Running discounted portfolio.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Account {
    rate: f64,
    value: f64,
    holding: f64,
    last_discounted_spot: f64,
}

impl Account {
    pub(crate) fn open(rate: f64, premium: f64, holding: f64, s0: f64) -> Self {
        Account {
            rate,
            value: premium,
            holding,
            last_discounted_spot: s0,
        }
    }

    #[inline]
    pub(crate) fn rebalance(&mut self, t: f64, s: f64, holding: f64) {
        let ds = (-self.rate * t).exp() * s;
        self.value += self.holding * (ds - self.last_discounted_spot);
        self.last_discounted_spot = ds;
        self.holding = holding;
    }

    /// Discounted payoff minus discounted portfolio value at maturity.
    pub(crate) fn close(mut self, maturity: f64, s_t: f64, payoff: f64) -> f64 {
        let h = self.holding;
        self.rebalance(maturity, s_t, h);
        (-self.rate * maturity).exp() * payoff - self.value
    }
}

fn check_same_maturity<S: PricingSurface + ?Sized>(path: &Path, surface: &S) -> Result<()> {
    let (tp, ts) = (path.maturity(), surface.maturity());
    if (tp - ts).abs() > 1e-12 * ts.max(1.0) {
        return Err(HedgeError::Argument(format!(
            "path maturity {tp} differs from contract maturity {ts}"
        )));
    }
    Ok(())
}

/// Rebalances at `i T / n`, `i = 0..n`. Knots past the surface's last
/// evaluation time keep the previous holding.
pub fn run_equidistant_hedge<S: PricingSurface + ?Sized>(path: &Path, surface: &S, n: usize) -> Result<HedgeRunResult> {
    StrategySpec::Equidistant { n }.validate()?;
    check_same_maturity(path, surface)?;
    let maturity = path.maturity();
    let mut knots = Vec::with_capacity(n);
    for i in 0..n {
        let t = maturity * i as f64 / n as f64;
        let k = path.index_of(t).ok_or_else(|| {
            HedgeError::GridAlignment(format!("rebalance time {t} of the n = {n} grid is not a path knot"))
        })?;
        knots.push(k);
    }
    let s0 = path.spots[0];
    let mut acct = Account::open(
        surface.rate(),
        surface.price_unchecked(0.0, s0),
        surface.delta_unchecked(0.0, s0),
        s0,
    );
    let mut warnings = Vec::new();
    let mut last = None;
    for &k in &knots[1..] {
        let t = path.times[k];
        if t > surface.max_time() {
            warnings.push(format!(
                "rebalances after t = {} skipped (surface domain)",
                surface.max_time()
            ));
            break;
        }
        let s = path.spots[k];
        acct.rebalance(t, s, surface.delta_unchecked(t, s));
        last = Some(t);
    }
    let s_t = path.terminal_spot();
    let r = acct.close(maturity, s_t, surface.contract().payoff(s_t));
    Ok(HedgeRunResult {
        r,
        n,
        rebalance_times: None,
        first_rebalance: (n > 1).then(|| path.times[knots[1]]),
        last_rebalance: last,
        max_abs_gap: None,
        max_overshoot: 0.0,
        seed_id: path.seed_id,
        warnings,
    })
}

/// Runs either strategy on a path. Adaptive runs draw their crossing
/// randomness from `rng`.
pub fn run_strategy<S: PricingSurface + ?Sized, R: rand::Rng + ?Sized>(
    path: &Path,
    surface: &S,
    strategy: &StrategySpec,
    config: &CrossingConfig,
    rng: &mut R,
) -> Result<HedgeRunResult> {
    match *strategy {
        StrategySpec::Adaptive { eta } => run_adaptive_hedge(path, surface, eta, config, rng),
        StrategySpec::Equidistant { n } => run_equidistant_hedge(path, surface, n),
    }
}
