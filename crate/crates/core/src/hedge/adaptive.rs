//! Move-based rebalancing with exact bridge first-passage sampling.
//!
//! Trades happen on the lattice `x0 + k eta` of delta values, `x0` being the
//! initial delta. While level `k` is held, the next trade is the first time
//! the spot path leaves the band between the barriers `g^-1(t, x0 + (k +- 1)
//! eta)`. Inside a simulation step the log-spot is a Brownian bridge between
//! the stored knots and each barrier is replaced by the chord through its
//! exact values at the step ends. First passage of a bridge through a line is
//! sampled exactly: after the time change `rho = h t / (h - t)` it becomes
//! the passage of a drifted Brownian motion, whose hitting time conditional
//! on hitting is inverse Gaussian.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{HedgeError, Result};
use crate::model::Path;
use crate::pricing::PricingSurface;
use crate::rng::open01;

use super::{check_same_maturity, Account, CrossingConfig, GapProcessSample, HedgeRunResult};

/// Beyond this exponent the crossing probability `exp(-e)` is treated as 0.
const NEGLIGIBLE_EXPONENT: f64 = 40.0;
/// Safety valve against a runaway trade loop inside one step.
const MAX_TRADES_PER_STEP: usize = 1_000_000;
/// Largest product of the two one-sided hit probabilities on an interval
/// before it is split.
const JOINT_HIT_LIMIT: f64 = 1e-4;

/// Threshold strategy bound to one surface and one `eta`, with the barrier
/// levels precomputed for every lattice index.
pub struct AdaptiveHedger<'a, S: PricingSurface + ?Sized> {
    surface: &'a S,
    eta: f64,
    x0: f64,
    premium: f64,
    s0: f64,
    k_min: i64,
    levels: Vec<Option<S::Level>>,
    stop_time: f64,
    config: CrossingConfig,
}

/// Chord of one barrier over the current step.
#[derive(Debug, Clone, Copy)]
struct Chord {
    start: f64,
    end: f64,
}

impl Chord {
    #[inline]
    fn at(&self, a: f64, b: f64, t: f64) -> f64 {
        self.start + (self.end - self.start) * ((t - a) / (b - a))
    }
}

struct State {
    k: i64,
    acct: Account,
    n: usize,
    first: Option<f64>,
    last: Option<f64>,
    times: Option<Vec<f64>>,
    max_overshoot: f64,
    max_abs_gap: Option<f64>,
}

impl<'a, S: PricingSurface + ?Sized> AdaptiveHedger<'a, S> {
    /// `eta >= 1` is accepted and yields a static hedge; callers get a
    /// warning in every run result.
    pub fn new(surface: &'a S, s0: f64, eta: f64, config: &CrossingConfig) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(HedgeError::param("eta", eta, "threshold must be positive"));
        }
        config.validate()?;
        let x0 = surface.delta(0.0, s0)?;
        let premium = surface.price_unchecked(0.0, s0);
        let k_min = -((x0 / eta).ceil() as i64) - 1;
        let k_max = ((1.0 - x0) / eta).ceil() as i64 + 1;
        let levels = (k_min..=k_max).map(|k| surface.level(x0 + k as f64 * eta)).collect();
        let maturity = surface.maturity();
        let stop_time = (maturity * (1.0 - config.cutoff_fraction)).min(surface.max_time());
        Ok(AdaptiveHedger {
            surface,
            eta,
            x0,
            premium,
            s0,
            k_min,
            levels,
            stop_time,
            config: *config,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn initial_delta(&self) -> f64 {
        self.x0
    }

    /// Last time at which trades can happen.
    pub fn stop_time(&self) -> f64 {
        self.stop_time
    }

    #[inline]
    fn level_value(&self, k: i64) -> f64 {
        self.x0 + k as f64 * self.eta
    }

    #[inline]
    fn barrier(&self, t: f64, k: i64) -> Option<f64> {
        let idx = k - self.k_min;
        if idx < 0 || idx as usize >= self.levels.len() {
            return None;
        }
        let level = self.levels[idx as usize].as_ref()?;
        let y = self.surface.log_barrier(t, level);
        y.is_finite().then_some(y)
    }

    fn chord(&self, a: f64, b: f64, k: i64) -> Option<Chord> {
        Some(Chord {
            start: self.barrier(a, k)?,
            end: self.barrier(b, k)?,
        })
    }

    fn check_path(&self, path: &Path) -> Result<()> {
        check_same_maturity(path, self.surface)?;
        if (path.spots[0] - self.s0).abs() > 1e-12 * self.s0 {
            return Err(HedgeError::Argument(format!(
                "path starts at {} but the hedger was built for s0 = {}",
                path.spots[0], self.s0
            )));
        }
        Ok(())
    }

    /// Hedges the whole path.
    pub fn run<R: Rng + ?Sized>(&self, path: &Path, rng: &mut R) -> Result<HedgeRunResult> {
        self.check_path(path)?;
        let mut state = self.open();
        self.advance(path, path.steps(), rng, &mut state, &mut |_, _, _| {})?;
        let s_t = path.terminal_spot();
        let r = state
            .acct
            .close(path.maturity(), s_t, self.surface.contract().payoff(s_t));
        let mut warnings = Vec::new();
        if self.eta >= 1.0 {
            warnings.push(format!(
                "threshold {} cannot be reached by a delta in (0, 1); the hedge is static",
                self.eta
            ));
        }
        Ok(HedgeRunResult {
            r,
            n: state.n,
            rebalance_times: state.times,
            first_rebalance: state.first,
            last_rebalance: state.last,
            max_abs_gap: state.max_abs_gap,
            max_overshoot: state.max_overshoot,
            seed_id: path.seed_id,
            warnings,
        })
    }

    /// Runs the strategy up to the last requested knot and reports the gap at
    /// each of them. `knots` must be sorted path indices.
    pub fn observe<R: Rng + ?Sized>(&self, path: &Path, knots: &[usize], rng: &mut R) -> Result<Vec<GapProcessSample>> {
        self.check_path(path)?;
        if knots.windows(2).any(|w| w[1] <= w[0]) || knots.iter().any(|&k| k == 0 || k > path.steps()) {
            return Err(HedgeError::Argument(
                "observation knots must be strictly increasing interior indices".into(),
            ));
        }
        let Some(&end) = knots.last() else {
            return Ok(Vec::new());
        };
        let mut state = self.open();
        let mut out = Vec::with_capacity(knots.len());
        let mut next = 0;
        self.advance(path, end, rng, &mut state, &mut |i, k, st| {
            if next < knots.len() && knots[next] == i {
                next += 1;
                let (t, s) = (path.times[i], path.spots[i]);
                let x = self.surface.delta_unchecked(t, s);
                let held = self.level_value(k);
                let cell = ((x - self.x0) / self.eta).floor();
                out.push(GapProcessSample {
                    t,
                    d: x - held,
                    x,
                    s,
                    cell_position: (x - self.x0) / self.eta - cell,
                    lower_edge_held: cell as i64 == k,
                    rebalances: st.n,
                });
            }
        })?;
        Ok(out)
    }

    fn open(&self) -> State {
        State {
            k: 0,
            acct: Account::open(self.surface.rate(), self.premium, self.x0, self.s0),
            n: 0,
            first: None,
            last: None,
            times: self.config.record_trades.then(Vec::new),
            max_overshoot: 0.0,
            max_abs_gap: self.config.diagnostics.then_some(0.0),
        }
    }

    /// Processes steps `0..end`, calling `at_knot(i, k, state)` after knot
    /// `i` has been reached with level `k` held.
    fn advance<R: Rng + ?Sized>(
        &self,
        path: &Path,
        end: usize,
        rng: &mut R,
        state: &mut State,
        at_knot: &mut dyn FnMut(usize, i64, &State),
    ) -> Result<()> {
        let time_tol = 1e-12 * path.maturity().max(1.0);
        for i in 0..end {
            let (a, b) = (path.times[i], path.times[i + 1]);
            if b <= self.stop_time + time_tol && self.eta < 1.0 {
                let (ya, yb, sigma) = (path.log_spots[i], path.log_spots[i + 1], path.step_vol[i]);
                let min_h = 1e-14 * path.maturity();
                let mut trades = 0;
                // barrier chords for the levels above and below the held one
                let mut cached: Option<(i64, Option<Chord>, Option<Chord>)> = None;
                // bridge sub-intervals still to scan, latest first
                let mut pending = vec![(a, ya, b, yb)];
                while let Some((mut t_cur, mut y_cur, t_end, y_end)) = pending.pop() {
                    loop {
                        let k = state.k;
                        let (up, down) = match cached {
                            Some((ck, u, d)) if ck == k => (u, d),
                            _ => {
                                let u = self.chord(a, b, k + 1);
                                let d = self.chord(a, b, k - 1);
                                cached = Some((k, u, d));
                                (u, d)
                            }
                        };
                        let h = t_end - t_cur;
                        let gap_up = up.map(|c| (c.at(a, b, t_cur) - y_cur, c.at(a, b, t_end) - y_end));
                        let gap_down = down.map(|c| (y_cur - c.at(a, b, t_cur), y_end - c.at(a, b, t_end)));
                        // Both barriers within reach: the one-sided passage laws are no
                        // longer independent, so split the interval at a bridge midpoint.
                        if h > min_h && hit_chance(gap_up, h, sigma) * hit_chance(gap_down, h, sigma) > JOINT_HIT_LIMIT
                        {
                            let t_mid = 0.5 * (t_cur + t_end);
                            let z: f64 = rng.sample(StandardNormal);
                            let y_mid = 0.5 * (y_cur + y_end) + 0.5 * sigma * h.sqrt() * z;
                            pending.push((t_mid, y_mid, t_end, y_end));
                            pending.push((t_cur, y_cur, t_mid, y_mid));
                            break;
                        }
                        let hit_up = gap_up.and_then(|(s, e)| passage_time(s, e, h, sigma, rng));
                        let hit_down = gap_down.and_then(|(s, e)| passage_time(s, e, h, sigma, rng));
                        let (dt, dir, chord) = match (hit_up, hit_down) {
                            (None, None) => break,
                            (Some(u), None) => (u, 1, up),
                            (None, Some(d)) => (d, -1, down),
                            (Some(u), Some(d)) if u <= d => (u, 1, up),
                            (Some(_), Some(d)) => (d, -1, down),
                        };
                        let tau = (t_cur + dt).min(t_end);
                        let y_star = chord.expect("crossed barrier exists").at(a, b, tau);
                        let s_star = y_star.exp();
                        let target = self.level_value(k + dir);
                        if tau < self.surface.max_time() {
                            let x = self.surface.delta_unchecked(tau, s_star);
                            let overshoot = (x - target).abs() / self.eta;
                            state.max_overshoot = state.max_overshoot.max(overshoot);
                        }
                        state.acct.rebalance(tau, s_star, target);
                        state.k = k + dir;
                        state.n += 1;
                        state.first.get_or_insert(tau);
                        state.last = Some(tau);
                        if let Some(times) = state.times.as_mut() {
                            times.push(tau);
                        }
                        t_cur = tau;
                        y_cur = y_star;
                        trades += 1;
                        if trades > MAX_TRADES_PER_STEP {
                            return Err(HedgeError::GridResolution(format!(
                                "more than {MAX_TRADES_PER_STEP} trades inside step [{a}, {b}]"
                            )));
                        }
                    }
                }
                if let Some(g) = state.max_abs_gap.as_mut() {
                    if b < self.surface.max_time() {
                        let x = self.surface.delta_unchecked(b, path.spots[i + 1]);
                        *g = g.max((x - self.level_value(state.k)).abs());
                    }
                }
            }
            at_knot(i + 1, state.k, state);
        }
        if state.max_overshoot > self.config.tol_overshoot {
            return Err(HedgeError::GridResolution(format!(
                "trade deltas missed their level by {:.3} eta (tolerance {}); refine the base grid",
                state.max_overshoot, self.config.tol_overshoot
            )));
        }
        Ok(())
    }
}

/// Probability that a bridge with the given end gaps to a line touches it.
fn hit_chance(gaps: Option<(f64, f64)>, h: f64, sigma: f64) -> f64 {
    match gaps {
        None => 0.0,
        Some((start, end)) if start <= 0.0 || end <= 0.0 => 1.0,
        Some(_) if h <= 0.0 => 0.0,
        Some((start, end)) => (-2.0 * start * end / (sigma * sigma * h)).exp(),
    }
}

/// First-passage time of a Brownian bridge through a line, measured from
/// the start of the remaining interval.
///
/// `start` and `end` are the distances from the bridge to the line at the two
/// ends (positive on the near side), `h` the interval length and `sigma` the
/// volatility. Returns `None` when the bridge does not reach the line.
fn passage_time<R: Rng + ?Sized>(start: f64, end: f64, h: f64, sigma: f64, rng: &mut R) -> Option<f64> {
    if start <= 0.0 {
        return Some(0.0);
    }
    if h <= 0.0 {
        return None;
    }
    let var = sigma * sigma;
    if end > 0.0 {
        let e = 2.0 * start * end / (var * h);
        if e > NEGLIGIBLE_EXPONENT || open01(rng) >= (-e).exp() {
            return None;
        }
    }
    // time-changed passage time: inverse Gaussian (Levy when end == 0)
    let shape = start * start / var;
    let rho = if end != 0.0 {
        inverse_gaussian(start * h / end.abs(), shape, rng)
    } else {
        let z: f64 = rng.sample(StandardNormal);
        shape / (z * z)
    };
    Some(if rho.is_finite() { rho * h / (h + rho) } else { h })
}

/// Inverse Gaussian draw by the transformation-with-rejection method, using
/// the cancellation-free form of the smaller root.
pub(crate) fn inverse_gaussian<R: Rng + ?Sized>(mean: f64, shape: f64, rng: &mut R) -> f64 {
    let v: f64 = rng.sample(StandardNormal);
    let y = mean * v * v;
    let root = (4.0 * shape * y + y * y).sqrt();
    let x = if y > 0.0 {
        mean * 4.0 * shape * y / ((root + y) * (root + y))
    } else {
        mean
    };
    if open01(rng) * (mean + x) <= mean {
        x
    } else {
        mean * mean / x
    }
}

pub fn run_adaptive_hedge<S: PricingSurface + ?Sized, R: Rng + ?Sized>(
    path: &Path,
    surface: &S,
    eta: f64,
    config: &CrossingConfig,
    rng: &mut R,
) -> Result<HedgeRunResult> {
    AdaptiveHedger::new(surface, path.spots[0], eta, config)?.run(path, rng)
}

/// Gap `D(t, S_t)` under the adaptive rule at the requested times, which are
/// inserted into the path by bridge refinement when they are not knots.
pub fn gap_samples<S: PricingSurface + ?Sized, R: Rng + ?Sized>(
    path: &Path,
    surface: &S,
    eta: f64,
    times: &[f64],
    config: &CrossingConfig,
    refine_rng: &mut R,
    crossing_rng: &mut R,
) -> Result<Vec<GapProcessSample>> {
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    for &t in &sorted {
        if !(t > 0.0 && t <= surface.max_time() && t < surface.maturity()) {
            return Err(HedgeError::Domain(format!(
                "observation time {t} outside (0, {}]",
                surface.max_time()
            )));
        }
    }
    let refined = path.with_knots(&sorted, refine_rng)?;
    let mut knots: Vec<usize> = sorted
        .iter()
        .map(|&t| refined.index_of(t).expect("knot was inserted"))
        .collect();
    knots.dedup();
    AdaptiveHedger::new(surface, path.spots[0], eta, config)?.observe(&refined, &knots, crossing_rng)
}
