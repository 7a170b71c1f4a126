//! Market models and path generation.
//!
//! The risky asset follows `dS = r S dt + sigma(t, S) S dW` under the pricing
//! measure. All simulation happens in log-space, `Y = log S`, so generated
//! spots are positive by construction.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::normal;
use crate::rng::{RngPolicy, StreamTag};

/// Relative tolerance used when matching requested knots against a grid.
pub const KNOT_TOLERANCE: f64 = 1e-12;

/// User supplied local volatility. Declared bounds are trusted, not verified.
#[derive(Clone)]
pub struct CustomVol {
    pub func: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub lower: f64,
    pub upper: f64,
}

impl fmt::Debug for CustomVol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomVol")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .finish_non_exhaustive()
    }
}

impl PartialEq for CustomVol {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.func, &other.func) && self.lower == other.lower && self.upper == other.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VolatilitySpec {
    Constant {
        sigma: f64,
    },
    /// `sigma(t, s) = sigma0 + sigma1 * exp(-(log s - center)^2 / width)`.
    ///
    /// Bounded in `[sigma0, sigma0 + sigma1]` with bounded log-space
    /// derivatives of every order.
    SmoothLocal {
        sigma0: f64,
        sigma1: f64,
        center: f64,
        width: f64,
    },
    #[serde(skip)]
    Custom(CustomVol),
}

impl VolatilitySpec {
    pub fn constant(sigma: f64) -> Result<Self> {
        let v = VolatilitySpec::Constant { sigma };
        v.validate()?;
        Ok(v)
    }

    pub fn smooth_local(sigma0: f64, sigma1: f64, center: f64, width: f64) -> Result<Self> {
        let v = VolatilitySpec::SmoothLocal {
            sigma0,
            sigma1,
            center,
            width,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            VolatilitySpec::Constant { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(HedgeError::param("sigma", sigma, "must be positive and finite"));
                }
            }
            VolatilitySpec::SmoothLocal {
                sigma0,
                sigma1,
                center,
                width,
            } => {
                if !(sigma0 > 0.0 && sigma0.is_finite()) {
                    return Err(HedgeError::param("sigma0", sigma0, "must be positive and finite"));
                }
                // sigma1 = 0 is allowed: it degenerates to constant sigma0
                if !(sigma1 >= 0.0 && sigma1.is_finite()) {
                    return Err(HedgeError::param("sigma1", sigma1, "must be non-negative and finite"));
                }
                if !center.is_finite() {
                    return Err(HedgeError::param("center", center, "must be finite"));
                }
                if !(width > 0.0 && width.is_finite()) {
                    return Err(HedgeError::param("width", width, "must be positive and finite"));
                }
            }
            VolatilitySpec::Custom(ref c) => {
                if !(c.lower > 0.0 && c.upper >= c.lower && c.upper.is_finite()) {
                    return Err(HedgeError::param(
                        "bounds",
                        c.lower,
                        format!("need 0 < lower <= upper < inf, got upper = {}", c.upper),
                    ));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn sigma(&self, t: f64, s: f64) -> f64 {
        match *self {
            VolatilitySpec::Constant { sigma } => sigma,
            VolatilitySpec::SmoothLocal {
                sigma0,
                sigma1,
                center,
                width,
            } => {
                let d = s.ln() - center;
                sigma0 + sigma1 * (-d * d / width).exp()
            }
            VolatilitySpec::Custom(ref c) => (c.func)(t, s),
        }
    }

    /// Declared `(lower, upper)` bounds of sigma over the whole domain.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            VolatilitySpec::Constant { sigma } => (sigma, sigma),
            VolatilitySpec::SmoothLocal { sigma0, sigma1, .. } => (sigma0, sigma0 + sigma1),
            VolatilitySpec::Custom(ref c) => (c.lower, c.upper),
        }
    }

    pub fn constant_sigma(&self) -> Option<f64> {
        match *self {
            VolatilitySpec::Constant { sigma } => Some(sigma),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    pub r: f64,
    pub s0: f64,
    pub vol: VolatilitySpec,
}

impl MarketModel {
    pub fn new(r: f64, s0: f64, vol: VolatilitySpec) -> Result<Self> {
        let m = MarketModel { r, s0, vol };
        m.validate()?;
        Ok(m)
    }

    /// Constant volatility Black-Scholes market.
    pub fn black_scholes(r: f64, s0: f64, sigma: f64) -> Result<Self> {
        Self::new(r, s0, VolatilitySpec::constant(sigma)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(HedgeError::param("s0", self.s0, "must be positive and finite"));
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(HedgeError::param("r", self.r, "must be non-negative and finite"));
        }
        self.vol.validate()
    }

    #[inline]
    pub fn sigma(&self, t: f64, s: f64) -> f64 {
        self.vol.sigma(t, s)
    }

    pub fn constant_sigma(&self) -> Option<f64> {
        self.vol.constant_sigma()
    }
}

/// Strictly increasing simulation times starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(HedgeError::InvalidGrid("empty grid".into()));
        }
        if times[0] != 0.0 {
            return Err(HedgeError::InvalidGrid(format!(
                "grid must start at 0, got {}",
                times[0]
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(HedgeError::InvalidGrid("non-finite time".into()));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(HedgeError::InvalidGrid(format!(
                "times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(TimeGrid { times })
    }

    pub fn uniform(maturity: f64, steps: usize) -> Result<Self> {
        if maturity == 0.0 {
            return Self::new(vec![0.0]);
        }
        if !(maturity > 0.0) || steps == 0 {
            return Err(HedgeError::InvalidGrid(format!(
                "uniform grid needs T > 0 and steps > 0 (T = {maturity}, steps = {steps})"
            )));
        }
        let mut times: Vec<f64> = (0..steps).map(|i| maturity * i as f64 / steps as f64).collect();
        times.push(maturity);
        Self::new(times)
    }

    /// Uniform steps of at most `max_step`, refined geometrically towards
    /// maturity so that every step `[a, b]` with `b < T - cutoff` satisfies
    /// `b - a <= grading * (T - b)`. The final step is `[T - cutoff, T]`.
    pub fn graded(maturity: f64, max_step: f64, grading: f64, cutoff: f64) -> Result<Self> {
        if !(maturity > 0.0 && max_step > 0.0 && grading > 0.0 && cutoff > 0.0 && cutoff < maturity) {
            return Err(HedgeError::InvalidGrid(format!(
                "graded grid needs positive T, max_step, grading and 0 < cutoff < T \
                 (T = {maturity}, max_step = {max_step}, grading = {grading}, cutoff = {cutoff})"
            )));
        }
        let steps = (maturity / max_step).ceil() as usize;
        let dt = maturity / steps as f64;
        // switch to geometric spacing where the uniform step exceeds grading * remaining time
        let switch = (dt / grading).max(cutoff).min(maturity);
        let mut times: Vec<f64> = (0..steps)
            .map(|i| maturity * i as f64 / steps as f64)
            .take_while(|&t| maturity - t >= switch)
            .collect();
        let mut remaining = maturity - times.last().copied().unwrap_or(0.0);
        loop {
            remaining /= 1.0 + grading;
            if remaining <= cutoff {
                break;
            }
            times.push(maturity - remaining);
        }
        times.push(maturity - cutoff);
        times.push(maturity);
        times.dedup_by(|b, a| (*b - *a).abs() <= KNOT_TOLERANCE * maturity);
        Self::new(times)
    }

    /// Merges extra knots into the grid. Knots closer than the matching
    /// tolerance to an existing knot are dropped.
    pub fn with_knots(self, extra: &[f64]) -> Result<Self> {
        let maturity = self.maturity();
        let mut times = self.times;
        for &k in extra {
            if !(k >= 0.0 && k <= maturity) {
                return Err(HedgeError::InvalidGrid(format!("knot {k} outside [0, {maturity}]")));
            }
            times.push(k);
        }
        times.sort_by(f64::total_cmp);
        let tol = KNOT_TOLERANCE * maturity.max(1.0);
        times.dedup_by(|b, a| (*b - *a).abs() <= tol);
        // the maturity itself must survive deduplication exactly
        if let Some(last) = times.last_mut() {
            *last = maturity;
        }
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn maturity(&self) -> f64 {
        *self.times.last().expect("grid is never empty")
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn max_step(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Index of the knot matching `t` within tolerance.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        find_knot(&self.times, t)
    }
}

fn find_knot(times: &[f64], t: f64) -> Option<usize> {
    let tol = KNOT_TOLERANCE * times.last().copied().unwrap_or(1.0).max(1.0);
    let i = times.partition_point(|&x| x < t - tol);
    (i < times.len() && (times[i] - t).abs() <= tol).then_some(i)
}

/// A simulated risky-asset path.
///
/// Inside step `i` the log-spot evolves as a Brownian motion with drift
/// `rate - step_vol[i]^2 / 2` and volatility `step_vol[i]`. For the exact
/// constant-volatility sampler this is the true law; for the Euler sampler it
/// is the continuous interpolation of the scheme with frozen coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub spots: Vec<f64>,
    pub log_spots: Vec<f64>,
    /// Brownian increments, one per step.
    pub wiener: Vec<f64>,
    pub step_vol: Vec<f64>,
    pub rate: f64,
    pub seed_id: u64,
}

/// Value inserted inside a step by Brownian-bridge refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedPoint {
    pub time: f64,
    /// `W(t*) - W(t_i)` for the refined step.
    pub wiener_offset: f64,
    pub log_spot: f64,
    pub spot: f64,
}

impl Path {
    pub fn maturity(&self) -> f64 {
        *self.times.last().expect("path is never empty")
    }

    pub fn terminal_spot(&self) -> f64 {
        *self.spots.last().expect("path is never empty")
    }

    pub fn steps(&self) -> usize {
        self.wiener.len()
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        find_knot(&self.times, t)
    }

    pub fn with_seed_id(mut self, id: u64) -> Self {
        self.seed_id = id;
        self
    }

    #[inline]
    pub fn step_drift(&self, i: usize) -> f64 {
        self.rate - 0.5 * self.step_vol[i] * self.step_vol[i]
    }

    fn check_inside(&self, i: usize, t: f64) -> Result<()> {
        if i >= self.steps() {
            return Err(HedgeError::Domain(format!(
                "step index {i} out of range ({} steps)",
                self.steps()
            )));
        }
        let (a, b) = (self.times[i], self.times[i + 1]);
        if !(t > a && t < b) {
            return Err(HedgeError::Domain(format!(
                "t* = {t} not strictly inside step ({a}, {b})"
            )));
        }
        Ok(())
    }

    /// Bridge refinement with an explicit standard normal draw `z`.
    pub fn refine_with_draw(&self, i: usize, t: f64, z: f64) -> Result<RefinedPoint> {
        self.check_inside(i, t)?;
        let (a, b) = (self.times[i], self.times[i + 1]);
        let h = b - a;
        let mean = (t - a) / h * self.wiener[i];
        let sd = ((t - a) * (b - t) / h).sqrt();
        let w = mean + sd * z;
        let y = self.log_spots[i] + self.step_drift(i) * (t - a) + self.step_vol[i] * w;
        Ok(RefinedPoint {
            time: t,
            wiener_offset: w,
            log_spot: y,
            spot: y.exp(),
        })
    }

    /// Draws the Brownian motion at `t` inside step `i` conditionally on the
    /// step's endpoints and maps it through the step dynamics.
    pub fn refine_between<R: Rng + ?Sized>(&self, i: usize, t: f64, rng: &mut R) -> Result<RefinedPoint> {
        let z: f64 = rng.sample(StandardNormal);
        self.refine_with_draw(i, t, z)
    }

    /// New path with a knot inserted inside step `i`. Existing knots keep
    /// their stored values bit for bit.
    pub fn insert_knot<R: Rng + ?Sized>(&self, i: usize, t: f64, rng: &mut R) -> Result<Path> {
        let p = self.refine_between(i, t, rng)?;
        let mut out = self.clone();
        out.times.insert(i + 1, t);
        out.spots.insert(i + 1, p.spot);
        out.log_spots.insert(i + 1, p.log_spot);
        let rest = self.wiener[i] - p.wiener_offset;
        out.wiener[i] = p.wiener_offset;
        out.wiener.insert(i + 1, rest);
        out.step_vol.insert(i + 1, self.step_vol[i]);
        Ok(out)
    }

    /// Ensures every requested time is a knot, inserting bridge values where
    /// needed.
    pub fn with_knots<R: Rng + ?Sized>(&self, extra: &[f64], rng: &mut R) -> Result<Path> {
        let mut out = self.clone();
        for &t in extra {
            if out.index_of(t).is_some() {
                continue;
            }
            if !(t > 0.0 && t < out.maturity()) {
                return Err(HedgeError::Domain(format!("knot {t} outside (0, {})", out.maturity())));
            }
            let i = out.times.partition_point(|&x| x < t) - 1;
            out = out.insert_knot(i, t, rng)?;
        }
        Ok(out)
    }

    /// Restriction of the path to a subset of its knots. Spot values at the
    /// kept knots are returned unchanged.
    pub fn coarsen(&self, keep: &[f64]) -> Result<Path> {
        let mut idx = Vec::with_capacity(keep.len());
        for &t in keep {
            let i = self
                .index_of(t)
                .ok_or_else(|| HedgeError::GridAlignment(format!("{t} is not a knot of the path")))?;
            idx.push(i);
        }
        idx.sort_unstable();
        idx.dedup();
        if idx.first() != Some(&0) || idx.last() != Some(&(self.times.len() - 1)) {
            return Err(HedgeError::GridAlignment(
                "coarsened path must keep 0 and maturity".into(),
            ));
        }
        let wiener = idx.windows(2).map(|w| self.wiener[w[0]..w[1]].iter().sum()).collect();
        let step_vol = idx.windows(2).map(|w| self.step_vol[w[0]]).collect();
        Ok(Path {
            times: idx.iter().map(|&i| self.times[i]).collect(),
            spots: idx.iter().map(|&i| self.spots[i]).collect(),
            log_spots: idx.iter().map(|&i| self.log_spots[i]).collect(),
            wiener,
            step_vol,
            rate: self.rate,
            seed_id: self.seed_id,
        })
    }
}

fn single_point(model: &MarketModel) -> Path {
    Path {
        times: vec![0.0],
        spots: vec![model.s0],
        log_spots: vec![model.s0.ln()],
        wiener: vec![],
        step_vol: vec![],
        rate: model.r,
        seed_id: 0,
    }
}

/// Exact lognormal sampling at the grid times; constant volatility only.
pub fn simulate_exact_gbm<R: Rng + ?Sized>(model: &MarketModel, grid: &TimeGrid, rng: &mut R) -> Result<Path> {
    let sigma = model
        .constant_sigma()
        .ok_or_else(|| HedgeError::UnsupportedModel("exact sampler needs constant volatility".into()))?;
    let times = grid.times();
    let n = grid.steps();
    if n == 0 {
        return Ok(single_point(model));
    }
    let drift = model.r - 0.5 * sigma * sigma;
    let mut log_spots = Vec::with_capacity(n + 1);
    let mut wiener = Vec::with_capacity(n);
    let mut y = model.s0.ln();
    log_spots.push(y);
    for w in times.windows(2) {
        let h = w[1] - w[0];
        let z: f64 = rng.sample(StandardNormal);
        let dw = h.sqrt() * z;
        y += drift * h + sigma * dw;
        wiener.push(dw);
        log_spots.push(y);
    }
    let mut spots: Vec<f64> = log_spots.iter().map(|y| y.exp()).collect();
    spots[0] = model.s0;
    Ok(Path {
        times: times.to_vec(),
        spots,
        log_spots,
        wiener,
        step_vol: vec![sigma; n],
        rate: model.r,
        seed_id: 0,
    })
}

/// Log-space Euler-Maruyama for a general local volatility.
pub fn simulate_euler_localvol<R: Rng + ?Sized>(
    model: &MarketModel,
    grid: &TimeGrid,
    max_step: f64,
    rng: &mut R,
) -> Result<Path> {
    let times = grid.times();
    let n = grid.steps();
    if n == 0 {
        return Ok(single_point(model));
    }
    let widest = grid.max_step();
    if widest > max_step * (1.0 + 1e-12) {
        return Err(HedgeError::GridResolution(format!(
            "largest step {widest} exceeds the configured maximum {max_step}"
        )));
    }
    let mut log_spots = Vec::with_capacity(n + 1);
    let mut wiener = Vec::with_capacity(n);
    let mut step_vol = Vec::with_capacity(n);
    let mut y = model.s0.ln();
    let mut s = model.s0;
    log_spots.push(y);
    for w in times.windows(2) {
        let h = w[1] - w[0];
        let sig = model.sigma(w[0], s);
        let z: f64 = rng.sample(StandardNormal);
        let dw = h.sqrt() * z;
        y += (model.r - 0.5 * sig * sig) * h + sig * dw;
        s = y.exp();
        wiener.push(dw);
        step_vol.push(sig);
        log_spots.push(y);
    }
    let mut spots: Vec<f64> = log_spots.iter().map(|y| y.exp()).collect();
    spots[0] = model.s0;
    Ok(Path {
        times: times.to_vec(),
        spots,
        log_spots,
        wiener,
        step_vol,
        rate: model.r,
        seed_id: 0,
    })
}

/// Transition density of `S_{t'}` given `S_t = s` under constant volatility.
pub fn lognormal_transition_density(model: &MarketModel, t: f64, s: f64, t_next: f64, s_next: f64) -> Result<f64> {
    let sigma = model
        .constant_sigma()
        .ok_or_else(|| HedgeError::UnsupportedModel("lognormal density needs constant volatility".into()))?;
    if !(t_next > t) {
        return Err(HedgeError::Domain(format!("need t' > t (t = {t}, t' = {t_next})")));
    }
    if !(s > 0.0 && s_next > 0.0) {
        return Err(HedgeError::Domain(format!(
            "spots must be positive (s = {s}, s' = {s_next})"
        )));
    }
    let h = t_next - t;
    let sd = sigma * h.sqrt();
    let mean = s.ln() + (model.r - 0.5 * sigma * sigma) * h;
    Ok(normal::pdf((s_next.ln() - mean) / sd) / (sd * s_next))
}

/// Which sampler a generator uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    ExactGbm,
    Euler { max_step: f64 },
}

/// Produces reproducible paths by index.
#[derive(Debug, Clone)]
pub struct PathGenerator {
    pub model: MarketModel,
    pub grid: TimeGrid,
    pub scheme: Scheme,
    pub policy: RngPolicy,
}

impl PathGenerator {
    /// Exact sampling for constant volatility, Euler otherwise.
    pub fn new(model: MarketModel, grid: TimeGrid, policy: RngPolicy) -> Self {
        let scheme = if model.constant_sigma().is_some() {
            Scheme::ExactGbm
        } else {
            Scheme::Euler {
                max_step: grid.max_step(),
            }
        };
        PathGenerator {
            model,
            grid,
            scheme,
            policy,
        }
    }

    pub fn generate(&self, index: u64) -> Result<Path> {
        let mut rng = self.policy.stream(StreamTag::Path, index);
        let path = match self.scheme {
            Scheme::ExactGbm => simulate_exact_gbm(&self.model, &self.grid, &mut rng)?,
            Scheme::Euler { max_step } => simulate_euler_localvol(&self.model, &self.grid, max_step, &mut rng)?,
        };
        Ok(path.with_seed_id(index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bs() -> MarketModel {
        MarketModel::black_scholes(0.0, 100.0, 0.2).unwrap()
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(VolatilitySpec::constant(0.0).is_err());
        assert!(MarketModel::black_scholes(0.0, -1.0, 0.2).is_err());
        assert!(MarketModel::black_scholes(-0.01, 100.0, 0.2).is_err());
        assert!(VolatilitySpec::smooth_local(0.1, 0.1, 4.6, 0.0).is_err());
    }

    #[test]
    fn smooth_local_respects_bounds() {
        let v = VolatilitySpec::smooth_local(0.15, 0.1, 100f64.ln(), 0.2).unwrap();
        let (lo, hi) = v.bounds();
        for k in 0..200 {
            let s = 10.0 * 1.03f64.powi(k);
            let sig = v.sigma(0.3, s);
            assert!(sig >= lo && sig <= hi);
        }
        assert!((v.sigma(0.0, 100.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn single_step_with_zero_draw() {
        // s0 * exp(-sigma^2 / 2) for r = 0, h = 1, z = 0
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let path = simulate_exact_gbm(&bs(), &grid, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let p = Path {
            wiener: vec![0.0],
            ..path
        };
        let zero = p.refine_with_draw(0, 0.5, 0.0).unwrap();
        assert!((zero.log_spot - (100f64.ln() - 0.01)).abs() < 1e-14);
        let y_t = 100f64.ln() + p.step_drift(0) * 1.0;
        assert!((y_t.exp() - 98.019_867_330_675_53).abs() < 1e-9);
    }

    #[test]
    fn degenerate_grid_gives_single_spot() {
        let grid = TimeGrid::new(vec![0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = simulate_exact_gbm(&bs(), &grid, &mut rng).unwrap();
        let b = simulate_euler_localvol(&bs(), &grid, 0.1, &mut rng).unwrap();
        assert_eq!(a.spots, vec![100.0]);
        assert_eq!(b.spots, vec![100.0]);
        assert_eq!(a.times.len(), a.wiener.len() + 1);
    }

    #[test]
    fn exact_sampler_rejects_local_vol() {
        let m = MarketModel::new(0.0, 100.0, VolatilitySpec::smooth_local(0.1, 0.1, 4.6, 0.5).unwrap()).unwrap();
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let err = simulate_exact_gbm(&m, &grid, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, HedgeError::UnsupportedModel(_)));
    }

    #[test]
    fn euler_rejects_coarse_grid() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let err = simulate_euler_localvol(&bs(), &grid, 0.01, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, HedgeError::GridResolution(_)));
    }

    #[test]
    fn zero_bump_matches_constant_euler() {
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let flat = MarketModel::new(0.03, 100.0, VolatilitySpec::smooth_local(0.2, 0.0, 4.0, 1.0).unwrap()).unwrap();
        let a = simulate_euler_localvol(&flat, &grid, 1.0, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = simulate_euler_localvol(
            &MarketModel::black_scholes(0.03, 100.0, 0.2).unwrap(),
            &grid,
            1.0,
            &mut ChaCha8Rng::seed_from_u64(11),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn graded_grid_shape() {
        let g = TimeGrid::graded(1.0, 1.0 / 4096.0, 0.03, 1e-6).unwrap();
        let t = g.times();
        assert_eq!(t[0], 0.0);
        assert_eq!(g.maturity(), 1.0);
        assert!(g.index_of(1.0 - 1e-6).is_some());
        assert!(g.index_of(0.5).is_some());
        assert!(g.max_step() <= 1.0 / 4096.0 + 1e-15);
        for w in t.windows(2) {
            if w[1] < 1.0 - 1e-6 - 1e-15 {
                assert!(w[1] - w[0] <= 0.03 * (1.0 - w[1]) * (1.0 + 1e-9) + 1e-15 || w[1] - w[0] <= 1.0 / 4096.0);
            }
        }
        let g = g.with_knots(&[0.25, 1.0 - 1.0 / 256.0, 0.123]).unwrap();
        assert!(g.index_of(1.0 - 1.0 / 256.0).is_some());
        assert!(g.index_of(0.123).is_some());
    }

    #[test]
    fn refinement_outside_step_is_an_error() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let p = simulate_exact_gbm(&bs(), &grid, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(matches!(p.refine_with_draw(1, 0.25, 0.0), Err(HedgeError::Domain(_))));
        assert!(matches!(p.refine_with_draw(1, 0.6, 0.0), Err(HedgeError::Domain(_))));
        assert!(p.refine_with_draw(1, 0.3, 0.0).is_ok());
    }

    #[test]
    fn midpoint_bridge_mean() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let p = simulate_exact_gbm(&bs(), &grid, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mid = p.refine_with_draw(2, 0.625, 0.0).unwrap();
        assert!((mid.wiener_offset - 0.5 * p.wiener[2]).abs() < 1e-16);
    }

    #[test]
    fn refine_then_coarsen_is_identity_at_knots() {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let p = simulate_exact_gbm(&bs(), &grid, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let fine = p.with_knots(&[0.3, 0.31, 0.9, 0.05], &mut rng).unwrap();
        assert_eq!(fine.times.len(), 13);
        for (i, &t) in p.times.iter().enumerate() {
            let j = fine.index_of(t).unwrap();
            assert_eq!(fine.spots[j], p.spots[i]);
        }
        let back = fine.coarsen(&p.times).unwrap();
        assert_eq!(back.spots, p.spots);
        assert_eq!(back.times, p.times);
        for (a, b) in back.wiener.iter().zip(&p.wiener) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn transition_density_reference_value() {
        // phi(0.1) / (100 * 0.2)
        let d = lognormal_transition_density(&bs(), 0.0, 100.0, 1.0, 100.0).unwrap();
        assert!((d - 0.019_847_627_42).abs() < 1e-10);
        assert!(lognormal_transition_density(&bs(), 1.0, 100.0, 1.0, 100.0).is_err());
    }
}
