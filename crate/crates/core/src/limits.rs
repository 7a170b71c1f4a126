//! Distribution of the normalised hedge-ratio gap `D / eta`.
//!
//! As `eta -> 0` the gap observed at a fixed time approaches the triangular
//! law with density `1 - |z|` on `[-1, 1]`, independently of the state. The
//! position `z` of the delta inside its lattice cell decides which branch is
//! held: `D / eta = z` with probability `1 - z`, else `z - 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::hedge::{AdaptiveHedger, CrossingConfig};
use crate::model::{MarketModel, PathGenerator, TimeGrid};
use crate::pricing::PricingSurface;
use crate::rng::{RngPolicy, StreamTag};
use crate::stats::MeanSe;

/// Fewer expected trades before the observation time than this flags a
/// batch as pre-asymptotic.
pub const MIN_EXPECTED_TRADES: f64 = 5.0;

/// Observation times must keep this fraction of the maturity away from both
/// ends.
pub const OBSERVATION_MARGIN: f64 = 0.01;

/// The triangular law on `[-1, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TriangularLaw;

impl TriangularLaw {
    pub fn density(&self, z: f64) -> f64 {
        (1.0 - z.abs()).max(0.0)
    }

    pub fn cdf(&self, z: f64) -> f64 {
        triangular_cdf(z)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.5 {
            -1.0 + (2.0 * p.max(0.0)).sqrt()
        } else {
            1.0 - (2.0 * (1.0 - p.min(1.0))).sqrt()
        }
    }

    pub fn second_moment(&self) -> f64 {
        1.0 / 6.0
    }
}

pub fn triangular_cdf(z: f64) -> f64 {
    if z <= -1.0 {
        0.0
    } else if z <= 0.0 {
        0.5 * (1.0 + z) * (1.0 + z)
    } else if z < 1.0 {
        1.0 - 0.5 * (1.0 - z) * (1.0 - z)
    } else {
        1.0
    }
}

/// Exact one-sample Kolmogorov-Smirnov distance.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(HedgeError::Argument("KS statistic of an empty sample".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// Bounded test functions of the moment factorisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFunction {
    Square,
    CosPi,
}

impl TestFunction {
    pub fn eval(self, z: f64) -> f64 {
        match self {
            TestFunction::Square => z * z,
            TestFunction::CosPi => (std::f64::consts::PI * z).cos(),
        }
    }

    /// Expectation under the triangular law.
    pub fn triangular_mean(self) -> f64 {
        match self {
            TestFunction::Square => 1.0 / 6.0,
            TestFunction::CosPi => 4.0 / (std::f64::consts::PI * std::f64::consts::PI),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapBatchConfig {
    pub eta: f64,
    pub t: f64,
    pub paths: usize,
    /// Base step of the simulation grid.
    pub max_step: f64,
    pub crossing: CrossingConfig,
}

impl Default for GapBatchConfig {
    fn default() -> Self {
        GapBatchConfig {
            eta: 0.005,
            t: 0.5,
            paths: 100_000,
            max_step: 1.0 / 1024.0,
            crossing: CrossingConfig::default(),
        }
    }
}

/// Normalised gaps at one time over many paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedGapBatch {
    pub t: f64,
    pub eta: f64,
    /// `D / eta` per path.
    pub samples: Vec<f64>,
    /// `e^{-2rt} S_t^2 sigma^2(t, S_t)` per path.
    pub weights: Vec<f64>,
    /// Position of the delta in its lattice cell, in `[0, 1)`.
    pub cell_positions: Vec<f64>,
    /// The lower cell edge is held, i.e. `D / eta` equals the cell position.
    pub lower_branch: Vec<bool>,
    /// Delta at the observation time per path.
    pub deltas: Vec<f64>,
    pub mean_trades: f64,
    pub pre_asymptotic: bool,
    pub max_overshoot: f64,
    pub warnings: Vec<String>,
}

/// Runs the adaptive rule up to `config.t` on `config.paths` paths and
/// records the normalised gap there.
pub fn collect_gap_batch<S: PricingSurface + ?Sized>(
    model: &MarketModel,
    surface: &S,
    config: &GapBatchConfig,
    policy: &RngPolicy,
) -> Result<NormalizedGapBatch> {
    config.crossing.validate()?;
    let maturity = surface.maturity();
    let (eta, t) = (config.eta, config.t);
    if !(eta > 0.0 && eta < 1.0) {
        return Err(HedgeError::param("eta", eta, "must lie in (0, 1)"));
    }
    let margin = OBSERVATION_MARGIN * maturity;
    if !(t > margin && t < maturity - margin && t <= surface.max_time()) {
        return Err(HedgeError::param(
            "t",
            t,
            "observation time must lie inside (0.01 T, 0.99 T)",
        ));
    }
    if config.paths == 0 {
        return Err(HedgeError::param("paths", 0.0, "need at least one path"));
    }
    if !(config.max_step > 0.0) {
        return Err(HedgeError::param("max_step", config.max_step, "must be positive"));
    }
    let steps = (maturity / config.max_step).ceil() as usize;
    let grid = TimeGrid::uniform(maturity, steps)?.with_knots(&[t])?;
    let knot = grid.index_of(t).expect("observation time is a knot");
    let generator = PathGenerator::new(model.clone(), grid, *policy);
    let hedger = AdaptiveHedger::new(surface, model.s0, eta, &config.crossing)?;
    let rate = model.r;

    let rows: Vec<(f64, f64, f64, bool, usize, f64)> = (0..config.paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = generator.generate(i)?;
            let mut rng = policy.stream(StreamTag::crossing_for(eta), i);
            let obs = hedger.observe(&path, &[knot], &mut rng)?;
            let o = obs[0];
            let sig = model.sigma(o.t, o.s);
            let h = (-2.0 * rate * o.t).exp() * o.s * o.s * sig * sig;
            Ok((o.d / eta, h, o.cell_position, o.lower_edge_held, o.rebalances, o.x))
        })
        .collect::<Result<_>>()?;

    let mean_trades = rows.iter().map(|r| r.4 as f64).sum::<f64>() / rows.len() as f64;
    let pre_asymptotic = mean_trades < MIN_EXPECTED_TRADES;
    let mut warnings = Vec::new();
    if pre_asymptotic {
        warnings.push(format!(
            "pre-asymptotic: {mean_trades:.2} trades on average before t = {t}, below {MIN_EXPECTED_TRADES}"
        ));
    }
    let samples: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let max_overshoot = samples.iter().fold(0.0f64, |m, z| m.max(z.abs() - 1.0)).max(0.0);
    Ok(NormalizedGapBatch {
        t,
        eta,
        weights: rows.iter().map(|r| r.1).collect(),
        cell_positions: rows.iter().map(|r| r.2).collect(),
        lower_branch: rows.iter().map(|r| r.3).collect(),
        deltas: rows.iter().map(|r| r.5).collect(),
        samples,
        mean_trades,
        pre_asymptotic,
        max_overshoot,
        warnings,
    })
}

/// `mean(f(D / eta) h)` against `E_tri[f] mean(h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Factorization {
    pub function: TestFunction,
    pub weighted_mean: f64,
    pub factorized: f64,
    /// Mean and standard error of the per-path difference.
    pub difference: MeanSe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
    pub triangular_mass: f64,
}

impl NormalizedGapBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> MeanSe {
        MeanSe::of(&self.samples)
    }

    pub fn second_moment(&self) -> MeanSe {
        MeanSe::of(&self.samples.iter().map(|z| z * z).collect::<Vec<_>>())
    }

    pub fn ks(&self) -> Result<f64> {
        ks_statistic(&self.samples, triangular_cdf)
    }

    pub fn factorization(&self, f: TestFunction) -> Factorization {
        let c = f.triangular_mean();
        let diffs: Vec<f64> = self
            .samples
            .iter()
            .zip(&self.weights)
            .map(|(&z, &h)| (f.eval(z) - c) * h)
            .collect();
        let n = self.samples.len() as f64;
        let weighted_mean = self
            .samples
            .iter()
            .zip(&self.weights)
            .map(|(&z, &h)| f.eval(z) * h)
            .sum::<f64>()
            / n;
        let mean_h = self.weights.iter().sum::<f64>() / n;
        Factorization {
            function: f,
            weighted_mean,
            factorized: c * mean_h,
            difference: MeanSe::of(&diffs),
        }
    }

    /// Equal-width bins over `[-1, 1]`; samples overshooting the interval
    /// go to the end bins.
    pub fn histogram(&self, bins: usize) -> Vec<HistogramBin> {
        let bins = bins.max(1);
        let width = 2.0 / bins as f64;
        let mut counts = vec![0usize; bins];
        for &z in &self.samples {
            let b = ((z + 1.0) / width).floor().clamp(0.0, (bins - 1) as f64) as usize;
            counts[b] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| {
                let (left, right) = (-1.0 + width * i as f64, -1.0 + width * (i + 1) as f64);
                HistogramBin {
                    left,
                    right,
                    count,
                    triangular_mass: triangular_cdf(right) - triangular_cdf(left),
                }
            })
            .collect()
    }
}

/// Estimated probability of the lower branch in one cell-position bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchBin {
    pub z_low: f64,
    pub z_high: f64,
    pub count: usize,
    pub p_hat: f64,
    /// Binomial standard error under the target probability.
    pub se: f64,
    /// `1 - z` at the bin midpoint.
    pub one_minus_z: f64,
    pub within_3se: bool,
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchTable {
    pub bins: Vec<BranchBin>,
    /// Fraction of samples with `D >= 0`.
    pub nonnegative: MeanSe,
}

impl BranchTable {
    pub fn all_within(&self) -> bool {
        self.bins.iter().all(|b| b.within_3se && !b.empty)
    }
}

/// Lower-branch frequencies per decile of the cell position.
pub fn branch_probability(batch: &NormalizedGapBatch) -> BranchTable {
    const BINS: usize = 10;
    let mut hits = [0usize; BINS];
    let mut counts = [0usize; BINS];
    for (&z, &lower) in batch.cell_positions.iter().zip(&batch.lower_branch) {
        let b = ((z * BINS as f64).floor() as usize).min(BINS - 1);
        counts[b] += 1;
        hits[b] += lower as usize;
    }
    let bins = (0..BINS)
        .map(|b| {
            let (z_low, z_high) = (b as f64 / BINS as f64, (b + 1) as f64 / BINS as f64);
            let target = 1.0 - 0.5 * (z_low + z_high);
            let n = counts[b];
            let p_hat = if n > 0 { hits[b] as f64 / n as f64 } else { f64::NAN };
            let se = (target * (1.0 - target) / n as f64).sqrt();
            BranchBin {
                z_low,
                z_high,
                count: n,
                p_hat,
                se,
                one_minus_z: target,
                within_3se: n > 0 && (p_hat - target).abs() <= 3.0 * se,
                empty: n == 0,
            }
        })
        .collect();
    let nonneg: Vec<f64> = batch
        .samples
        .iter()
        .map(|&z| if z >= 0.0 { 1.0 } else { 0.0 })
        .collect();
    BranchTable {
        bins,
        nonnegative: MeanSe::of(&nonneg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::{bs_closed_form, ContractSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_values() {
        assert_eq!(triangular_cdf(0.0), 0.5);
        assert_eq!(triangular_cdf(0.5), 0.875);
        assert_eq!(triangular_cdf(-1.5), 0.0);
        assert_eq!(triangular_cdf(1.0), 1.0);
        assert!((triangular_cdf(-0.5) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn test_function_means_by_quadrature() {
        // midpoint rule on a fine grid as an independent check
        let n = 200_000;
        for f in [TestFunction::Square, TestFunction::CosPi] {
            let h = 2.0 / n as f64;
            let q: f64 = (0..n)
                .map(|i| {
                    let z = -1.0 + h * (i as f64 + 0.5);
                    f.eval(z) * (1.0 - z.abs()) * h
                })
                .sum();
            assert!((q - f.triangular_mean()).abs() < 1e-9, "{f:?}: {q}");
        }
    }

    #[test]
    fn ks_of_quantile_points() {
        let law = TriangularLaw;
        let n = 99;
        let xs: Vec<f64> = (1..=n).map(|i| law.quantile(i as f64 / (n + 1) as f64)).collect();
        let d = ks_statistic(&xs, triangular_cdf).unwrap();
        assert!((d - 1.0 / (n + 1) as f64).abs() < 1e-12, "{d}");
        assert_eq!(ks_statistic(&[0.0; 10], triangular_cdf).unwrap(), 0.5);
        assert!(matches!(
            ks_statistic(&[], triangular_cdf),
            Err(HedgeError::Argument(_))
        ));
    }

    #[test]
    fn ks_of_exact_triangular_samples() {
        let law = TriangularLaw;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 2000;
        let passes = (0..100)
            .filter(|_| {
                let xs: Vec<f64> = (0..n).map(|_| law.quantile(rng.random::<f64>())).collect();
                ks_statistic(&xs, triangular_cdf).unwrap() * (n as f64).sqrt() <= 1.63
            })
            .count();
        assert!(passes >= 90, "{passes}");
    }

    proptest! {
        #[test]
        fn cdf_is_monotone_and_symmetric(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(triangular_cdf(lo) <= triangular_cdf(hi));
            prop_assert!((triangular_cdf(a) + triangular_cdf(-a) - 1.0).abs() < 1e-15);
        }

        #[test]
        fn quantile_inverts_cdf(p in 0.0f64..1.0) {
            prop_assert!((triangular_cdf(TriangularLaw.quantile(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_batch_is_supported_and_symmetric() {
        let m = MarketModel::black_scholes(0.0, 100.0, 0.2).unwrap();
        let s = bs_closed_form(&m, &ContractSpec::call(100.0, 1.0).unwrap()).unwrap();
        let config = GapBatchConfig {
            eta: 0.05,
            paths: 2000,
            max_step: 1.0 / 128.0,
            ..GapBatchConfig::default()
        };
        let b = collect_gap_batch(&m, &s, &config, &RngPolicy::new(5)).unwrap();
        assert!(!b.pre_asymptotic);
        assert!(b.samples.iter().all(|z| z.abs() <= 1.0 + config.crossing.tol_overshoot));
        assert!(b.mean().within(0.0, 3.5), "{:?}", b.mean());
        assert!(b.second_moment().within(1.0 / 6.0, 3.5), "{:?}", b.second_moment());
        let hist = b.histogram(20);
        assert_eq!(hist.iter().map(|h| h.count).sum::<usize>(), 2000);
        assert!((hist.iter().map(|h| h.triangular_mass).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(branch_probability(&b).bins.len(), 10);
    }

    #[test]
    fn large_threshold_is_pre_asymptotic() {
        let m = MarketModel::black_scholes(0.0, 100.0, 0.2).unwrap();
        let s = bs_closed_form(&m, &ContractSpec::call(100.0, 1.0).unwrap()).unwrap();
        let config = GapBatchConfig {
            eta: 0.4,
            paths: 200,
            max_step: 1.0 / 64.0,
            ..GapBatchConfig::default()
        };
        let b = collect_gap_batch(&m, &s, &config, &RngPolicy::new(5)).unwrap();
        assert!(b.pre_asymptotic && !b.warnings.is_empty());
        assert!(collect_gap_batch(&m, &s, &GapBatchConfig { t: 0.995, ..config }, &RngPolicy::new(5)).is_err());
    }
}
