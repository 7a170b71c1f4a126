//! Asymptotic constants of the hedging error and trade count, computed by
//! nested quadrature against the transition density of the spot.
//!
//! Time integrals use `t = T - u^2` so the `1/sqrt(T - t)` growth of the
//! gamma terms near expiry becomes a bounded integrand in `u`. Every
//! constant is evaluated at two resolutions and rejected when they differ by
//! more than [`RICHARDSON_TOLERANCE`].

use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::model::MarketModel;
use crate::normal;
use crate::pricing::{ContractSpec, PricingSurface};

use super::density::LogDensity;
use super::quadrature::{breakpoints, GaussLegendre};

/// Largest relative change between the two quadrature resolutions.
pub const RICHARDSON_TOLERANCE: f64 = 0.01;

/// Discount factor inside the adaptive error constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscountVariant {
    /// `exp(-r t)`
    Single,
    /// `exp(-2 r t)`
    Double,
}

impl DiscountVariant {
    fn factor(self, r: f64, t: f64) -> f64 {
        match self {
            DiscountVariant::Single => (-r * t).exp(),
            DiscountVariant::Double => (-2.0 * r * t).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// Gauss-Legendre nodes per time panel at the coarse resolution.
    pub time_nodes: usize,
    /// Gauss-Legendre nodes per space panel at the coarse resolution.
    pub space_nodes: usize,
    /// Half-width of the spot domain in standard deviations of `log S_t`.
    pub half_width_sd: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            time_nodes: 24,
            space_nodes: 24,
            half_width_sd: 8.0,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_nodes < 16 || self.space_nodes < 16 {
            return Err(HedgeError::Configuration(format!(
                "quadrature needs at least 16 nodes per dimension (got {} x {})",
                self.time_nodes, self.space_nodes
            )));
        }
        if !(self.half_width_sd >= 6.0) {
            return Err(HedgeError::Configuration(format!(
                "quadrature half-width {} is below 6 standard deviations",
                self.half_width_sd
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitConstants {
    /// `1/6 int e^{-rt} E[S^2 sigma^2] dt`.
    pub adaptive_single: f64,
    /// `1/6 int e^{-2rt} E[S^2 sigma^2] dt`.
    pub adaptive_double: f64,
    /// `int E[S^2 sigma^2 gamma^2] dt`, the limit of `eta^2 E[N]`.
    pub rebalance: f64,
    /// `T/2 int e^{-2rt} E[S^4 sigma^4 gamma^2] dt`, the limit of `n E[R^2]`.
    pub equidistant: f64,
    /// `adaptive_double * rebalance`.
    pub product: f64,
    /// `int e^{-2rt} E[S^2 sigma^2] dt`, the isometry bound on `E[R^2] / eta^2`.
    pub bound: f64,
}

impl LimitConstants {
    pub fn adaptive(&self, variant: DiscountVariant) -> f64 {
        match variant {
            DiscountVariant::Single => self.adaptive_single,
            DiscountVariant::Double => self.adaptive_double,
        }
    }
}

/// Quadrature rules and densities for both resolutions.
struct Integrator<'a> {
    model: &'a MarketModel,
    strike: f64,
    maturity: f64,
    half_width_sd: f64,
    rules: [(GaussLegendre, GaussLegendre); 2],
    density: LogDensity,
}

/// Panel edges of `u = sqrt(T - t)`, graded towards expiry.
fn u_breaks(maturity: f64) -> Vec<f64> {
    let top = maturity.sqrt();
    [0.0, 1.0 / 256.0, 1.0 / 64.0, 1.0 / 16.0, 0.25, 0.5, 1.0]
        .iter()
        .map(|f| f * top)
        .collect()
}

impl<'a> Integrator<'a> {
    fn new(model: &'a MarketModel, contract: &ContractSpec, quad: &QuadratureConfig) -> Result<Self> {
        model.validate()?;
        contract.validate()?;
        quad.validate()?;
        let rules = [
            (
                GaussLegendre::new(quad.time_nodes),
                GaussLegendre::new(quad.space_nodes),
            ),
            (
                GaussLegendre::new(2 * quad.time_nodes),
                GaussLegendre::new(2 * quad.space_nodes),
            ),
        ];
        let maturity = contract.maturity;
        let mut times = Vec::new();
        if model.constant_sigma().is_none() {
            let breaks = u_breaks(maturity);
            for (tr, _) in &rules {
                for w in breaks.windows(2) {
                    tr.integrate(w[0], w[1], |u| {
                        times.push(maturity - u * u);
                        0.0
                    });
                }
            }
        }
        let density = LogDensity::new(model, maturity, &times, quad.half_width_sd)?;
        Ok(Integrator {
            model,
            strike: contract.strike,
            maturity,
            half_width_sd: quad.half_width_sd,
            rules,
            density,
        })
    }

    /// `int_0^T E[g(t, S_t)] dt` at resolution `level`.
    fn integrate(&self, level: usize, g: &dyn Fn(f64, f64) -> f64) -> f64 {
        let (tr, sr) = &self.rules[level];
        let t_max = self.maturity;
        tr.integrate_panels(&u_breaks(t_max), |u| {
            let t = t_max - u * u;
            2.0 * u * self.expectation(sr, t, g)
        })
    }

    fn expectation(&self, rule: &GaussLegendre, t: f64, g: &dyn Fn(f64, f64) -> f64) -> f64 {
        if t <= 0.0 {
            return g(0.0, self.model.s0);
        }
        let (centre, sd) = self.density.location(t);
        let w = self.half_width_sd;
        let (lo, hi) = (centre - w * sd, centre + w * sd);
        // resolve the strike layer of width sigma sqrt(T - t)
        let layer = self.model.sigma(t, self.strike) * (self.maturity - t).max(0.0).sqrt();
        let lk = self.strike.ln();
        let inner = [-8.0, -4.0, -2.0, -1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
            .into_iter()
            .flat_map(|k| [lk + k * layer, centre + k * sd]);
        let breaks = breakpoints(lo, hi, inner);
        rule.integrate_panels(&breaks, |y| {
            let s = y.exp();
            g(t, s) * self.density.pdf(t, y)
        })
    }

    /// Coarse and fine values, checked against each other.
    fn checked(&self, what: &str, g: &dyn Fn(f64, f64) -> f64) -> Result<f64> {
        let coarse = self.integrate(0, g);
        let fine = self.integrate(1, g);
        let scale = fine.abs().max(f64::MIN_POSITIVE);
        if !fine.is_finite() || (fine - coarse).abs() > RICHARDSON_TOLERANCE * scale {
            return Err(HedgeError::Precision(format!(
                "{what}: quadrature not converged ({coarse} at the coarse, {fine} at the fine resolution)"
            )));
        }
        Ok(fine)
    }

    fn variance_rate(&self, t: f64, s: f64) -> f64 {
        let sig = self.model.sigma(t, s);
        s * s * sig * sig
    }
}

/// Gamma from the surface inside its domain; beyond it, the Black-Scholes
/// gamma at the local volatility of the point.
fn gamma_at<S: PricingSurface + ?Sized>(surface: &S, model: &MarketModel, t: f64, s: f64) -> f64 {
    if t <= surface.max_time() {
        return surface.gamma_unchecked(t, s);
    }
    let contract = surface.contract();
    let tau = contract.maturity - t;
    if tau <= 0.0 {
        return 0.0;
    }
    let sig = model.sigma(t, s);
    let d1 = ((s / contract.strike).ln() + (model.r + 0.5 * sig * sig) * tau) / (sig * tau.sqrt());
    normal::pdf(d1) / (s * sig * tau.sqrt())
}

/// `1/6 int e^{-k r t} E[S_t^2 sigma^2(t, S_t)] dt`, `k` per the variant.
pub fn theoretical_adaptive_limit(
    model: &MarketModel,
    contract: &ContractSpec,
    variant: DiscountVariant,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let it = Integrator::new(model, contract, quad)?;
    let r = model.r;
    it.checked("adaptive limit", &|t, s| {
        variant.factor(r, t) * it.variance_rate(t, s) / 6.0
    })
}

/// `int E[S_t^2 sigma^2 gamma^2] dt`.
pub fn theoretical_rebalance_limit<S: PricingSurface + ?Sized>(
    model: &MarketModel,
    contract: &ContractSpec,
    surface: &S,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let it = Integrator::new(model, contract, quad)?;
    it.checked("rebalance limit", &|t, s| {
        let g = gamma_at(surface, model, t, s);
        it.variance_rate(t, s) * g * g
    })
}

/// `T/2 int e^{-2rt} E[S_t^4 sigma^4 gamma^2] dt`.
pub fn theoretical_equidistant_limit<S: PricingSurface + ?Sized>(
    model: &MarketModel,
    contract: &ContractSpec,
    surface: &S,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let it = Integrator::new(model, contract, quad)?;
    let (r, half_t) = (model.r, 0.5 * contract.maturity);
    it.checked("equidistant limit", &|t, s| {
        let g = gamma_at(surface, model, t, s);
        let v = it.variance_rate(t, s);
        half_t * (-2.0 * r * t).exp() * v * v * g * g
    })
}

/// All constants from one set of densities.
pub fn limit_constants<S: PricingSurface + ?Sized>(
    model: &MarketModel,
    contract: &ContractSpec,
    surface: &S,
    quad: &QuadratureConfig,
) -> Result<LimitConstants> {
    let it = Integrator::new(model, contract, quad)?;
    let (r, half_t) = (model.r, 0.5 * contract.maturity);
    let adaptive_single = it.checked("adaptive limit", &|t, s| (-r * t).exp() * it.variance_rate(t, s) / 6.0)?;
    let bound = it.checked("isometry bound", &|t, s| (-2.0 * r * t).exp() * it.variance_rate(t, s))?;
    let rebalance = it.checked("rebalance limit", &|t, s| {
        let g = gamma_at(surface, model, t, s);
        it.variance_rate(t, s) * g * g
    })?;
    let equidistant = it.checked("equidistant limit", &|t, s| {
        let g = gamma_at(surface, model, t, s);
        let v = it.variance_rate(t, s);
        half_t * (-2.0 * r * t).exp() * v * v * g * g
    })?;
    let adaptive_double = bound / 6.0;
    Ok(LimitConstants {
        adaptive_single,
        adaptive_double,
        rebalance,
        equidistant,
        product: adaptive_double * rebalance,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::bs_closed_form;

    fn standard() -> (MarketModel, ContractSpec) {
        (
            MarketModel::black_scholes(0.0, 100.0, 0.2).unwrap(),
            ContractSpec::call(100.0, 1.0).unwrap(),
        )
    }

    /// `E[S_t^2] = s0^2 exp((2r + sigma^2) t)` integrated by hand.
    fn adaptive_oracle(r: f64, sigma: f64, s0: f64, t: f64, k: f64) -> f64 {
        let a = (2.0 - k) * r + sigma * sigma;
        s0 * s0 * sigma * sigma * ((a * t).exp() - 1.0) / a / 6.0
    }

    #[test]
    fn adaptive_limit_of_the_standard_setup() {
        let (m, c) = standard();
        let q = QuadratureConfig::default();
        let v = theoretical_adaptive_limit(&m, &c, DiscountVariant::Double, &q).unwrap();
        assert!((v - 68.018).abs() < 1e-3, "{v}");
        assert!((v - 1e4 * (0.04f64.exp() - 1.0) / 6.0).abs() < 1e-9 * v);
        let single = theoretical_adaptive_limit(&m, &c, DiscountVariant::Single, &q).unwrap();
        assert!((single - v).abs() < 1e-12 * v);
    }

    #[test]
    fn discount_variants_follow_the_oracle() {
        let c = ContractSpec::call(100.0, 1.0).unwrap();
        let q = QuadratureConfig::default();
        for (r, sigma) in [(0.05, 0.2), (0.1, 0.2), (0.05, 0.4)] {
            let m = MarketModel::black_scholes(r, 100.0, sigma).unwrap();
            for (variant, k) in [(DiscountVariant::Single, 1.0), (DiscountVariant::Double, 2.0)] {
                let v = theoretical_adaptive_limit(&m, &c, variant, &q).unwrap();
                let o = adaptive_oracle(r, sigma, 100.0, 1.0, k);
                assert!(
                    (v / o - 1.0).abs() < 1e-10,
                    "r={r} sigma={sigma} {variant:?}: {v} vs {o}"
                );
            }
        }
    }

    #[test]
    fn rebalance_integrand_identity() {
        let (m, c) = standard();
        let s = bs_closed_form(&m, &c).unwrap();
        for (t, spot) in [(0.1, 80.0), (0.5, 100.0), (0.9, 123.0), (0.999, 101.0)] {
            let tau: f64 = 1.0 - t;
            let d1 = ((spot / 100.0f64).ln() + 0.02 * tau) / (0.2 * tau.sqrt());
            let phi = (-0.5 * d1 * d1).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let g = s.gamma(t, spot).unwrap();
            let lhs = spot * spot * 0.04 * g * g;
            let rhs = phi * phi / tau;
            assert!((lhs - rhs).abs() < 1e-10 * rhs.max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn rebalance_limit_is_finite_and_stable() {
        let (m, c) = standard();
        let s = bs_closed_form(&m, &c).unwrap();
        let q = QuadratureConfig::default();
        let v = theoretical_rebalance_limit(&m, &c, &s, &q).unwrap();
        let finer = QuadratureConfig {
            time_nodes: 48,
            space_nodes: 48,
            ..q
        };
        let w = theoretical_rebalance_limit(&m, &c, &s, &finer).unwrap();
        assert!(v > 0.0 && v.is_finite());
        assert!((v - w).abs() < 0.01 * w, "{v} vs {w}");
    }

    #[test]
    fn equidistant_integrand_relation() {
        let (m, c) = standard();
        let s = bs_closed_form(&m, &c).unwrap();
        let (t, spot) = (0.5, 100.0);
        let g = s.gamma(t, spot).unwrap();
        let rebalance_integrand = spot * spot * 0.04 * g * g;
        let equidistant_integrand = 0.5 * spot.powi(4) * 0.04f64.powi(2) * g * g;
        let relation = 0.5 * 0.04 * spot * spot * rebalance_integrand;
        assert!((equidistant_integrand - relation).abs() < 1e-10 * relation);
    }

    #[test]
    fn horizon_scaling_with_fixed_total_variance() {
        // doubling T and halving sigma^2 is a time change that leaves the
        // r = 0 constant unchanged
        let c1 = ContractSpec::call(100.0, 1.0).unwrap();
        let c2 = ContractSpec::call(100.0, 2.0).unwrap();
        let m1 = MarketModel::black_scholes(0.0, 100.0, 0.2).unwrap();
        let m2 = MarketModel::black_scholes(0.0, 100.0, 0.2 / 2f64.sqrt()).unwrap();
        let q = QuadratureConfig::default();
        let e1 = theoretical_equidistant_limit(&m1, &c1, &bs_closed_form(&m1, &c1).unwrap(), &q).unwrap();
        let e2 = theoretical_equidistant_limit(&m2, &c2, &bs_closed_form(&m2, &c2).unwrap(), &q).unwrap();
        assert!((e2 / e1 - 1.0).abs() < 1e-3, "{e1} {e2}");
    }

    #[test]
    fn vanishing_horizon() {
        let m = MarketModel::black_scholes(0.0, 100.0, 0.2).unwrap();
        let c = ContractSpec::call(100.0, 1e-6).unwrap();
        let s = bs_closed_form(&m, &c).unwrap();
        let k = limit_constants(&m, &c, &s, &QuadratureConfig::default()).unwrap();
        assert!(k.adaptive_double < 1e-3 && k.bound < 1e-2);
        // the delta still sweeps (0, 1) however short the horizon: the trade
        // count constant does not vanish but becomes horizon independent
        let c2 = ContractSpec::call(100.0, 1e-8).unwrap();
        let k2 = limit_constants(&m, &c2, &bs_closed_form(&m, &c2).unwrap(), &QuadratureConfig::default()).unwrap();
        assert!(k.rebalance > 0.0 && (k.rebalance / k2.rebalance - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rejects_coarse_quadrature() {
        let (m, c) = standard();
        let q = QuadratureConfig {
            time_nodes: 8,
            ..QuadratureConfig::default()
        };
        assert!(matches!(
            theoretical_adaptive_limit(&m, &c, DiscountVariant::Double, &q),
            Err(HedgeError::Configuration(_))
        ));
    }
}
