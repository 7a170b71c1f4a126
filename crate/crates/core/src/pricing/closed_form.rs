use crate::error::{HedgeError, Result};
use crate::model::MarketModel;
use crate::normal;

use super::{check_level, ContractSpec, PricingSurface, Provenance, DELTA_CLIP};

/// Lognormal call formulas under constant volatility.
///
/// Valid for every `t < T`; callers that need a cutoff before maturity apply
/// it themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct BlackScholesSurface {
    contract: ContractSpec,
    rate: f64,
    sigma: f64,
    log_strike: f64,
}

pub fn bs_closed_form(model: &MarketModel, contract: &ContractSpec) -> Result<BlackScholesSurface> {
    let sigma = model
        .constant_sigma()
        .ok_or_else(|| HedgeError::UnsupportedModel("closed form needs constant volatility".into()))?;
    contract.validate()?;
    Ok(BlackScholesSurface {
        contract: *contract,
        rate: model.r,
        sigma,
        log_strike: contract.strike.ln(),
    })
}

impl BlackScholesSurface {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    fn d1(&self, t: f64, s: f64) -> (f64, f64) {
        let v = self.contract.maturity - t;
        let sv = self.sigma * v.sqrt();
        let d1 = ((s.ln() - self.log_strike) + (self.rate + 0.5 * self.sigma * self.sigma) * v) / sv;
        (d1, sv)
    }
}

impl PricingSurface for BlackScholesSurface {
    /// `N^{-1}` of the delta level; the barrier is then linear in `sqrt(T - t)`.
    type Level = f64;

    fn contract(&self) -> &ContractSpec {
        &self.contract
    }

    fn rate(&self) -> f64 {
        self.rate
    }

    fn sigma_upper(&self) -> f64 {
        self.sigma
    }

    fn max_time(&self) -> f64 {
        // largest double strictly below maturity
        f64::from_bits(self.contract.maturity.to_bits() - 1)
    }

    fn provenance(&self) -> Provenance {
        Provenance::ClosedForm
    }

    fn price_unchecked(&self, t: f64, s: f64) -> f64 {
        let v = self.contract.maturity - t;
        let (d1, sv) = self.d1(t, s);
        s * normal::cdf(d1) - self.contract.strike * (-self.rate * v).exp() * normal::cdf(d1 - sv)
    }

    #[inline]
    fn delta_unchecked(&self, t: f64, s: f64) -> f64 {
        normal::cdf(self.d1(t, s).0)
    }

    fn gamma_unchecked(&self, t: f64, s: f64) -> f64 {
        let (d1, sv) = self.d1(t, s);
        normal::pdf(d1) / (s * sv)
    }

    fn speed_unchecked(&self, t: f64, s: f64) -> f64 {
        let (d1, sv) = self.d1(t, s);
        let gamma = normal::pdf(d1) / (s * sv);
        -gamma / s * (1.0 + d1 / sv)
    }

    fn level(&self, x: f64) -> Option<f64> {
        (x > DELTA_CLIP && x < 1.0 - DELTA_CLIP).then(|| normal::inv_cdf(x))
    }

    #[inline]
    fn log_barrier(&self, t: f64, z: &f64) -> f64 {
        let v = self.contract.maturity - t;
        self.log_strike - (self.rate + 0.5 * self.sigma * self.sigma) * v + self.sigma * v.sqrt() * z
    }

    fn delta_inverse(&self, t: f64, x: f64) -> Result<f64> {
        check_level(x)?;
        self.check_domain(t, self.contract.strike)?;
        Ok(self.log_barrier(t, &normal::inv_cdf(x)).exp())
    }
}
