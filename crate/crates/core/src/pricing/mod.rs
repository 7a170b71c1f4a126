//! Call price surfaces and their spatial derivatives.

mod closed_form;
mod pde;
mod probe;

pub use closed_form::{bs_closed_form, BlackScholesSurface};
pub use pde::{pde_surface, PdeGridConfig, PdeSurface};
pub use probe::{lemma_bound_probe, EnvelopeFit, LemmaProbe, ProbeGrid};

use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};

/// Deltas closer than this to 0 or 1 are treated as unreachable levels.
pub const DELTA_CLIP: f64 = 1e-6;

/// Fraction of the maturity excluded from surface evaluation by default.
pub const DEFAULT_MATURITY_CUTOFF: f64 = 0.01;

/// European call with payoff `(x - K)^+`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractSpec {
    pub strike: f64,
    pub maturity: f64,
}

impl ContractSpec {
    pub fn call(strike: f64, maturity: f64) -> Result<Self> {
        let c = ContractSpec { strike, maturity };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(HedgeError::param("strike", self.strike, "must be positive and finite"));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(HedgeError::param(
                "maturity",
                self.maturity,
                "must be positive and finite",
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn payoff(&self, spot: f64) -> f64 {
        (spot - self.strike).max(0.0)
    }
}

/// Where a surface's numbers come from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    ClosedForm,
    PdeGrid {
        space_nodes: usize,
        time_steps: usize,
        log_spot_min: f64,
        log_spot_max: f64,
    },
}

/// Price `u(t, s)` of the call together with delta, gamma and speed.
///
/// The `*_unchecked` methods skip domain validation and are what the
/// simulation loops call; the checked wrappers reject `t` beyond
/// [`max_time`](PricingSurface::max_time) and non-positive spots.
pub trait PricingSurface: Send + Sync {
    /// Pre-processed delta level used to evaluate barriers quickly.
    type Level: Copy + Send + Sync + std::fmt::Debug;

    fn contract(&self) -> &ContractSpec;
    fn rate(&self) -> f64;
    /// Upper bound of the volatility the surface was built with.
    fn sigma_upper(&self) -> f64;
    /// Latest evaluation time.
    fn max_time(&self) -> f64;
    fn provenance(&self) -> Provenance;

    fn price_unchecked(&self, t: f64, s: f64) -> f64;
    fn delta_unchecked(&self, t: f64, s: f64) -> f64;
    fn gamma_unchecked(&self, t: f64, s: f64) -> f64;
    fn speed_unchecked(&self, t: f64, s: f64) -> f64;

    /// `None` when `x` lies outside `(DELTA_CLIP, 1 - DELTA_CLIP)`.
    fn level(&self, x: f64) -> Option<Self::Level>;
    /// `log s` at which `delta(t, s)` equals the level.
    fn log_barrier(&self, t: f64, level: &Self::Level) -> f64;

    /// Spot `s` with `delta(t, s) = x`.
    fn delta_inverse(&self, t: f64, x: f64) -> Result<f64> {
        invert_delta_by_root_find(self, t, x)
    }

    fn maturity(&self) -> f64 {
        self.contract().maturity
    }

    fn check_domain(&self, t: f64, s: f64) -> Result<()> {
        if t >= self.maturity() {
            return Err(HedgeError::MaturityDomain {
                t,
                maturity: self.maturity(),
            });
        }
        if !(t >= 0.0 && t <= self.max_time() + 1e-12) {
            return Err(HedgeError::Domain(format!(
                "t = {t} outside the surface domain [0, {}]",
                self.max_time()
            )));
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(HedgeError::Domain(format!("spot must be positive, got {s}")));
        }
        Ok(())
    }

    fn price(&self, t: f64, s: f64) -> Result<f64> {
        self.check_domain(t, s)?;
        Ok(self.price_unchecked(t, s))
    }

    fn delta(&self, t: f64, s: f64) -> Result<f64> {
        self.check_domain(t, s)?;
        Ok(self.delta_unchecked(t, s))
    }

    fn gamma(&self, t: f64, s: f64) -> Result<f64> {
        self.check_domain(t, s)?;
        Ok(self.gamma_unchecked(t, s))
    }

    fn speed(&self, t: f64, s: f64) -> Result<f64> {
        self.check_domain(t, s)?;
        Ok(self.speed_unchecked(t, s))
    }
}

/// Spot at which `delta(t, .)` reaches `x`.
pub fn delta_inverse<S: PricingSurface + ?Sized>(surface: &S, t: f64, x: f64) -> Result<f64> {
    surface.delta_inverse(t, x)
}

fn check_level(x: f64) -> Result<()> {
    if !(x > DELTA_CLIP && x < 1.0 - DELTA_CLIP) {
        return Err(HedgeError::Range(format!(
            "delta level {x} outside ({DELTA_CLIP}, {})",
            1.0 - DELTA_CLIP
        )));
    }
    Ok(())
}

/// Bracketing plus Brent iteration on `y = log s`.
pub fn invert_delta_by_root_find<S: PricingSurface + ?Sized>(surface: &S, t: f64, x: f64) -> Result<f64> {
    check_level(x)?;
    surface.check_domain(t, surface.contract().strike)?;
    let f = |y: f64| surface.delta_unchecked(t, y.exp()) - x;
    let centre = surface.contract().strike.ln();
    let mut width = 0.5;
    let (mut lo, mut hi) = (centre - width, centre + width);
    let (mut flo, mut fhi) = (f(lo), f(hi));
    let mut expansions = 0;
    while flo > 0.0 || fhi < 0.0 {
        expansions += 1;
        if expansions > 60 {
            return Err(HedgeError::Range(format!(
                "cannot bracket delta level {x} at t = {t}; the surface does not reach it"
            )));
        }
        width *= 2.0;
        if flo > 0.0 {
            lo = centre - width;
            flo = f(lo);
        }
        if fhi < 0.0 {
            hi = centre + width;
            fhi = f(hi);
        }
    }
    let y = brent(f, lo, hi, flo, fhi, 1e-13, 200)
        .ok_or_else(|| HedgeError::Range(format!("root find for delta level {x} did not converge")))?;
    Ok(y.exp())
}

/// Brent's method on a bracket with `f(a) <= 0 <= f(b)` or the reverse.
pub(crate) fn brent<F: Fn(f64) -> f64>(
    f: F,
    a0: f64,
    b0: f64,
    fa0: f64,
    fb0: f64,
    xtol: f64,
    max_iter: usize,
) -> Option<f64> {
    let (mut a, mut b, mut fa, mut fb) = (a0, b0, fa0, fb0);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contract_validation() {
        assert!(ContractSpec::call(0.0, 1.0).is_err());
        assert!(ContractSpec::call(100.0, 0.0).is_err());
        let c = ContractSpec::call(100.0, 1.0).unwrap();
        assert_eq!(c.payoff(90.0), 0.0);
        assert_eq!(c.payoff(112.5), 12.5);
    }

    #[test]
    fn brent_finds_cubic_root() {
        let f = |x: f64| x * x * x - 2.0;
        let r = brent(f, 0.0, 2.0, f(0.0), f(2.0), 1e-15, 100).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
        assert!(brent(f, 2.0, 3.0, f(2.0), f(3.0), 1e-15, 100).is_none());
    }
}
