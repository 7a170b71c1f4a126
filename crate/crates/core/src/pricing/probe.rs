//! Numerical checks of the gamma tail envelope and speed bound.

use serde::Serialize;

use crate::error::{HedgeError, Result};
use crate::stats::quadratic_fit_r2;

use super::PricingSurface;

/// Weighted gamma `s^k * gamma` and speed at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaProbe {
    pub t: f64,
    pub s: f64,
    pub weighted_gamma: f64,
    pub speed: f64,
}

pub fn lemma_bound_probe<S: PricingSurface + ?Sized>(surface: &S, t: f64, s: f64, k: f64) -> Result<LemmaProbe> {
    let gamma = surface.gamma(t, s)?;
    Ok(LemmaProbe {
        t,
        s,
        weighted_gamma: s.powf(k) * gamma,
        speed: surface.speed_unchecked(t, s),
    })
}

/// Envelope `C^-1 exp(-C log^2 s) <= s^k gamma <= C exp(-log^2 s / C)` with
/// the smallest `C` that makes both sides hold on the probe grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeFit {
    pub c: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
    pub max_abs_speed: f64,
    pub speed_finite: bool,
    /// R^2 of a quadratic fit of `log gamma` against `log s`, per probe time.
    pub log_gamma_quadratic_r2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGrid {
    pub times: Vec<f64>,
    pub spots: Vec<f64>,
    pub k: f64,
}

const C_MAX: f64 = 1e12;

impl ProbeGrid {
    /// Times on `[0, t_max]` and log-spaced spots on `[K/10, 10K]`.
    pub fn around_strike(strike: f64, t_max: f64, time_points: usize, spot_points: usize, k: f64) -> Result<ProbeGrid> {
        if time_points < 1 || spot_points < 3 || !(t_max >= 0.0) {
            return Err(HedgeError::Argument("probe grid needs >= 1 time and >= 3 spots".into()));
        }
        let times = if time_points == 1 {
            vec![t_max]
        } else {
            (0..time_points)
                .map(|i| t_max * i as f64 / (time_points - 1) as f64)
                .collect()
        };
        let (lo, hi) = ((strike / 10.0).ln(), (strike * 10.0).ln());
        let spots = (0..spot_points)
            .map(|i| (lo + (hi - lo) * i as f64 / (spot_points - 1) as f64).exp())
            .collect();
        Ok(ProbeGrid { times, spots, k })
    }

    pub fn evaluate<S: PricingSurface + ?Sized>(&self, surface: &S) -> Result<EnvelopeFit> {
        // (log weighted gamma, log^2 s) pairs
        let mut points = Vec::with_capacity(self.times.len() * self.spots.len());
        let mut positive = true;
        let mut max_abs_speed = 0.0f64;
        let mut speed_finite = true;
        let mut r2 = Vec::with_capacity(self.times.len());
        for &t in &self.times {
            let mut ls = Vec::with_capacity(self.spots.len());
            let mut lg = Vec::with_capacity(self.spots.len());
            for &s in &self.spots {
                let p = lemma_bound_probe(surface, t, s, self.k)?;
                speed_finite &= p.speed.is_finite();
                max_abs_speed = max_abs_speed.max(p.speed.abs());
                if p.weighted_gamma > 0.0 {
                    let l = s.ln();
                    points.push((p.weighted_gamma.ln(), l * l));
                    ls.push(l);
                    lg.push(p.weighted_gamma.ln() - self.k * l);
                } else {
                    positive = false;
                }
            }
            r2.push(if ls.len() >= 3 {
                quadratic_fit_r2(&ls, &lg)
            } else {
                f64::NAN
            });
        }
        // upper: ln C >= ln g + L / C; lower: -ln C - C L <= ln g
        let upper_ok = |c: f64| points.iter().all(|&(lg, l2)| c.ln() >= lg + l2 / c);
        let lower_ok = |c: f64| points.iter().all(|&(lg, l2)| -c.ln() - c * l2 <= lg);
        let c_upper = smallest_c(upper_ok);
        let c_lower = smallest_c(lower_ok);
        let c = c_upper.unwrap_or(C_MAX).max(c_lower.unwrap_or(C_MAX));
        Ok(EnvelopeFit {
            c,
            lower_holds: positive && c_lower.is_some(),
            upper_holds: c_upper.is_some(),
            max_abs_speed,
            speed_finite,
            log_gamma_quadratic_r2: r2,
        })
    }
}

/// Smallest `C` in `[1, C_MAX]` satisfying a condition monotone in `C`.
fn smallest_c(ok: impl Fn(f64) -> bool) -> Option<f64> {
    if ok(1.0) {
        return Some(1.0);
    }
    if !ok(C_MAX) {
        return None;
    }
    let (mut lo, mut hi) = (0.0f64, C_MAX.ln());
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ok(mid.exp()) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi.exp())
}
