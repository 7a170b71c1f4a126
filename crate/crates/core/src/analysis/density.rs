//! Transition densities of `log S_t` from `S_0 = s0`.
//!
//! Constant volatility uses the exact Gaussian law. Local volatility solves
//! the forward Kolmogorov equation in conservative form on a uniform
//! log-spot grid, started from the frozen-volatility Gaussian at a short
//! time and stored at the requested times.

use crate::error::{HedgeError, Result};
use crate::model::MarketModel;
use crate::normal;

const FORWARD_NODES: usize = 2001;
const FORWARD_STEPS: f64 = 2000.0;
/// Start of the forward solve as a fraction of the horizon.
const FORWARD_START: f64 = 0.01;

#[derive(Debug, Clone)]
pub(crate) enum LogDensity {
    Gaussian { mean0: f64, drift: f64, sigma: f64 },
    Forward(ForwardDensity),
}

impl LogDensity {
    /// Density of `log S_t` for every `t` in `times` (which must include
    /// every time later queried for local volatility).
    pub(crate) fn new(model: &MarketModel, horizon: f64, times: &[f64], half_width_sd: f64) -> Result<LogDensity> {
        let mean0 = model.s0.ln();
        match model.constant_sigma() {
            Some(sigma) => Ok(LogDensity::Gaussian {
                mean0,
                drift: model.r - 0.5 * sigma * sigma,
                sigma,
            }),
            None => ForwardDensity::solve(model, horizon, times, half_width_sd).map(LogDensity::Forward),
        }
    }

    /// Centre and standard deviation scale of `log S_t`.
    pub(crate) fn location(&self, t: f64) -> (f64, f64) {
        match self {
            LogDensity::Gaussian { mean0, drift, sigma } => (mean0 + drift * t, sigma * t.sqrt()),
            LogDensity::Forward(f) => (f.mean0 + f.r * t, f.sigma_upper * t.sqrt()),
        }
    }

    pub(crate) fn pdf(&self, t: f64, y: f64) -> f64 {
        match self {
            LogDensity::Gaussian { mean0, drift, sigma } => {
                let sd = sigma * t.sqrt();
                normal::pdf((y - mean0 - drift * t) / sd) / sd
            }
            LogDensity::Forward(f) => f.pdf(t, y),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardDensity {
    mean0: f64,
    r: f64,
    sigma0: f64,
    sigma_upper: f64,
    start: f64,
    y_min: f64,
    dy: f64,
    times: Vec<f64>,
    slices: Vec<Vec<f64>>,
}

impl ForwardDensity {
    fn solve(model: &MarketModel, horizon: f64, times: &[f64], half_width_sd: f64) -> Result<ForwardDensity> {
        let (_, sigma_upper) = model.vol.bounds();
        let r = model.r;
        let mean0 = model.s0.ln();
        let sigma0 = model.sigma(0.0, model.s0);
        let half = half_width_sd * sigma_upper * horizon.sqrt() + r.abs() * horizon;
        let y_min = mean0 - half;
        let dy = 2.0 * half / (FORWARD_NODES - 1) as f64;
        let start = FORWARD_START * horizon;
        let ys: Vec<f64> = (0..FORWARD_NODES).map(|i| y_min + dy * i as f64).collect();

        let mut targets: Vec<f64> = times.iter().copied().filter(|&t| t > start).collect();
        targets.sort_by(f64::total_cmp);
        targets.dedup();
        if targets.last().is_some_and(|&t| t > horizon * (1.0 + 1e-12)) {
            return Err(HedgeError::Argument("density requested beyond the horizon".into()));
        }

        let sd0 = sigma0 * start.sqrt();
        let m0 = mean0 + (r - 0.5 * sigma0 * sigma0) * start;
        let mut p: Vec<f64> = ys.iter().map(|&y| normal::pdf((y - m0) / sd0) / sd0).collect();
        let dt_max = horizon / FORWARD_STEPS;
        let mut t = start;
        let mut slices = Vec::with_capacity(targets.len());
        let mut implicit_left = 4;
        let mut work = Tridiagonal::new(FORWARD_NODES);
        for &target in &targets {
            let m = ((target - t) / dt_max).ceil().max(1.0) as usize;
            let dt = (target - t) / m as f64;
            for _ in 0..m {
                let mid = t + 0.5 * dt;
                let d: Vec<f64> = ys.iter().map(|&y| model.sigma(mid, y.exp()).powi(2)).collect();
                if implicit_left > 0 {
                    // Rannacher start: two implicit half steps
                    work.step(&mut p, &d, r, dy, 0.5 * dt, 1.0);
                    work.step(&mut p, &d, r, dy, 0.5 * dt, 1.0);
                    implicit_left -= 1;
                } else {
                    work.step(&mut p, &d, r, dy, dt, 0.5);
                }
                t += dt;
            }
            t = target;
            slices.push(p.clone());
        }
        Ok(ForwardDensity {
            mean0,
            r,
            sigma0,
            sigma_upper,
            start,
            y_min,
            dy,
            times: targets,
            slices,
        })
    }

    fn pdf(&self, t: f64, y: f64) -> f64 {
        if t <= self.start {
            let sd = self.sigma0 * t.sqrt();
            let m = self.mean0 + (self.r - 0.5 * self.sigma0 * self.sigma0) * t;
            return normal::pdf((y - m) / sd) / sd;
        }
        let i = self.times.partition_point(|&x| x < t * (1.0 - 1e-13));
        let slice = match self.times.get(i) {
            Some(&x) if (x - t).abs() <= 1e-12 * t.max(1.0) => &self.slices[i],
            _ => panic!("density at t = {t} was not requested from the forward solve"),
        };
        let u = (y - self.y_min) / self.dy;
        if !(u >= 0.0 && u < (slice.len() - 1) as f64) {
            return 0.0;
        }
        let j = u.floor() as usize;
        let w = u - j as f64;
        (1.0 - w) * slice[j] + w * slice[j + 1]
    }
}

/// Theta-scheme stepper for `p_t = -(a p)_y + 1/2 (D p)_yy` with zero flux
/// at both ends.
struct Tridiagonal {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    scratch: Vec<f64>,
}

impl Tridiagonal {
    fn new(n: usize) -> Self {
        Tridiagonal {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
            rhs: vec![0.0; n],
            scratch: vec![0.0; n],
        }
    }

    fn step(&mut self, p: &mut [f64], d: &[f64], r: f64, dy: f64, dt: f64, theta: f64) {
        let n = p.len();
        // flux F_{i+1/2} = alpha_i p_i + beta_i p_{i+1}
        let flux = |i: usize| {
            let a = r - 0.25 * (d[i] + d[i + 1]);
            (0.5 * a + 0.5 * d[i] / dy, 0.5 * a - 0.5 * d[i + 1] / dy)
        };
        for i in 0..n {
            let (mut lo, mut di, mut up) = (0.0, 0.0, 0.0);
            if i + 1 < n {
                let (al, be) = flux(i);
                di -= al / dy;
                up -= be / dy;
            }
            if i > 0 {
                let (al, be) = flux(i - 1);
                lo += al / dy;
                di += be / dy;
            }
            let explicit =
                di * p[i] + if i > 0 { lo * p[i - 1] } else { 0.0 } + if i + 1 < n { up * p[i + 1] } else { 0.0 };
            self.rhs[i] = p[i] + (1.0 - theta) * dt * explicit;
            self.lower[i] = -theta * dt * lo;
            self.diag[i] = 1.0 - theta * dt * di;
            self.upper[i] = -theta * dt * up;
        }
        // Thomas algorithm
        self.scratch[0] = self.upper[0] / self.diag[0];
        p[0] = self.rhs[0] / self.diag[0];
        for i in 1..n {
            let m = self.diag[i] - self.lower[i] * self.scratch[i - 1];
            self.scratch[i] = self.upper[i] / m;
            p[i] = (self.rhs[i] - self.lower[i] * p[i - 1]) / m;
        }
        for i in (0..n - 1).rev() {
            p[i] -= self.scratch[i] * p[i + 1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::quadrature::GaussLegendre;
    use crate::model::VolatilitySpec;

    fn moments(d: &LogDensity, t: f64) -> (f64, f64, f64) {
        let g = GaussLegendre::new(64);
        let (c, sd) = d.location(t);
        let breaks: Vec<f64> = (-8..=8).map(|k| c + sd * k as f64).collect();
        let m0 = g.integrate_panels(&breaks, |y| d.pdf(t, y));
        let m1 = g.integrate_panels(&breaks, |y| y.exp() * d.pdf(t, y));
        let m2 = g.integrate_panels(&breaks, |y| (2.0 * y).exp() * d.pdf(t, y));
        (m0, m1, m2)
    }

    #[test]
    fn forward_solve_matches_gaussian_for_constant_vol() {
        // a local-vol spec that is constant in disguise
        let vol = VolatilitySpec::smooth_local(0.2, 1e-12, 4.6, 1.0).unwrap();
        let m = MarketModel::new(0.05, 100.0, vol).unwrap();
        let times = [0.1, 0.5, 1.0];
        let f = LogDensity::new(&m, 1.0, &times, 8.0).unwrap();
        assert!(matches!(f, LogDensity::Forward(_)));
        for &t in &times {
            let (m0, m1, m2) = moments(&f, t);
            assert!((m0 - 1.0).abs() < 1e-6, "mass {m0}");
            let e1 = 100.0 * (0.05 * t).exp();
            let e2 = 1e4 * ((0.1 + 0.04) * t).exp();
            assert!((m1 / e1 - 1.0).abs() < 2e-4, "t={t} {m1} vs {e1}");
            assert!((m2 / e2 - 1.0).abs() < 5e-4, "t={t} {m2} vs {e2}");
        }
    }

    #[test]
    fn gaussian_moments() {
        let m = MarketModel::black_scholes(0.0, 100.0, 0.2).unwrap();
        let d = LogDensity::new(&m, 1.0, &[], 8.0).unwrap();
        let (m0, m1, m2) = moments(&d, 0.7);
        assert!((m0 - 1.0).abs() < 1e-12);
        assert!((m1 - 100.0).abs() < 1e-9);
        assert!((m2 - 1e4 * (0.04f64 * 0.7).exp()).abs() < 1e-7);
    }
}
