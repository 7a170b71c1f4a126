//! Crank-Nicolson call surface for local volatility.
//!
//! Solves `u_tau = 1/2 sigma^2 s^2 u_ss + r s u_s - r u` in `tau = T - t` on
//! log-spaced spot nodes over a truncated domain, with Rannacher start-up to
//! damp the payoff kink. The operator and the greeks use non-uniform central
//! differences in `s`, so functions linear in `s` are reproduced exactly.
//! Off-grid values come from monotone cubic interpolation in `log s` and
//! linear interpolation in `t`.

use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::model::MarketModel;

use super::{brent, ContractSpec, PricingSurface, Provenance, DEFAULT_MATURITY_CUTOFF, DELTA_CLIP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdeGridConfig {
    /// Number of space intervals.
    pub space_nodes: usize,
    pub time_steps: usize,
    /// Domain half-width in units of `sigma_upper * sqrt(T)`.
    pub half_width_sd: f64,
    /// Leading time steps replaced by two implicit half-steps each.
    pub rannacher_steps: usize,
    /// Evaluation stops at `T * (1 - cutoff_fraction)`.
    pub cutoff_fraction: f64,
}

impl Default for PdeGridConfig {
    fn default() -> Self {
        PdeGridConfig {
            space_nodes: 800,
            time_steps: 800,
            half_width_sd: 6.0,
            rannacher_steps: 2,
            cutoff_fraction: DEFAULT_MATURITY_CUTOFF,
        }
    }
}

impl PdeGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.space_nodes < 8 || self.time_steps < 4 {
            return Err(HedgeError::Configuration(format!(
                "PDE grid too small ({} x {})",
                self.space_nodes, self.time_steps
            )));
        }
        if self.half_width_sd < 5.0 {
            return Err(HedgeError::Configuration(format!(
                "domain half-width {} log-space standard deviations is inside the 5 sd boundary-influence zone",
                self.half_width_sd
            )));
        }
        if !(self.cutoff_fraction > 0.0 && self.cutoff_fraction < 1.0) {
            return Err(HedgeError::Configuration(format!(
                "cutoff fraction {} must lie in (0, 1)",
                self.cutoff_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PdeSurface {
    contract: ContractSpec,
    rate: f64,
    sigma_upper: f64,
    config: PdeGridConfig,
    y_min: f64,
    dy: f64,
    dtau: f64,
    max_time: f64,
    price: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
    speed: Vec<Vec<f64>>,
}

pub fn pde_surface(model: &MarketModel, contract: &ContractSpec, config: &PdeGridConfig) -> Result<PdeSurface> {
    model.validate()?;
    contract.validate()?;
    config.validate()?;
    let (_, sigma_upper) = model.vol.bounds();
    let maturity = contract.maturity;
    let k = contract.strike;
    let r = model.r;
    let half = config.half_width_sd * sigma_upper * maturity.sqrt();
    let y_min = model.s0.ln().min(k.ln()) - half;
    let y_max = model.s0.ln().max(k.ln()) + half;
    let m = config.space_nodes;
    let dy = (y_max - y_min) / m as f64;
    let ys: Vec<f64> = (0..=m).map(|i| y_min + i as f64 * dy).collect();
    let spots: Vec<f64> = ys.iter().map(|y| y.exp()).collect();
    let n_steps = config.time_steps;
    let dtau = maturity / n_steps as f64;

    let mut slices = Vec::with_capacity(n_steps + 1);
    let mut u: Vec<f64> = spots.iter().map(|&s| contract.payoff(s)).collect();
    slices.push(u.clone());
    let mut stepper = Stepper::new(m);
    // Discount factor of the right boundary, advanced with the same theta
    // scheme as the interior so that the far in-the-money region stays
    // exactly linear in s.
    let mut discount = 1.0;
    let s_max = spots[m];
    for n in 1..=n_steps {
        let tau0 = (n - 1) as f64 * dtau;
        if n <= config.rannacher_steps {
            for half_step in 0..2 {
                let a = tau0 + half_step as f64 * 0.5 * dtau;
                let t_mid = maturity - (a + 0.25 * dtau);
                stepper.coefficients(model, t_mid, &spots);
                discount /= 1.0 + 0.5 * dtau * r;
                u = stepper.step(&u, 0.5 * dtau, 1.0, s_max - k * discount);
            }
        } else {
            let t_mid = maturity - (tau0 + 0.5 * dtau);
            stepper.coefficients(model, t_mid, &spots);
            discount *= (1.0 - 0.5 * dtau * r) / (1.0 + 0.5 * dtau * r);
            u = stepper.step(&u, dtau, 0.5, s_max - k * discount);
        }
        slices.push(u.clone());
    }

    let mut delta = Vec::with_capacity(slices.len());
    let mut gamma = Vec::with_capacity(slices.len());
    let mut speed = Vec::with_capacity(slices.len());
    for slice in &slices {
        let (d, g, sp) = derivatives(slice, &spots);
        // secant slopes of a convex slice lie in [0, 1] up to round-off
        delta.push(d.into_iter().map(|x| x.clamp(0.0, 1.0)).collect());
        gamma.push(g);
        speed.push(sp);
    }

    Ok(PdeSurface {
        contract: *contract,
        rate: r,
        sigma_upper,
        config: *config,
        y_min,
        dy,
        dtau,
        max_time: maturity * (1.0 - config.cutoff_fraction),
        price: slices,
        delta,
        gamma,
        speed,
    })
}

/// Tridiagonal theta-scheme stepper with reusable buffers.
struct Stepper {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    scratch: Vec<f64>,
}

impl Stepper {
    fn new(m: usize) -> Self {
        Stepper {
            lower: vec![0.0; m + 1],
            diag: vec![0.0; m + 1],
            upper: vec![0.0; m + 1],
            rhs: vec![0.0; m + 1],
            scratch: vec![0.0; m + 1],
        }
    }

    /// Spatial operator `L u_i = lower_i u_{i-1} + diag_i u_i + upper_i u_{i+1}`,
    /// discretising `1/2 s~^2 s^2 u_ss + r s u_s - r u` by central differences
    /// in `s` on the log-spaced nodes. Functions linear in `s` are annihilated
    /// exactly up to the `- r u` term, which keeps the far in-the-money
    /// region free of spurious curvature.
    fn coefficients(&mut self, model: &MarketModel, t: f64, spots: &[f64]) {
        let r = model.r;
        for i in 1..spots.len() - 1 {
            let s = spots[i];
            let (hm, hp) = (s - spots[i - 1], spots[i + 1] - s);
            let sig = model.sigma(t, s);
            let diffusion = sig * sig * s * s / (hm + hp);
            let drift = r * s / (hm + hp);
            self.lower[i] = diffusion / hm - drift * hp / hm;
            self.upper[i] = diffusion / hp + drift * hm / hp;
            self.diag[i] = -(self.lower[i] + self.upper[i]) - r;
        }
    }

    /// One step of `(I - theta h L) u' = (I + (1 - theta) h L) u`.
    fn step(&mut self, u: &[f64], h: f64, theta: f64, right: f64) -> Vec<f64> {
        let m = u.len() - 1;
        let explicit = (1.0 - theta) * h;
        for i in 1..m {
            self.rhs[i] = u[i] + explicit * (self.lower[i] * u[i - 1] + self.diag[i] * u[i] + self.upper[i] * u[i + 1]);
        }
        let mut out = vec![0.0; m + 1];
        out[0] = 0.0;
        out[m] = right;
        // implicit part: a_i x_{i-1} + b_i x_i + c_i x_{i+1} = rhs_i
        let a = |i: usize| -theta * h * self.lower[i];
        let b = |i: usize| 1.0 - theta * h * self.diag[i];
        let c = |i: usize| -theta * h * self.upper[i];
        self.rhs[1] -= a(1) * out[0];
        self.rhs[m - 1] -= c(m - 1) * out[m];
        // Thomas algorithm
        let mut denom = b(1);
        self.scratch[1] = c(1) / denom;
        out[1] = self.rhs[1] / denom;
        for i in 2..m {
            denom = b(i) - a(i) * self.scratch[i - 1];
            self.scratch[i] = c(i) / denom;
            out[i] = (self.rhs[i] - a(i) * out[i - 1]) / denom;
        }
        for i in (1..m - 1).rev() {
            out[i] -= self.scratch[i] * out[i + 1];
        }
        out
    }
}

/// Delta, gamma and speed by central differences in `s` on the
/// (non-uniform) spot nodes.
///
/// Delta at a node is a convex combination of the two adjacent secant slopes,
/// so a discretely convex price yields a delta that is monotone and stays
/// within the range of the secants.
fn derivatives(u: &[f64], spots: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let delta = first_derivative(u, spots);
    let m = u.len() - 1;
    let mut gamma = vec![0.0; m + 1];
    for i in 1..m {
        let (hm, hp) = (spots[i] - spots[i - 1], spots[i + 1] - spots[i]);
        let dm = (u[i] - u[i - 1]) / hm;
        let dp = (u[i + 1] - u[i]) / hp;
        gamma[i] = 2.0 * (dp - dm) / (hm + hp);
    }
    gamma[0] = gamma[1];
    gamma[m] = gamma[m - 1];
    let speed = first_derivative(&gamma, spots);
    (delta, gamma, speed)
}

fn first_derivative(f: &[f64], x: &[f64]) -> Vec<f64> {
    let m = f.len() - 1;
    let mut out = vec![0.0; m + 1];
    for i in 1..m {
        let (hm, hp) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        let dm = (f[i] - f[i - 1]) / hm;
        let dp = (f[i + 1] - f[i]) / hp;
        out[i] = (hp * dm + hm * dp) / (hm + hp);
    }
    out[0] = (f[1] - f[0]) / (x[1] - x[0]);
    out[m] = (f[m] - f[m - 1]) / (x[m] - x[m - 1]);
    out
}

/// Fritsch-Butland slope at node `k` of a uniformly spaced table.
#[inline]
fn pchip_slope(f: &[f64], k: usize) -> f64 {
    let m = f.len() - 1;
    if k == 0 {
        return f[1] - f[0];
    }
    if k == m {
        return f[m] - f[m - 1];
    }
    let d0 = f[k] - f[k - 1];
    let d1 = f[k + 1] - f[k];
    if d0 * d1 <= 0.0 {
        0.0
    } else {
        2.0 * d0 * d1 / (d0 + d1)
    }
}

#[inline]
fn pchip(f: &[f64], j: usize, h: f64) -> f64 {
    let (f0, f1) = (f[j], f[j + 1]);
    let (m0, m1) = (pchip_slope(f, j), pchip_slope(f, j + 1));
    let h2 = h * h;
    let h3 = h2 * h;
    (2.0 * h3 - 3.0 * h2 + 1.0) * f0 + (h3 - 2.0 * h2 + h) * m0 + (-2.0 * h3 + 3.0 * h2) * f1 + (h3 - h2) * m1
}

impl PdeSurface {
    pub fn config(&self) -> &PdeGridConfig {
        &self.config
    }

    pub fn log_spot_range(&self) -> (f64, f64) {
        (self.y_min, self.y_min + self.dy * self.config.space_nodes as f64)
    }

    /// Time of slice `n` (slice 0 is maturity).
    pub fn slice_time(&self, n: usize) -> f64 {
        self.contract.maturity - n as f64 * self.dtau
    }

    pub fn slice_count(&self) -> usize {
        self.price.len()
    }

    /// Nodal `(log spot, delta, gamma)` values of slice `n`.
    pub fn slice_nodes(&self, n: usize) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..=self.config.space_nodes)
            .map(move |i| (self.y_min + i as f64 * self.dy, self.delta[n][i], self.gamma[n][i]))
    }

    #[inline]
    fn locate(&self, t: f64, s: f64) -> (usize, f64, usize, f64) {
        let m = self.config.space_nodes;
        let pos_y = ((s.ln() - self.y_min) / self.dy).clamp(0.0, m as f64);
        let j = (pos_y.floor() as usize).min(m - 1);
        let hy = pos_y - j as f64;
        let n_max = self.config.time_steps;
        let pos_t = ((self.contract.maturity - t) / self.dtau).clamp(0.0, n_max as f64);
        let n = (pos_t.floor() as usize).min(n_max - 1);
        (n, pos_t - n as f64, j, hy)
    }

    #[inline]
    fn interpolate(&self, table: &[Vec<f64>], t: f64, s: f64) -> f64 {
        let (n, wt, j, hy) = self.locate(t, s);
        let a = pchip(&table[n], j, hy);
        if wt == 0.0 {
            return a;
        }
        let b = pchip(&table[n + 1], j, hy);
        (1.0 - wt) * a + wt * b
    }
}

impl PricingSurface for PdeSurface {
    /// The delta level itself; barriers come from a root find per call.
    type Level = f64;

    fn contract(&self) -> &ContractSpec {
        &self.contract
    }

    fn rate(&self) -> f64 {
        self.rate
    }

    fn sigma_upper(&self) -> f64 {
        self.sigma_upper
    }

    fn max_time(&self) -> f64 {
        self.max_time
    }

    fn provenance(&self) -> Provenance {
        let (lo, hi) = self.log_spot_range();
        Provenance::PdeGrid {
            space_nodes: self.config.space_nodes,
            time_steps: self.config.time_steps,
            log_spot_min: lo,
            log_spot_max: hi,
        }
    }

    fn price_unchecked(&self, t: f64, s: f64) -> f64 {
        self.interpolate(&self.price, t, s)
    }

    fn delta_unchecked(&self, t: f64, s: f64) -> f64 {
        self.interpolate(&self.delta, t, s).clamp(0.0, 1.0)
    }

    fn gamma_unchecked(&self, t: f64, s: f64) -> f64 {
        self.interpolate(&self.gamma, t, s)
    }

    fn speed_unchecked(&self, t: f64, s: f64) -> f64 {
        self.interpolate(&self.speed, t, s)
    }

    fn level(&self, x: f64) -> Option<f64> {
        (x > DELTA_CLIP && x < 1.0 - DELTA_CLIP).then_some(x)
    }

    /// Infinite when the level is not reached inside the truncated domain.
    fn log_barrier(&self, t: f64, x: &f64) -> f64 {
        let (lo, hi) = self.log_spot_range();
        let f = |y: f64| self.delta_unchecked(t, y.exp()) - x;
        let (flo, fhi) = (f(lo), f(hi));
        if flo >= 0.0 {
            return f64::NEG_INFINITY;
        }
        if fhi <= 0.0 {
            return f64::INFINITY;
        }
        brent(f, lo, hi, flo, fhi, 1e-13, 200).unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VolatilitySpec;
    use crate::pricing::bs_closed_form;

    fn coarse() -> PdeGridConfig {
        PdeGridConfig {
            space_nodes: 200,
            time_steps: 200,
            ..PdeGridConfig::default()
        }
    }

    #[test]
    fn rejects_narrow_domain() {
        let m = MarketModel::black_scholes(0.0, 100.0, 0.2).unwrap();
        let c = ContractSpec::call(100.0, 1.0).unwrap();
        let cfg = PdeGridConfig {
            half_width_sd: 4.0,
            ..coarse()
        };
        assert!(matches!(pde_surface(&m, &c, &cfg), Err(HedgeError::Configuration(_))));
    }

    #[test]
    fn coarse_grid_tracks_closed_form() {
        let m = MarketModel::black_scholes(0.03, 100.0, 0.25).unwrap();
        let c = ContractSpec::call(110.0, 1.0).unwrap();
        let pde = pde_surface(&m, &c, &coarse()).unwrap();
        let bs = bs_closed_form(&m, &c).unwrap();
        for &t in &[0.0, 0.4, 0.9] {
            for &s in &[60.0, 95.0, 110.0, 150.0, 200.0] {
                let dp = (pde.price(t, s).unwrap() - bs.price(t, s).unwrap()).abs();
                let dd = (pde.delta(t, s).unwrap() - bs.delta(t, s).unwrap()).abs();
                assert!(dp < 2e-2, "price t={t} s={s}: {dp}");
                assert!(dd < 3e-3, "delta t={t} s={s}: {dd}");
            }
        }
        assert!(pde.delta(0.995, 100.0).is_err());
    }

    #[test]
    fn local_vol_surface_shape() {
        let vol = VolatilitySpec::smooth_local(0.15, 0.1, 100f64.ln(), 0.1).unwrap();
        let m = MarketModel::new(0.02, 100.0, vol).unwrap();
        let c = ContractSpec::call(100.0, 1.0).unwrap();
        let pde = pde_surface(&m, &c, &coarse()).unwrap();
        for n in [20, 100, 200] {
            let nodes: Vec<_> = pde.slice_nodes(n).collect();
            for w in nodes.windows(2) {
                // strict where delta is resolvable, round-off tolerance where it saturates
                if w[0].1 > DELTA_CLIP && w[1].1 < 1.0 - DELTA_CLIP {
                    assert!(w[1].1 > w[0].1, "delta not increasing at y = {}", w[1].0);
                }
                assert!(w[1].1 >= w[0].1 - 1e-12);
                assert!(w[0].1 >= 0.0 && w[1].1 <= 1.0);
            }
            assert!(nodes[1..nodes.len() - 1].iter().all(|n| n.2 >= -1e-12));
        }
        let s = pde.delta_inverse(0.5, 0.4).unwrap();
        assert!((pde.delta(0.5, s).unwrap() - 0.4).abs() < 1e-9);
        let y = pde.log_barrier(0.5, &0.4);
        assert!((y.exp() - s).abs() / s < 1e-10);
    }
}
