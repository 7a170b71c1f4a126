//! Gauss-Legendre rules and panel integration.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> GaussLegendre {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Newton iteration from the Chebyshev-like initial guess
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `int_a^b f`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        half * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
    }

    /// Sum of the rule over consecutive panels between sorted breakpoints.
    pub fn integrate_panels(&self, breaks: &[f64], mut f: impl FnMut(f64) -> f64) -> f64 {
        breaks
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| self.integrate(w[0], w[1], &mut f))
            .sum()
    }
}

/// `P_n(x)` and `P_n'(x)` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Sorted, deduplicated breakpoints clipped to `[lo, hi]`, always
/// containing both ends.
pub(crate) fn breakpoints(lo: f64, hi: f64, inner: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut b: Vec<f64> = inner.into_iter().filter(|x| *x > lo && *x < hi).collect();
    b.push(lo);
    b.push(hi);
    b.sort_by(f64::total_cmp);
    b.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let g = GaussLegendre::new(8);
        // degree 15 is exact for 8 nodes
        let v = g.integrate(-1.0, 2.0, |x| x.powi(15) + 3.0 * x.powi(4));
        let exact = (2f64.powi(16) - 1.0) / 16.0 + 3.0 * (32.0 + 1.0) / 5.0;
        assert!((v - exact).abs() < 1e-9 * exact, "{v} vs {exact}");
        assert!((g.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn known_five_point_nodes() {
        let g = GaussLegendre::new(5);
        let x = (5.0 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
        assert!((g.nodes[3] - x).abs() < 1e-15);
        assert!(g.nodes[2].abs() < 1e-15);
        assert!((g.weights[2] - 128.0 / 225.0).abs() < 1e-15);
    }

    #[test]
    fn panels_handle_a_kink() {
        let g = GaussLegendre::new(6);
        let v = g.integrate_panels(&breakpoints(-1.0, 3.0, [0.0]), |x| x.abs());
        assert!((v - 5.0).abs() < 1e-13);
    }
}
