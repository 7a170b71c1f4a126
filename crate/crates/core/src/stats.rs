//! Small sample statistics and least-squares fits.

use serde::Serialize;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(xs: &[f64]) -> MeanSe {
        let n = xs.len();
        if n == 0 {
            return MeanSe {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return MeanSe { mean, se: f64::NAN, n };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        MeanSe {
            mean,
            se: (var / n as f64).sqrt(),
            n,
        }
    }

    /// `|mean - target| <= k * se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

/// Sample covariance of two equally long series.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Weighted least-squares line with weights `1 / sd^2`.
///
/// The slope standard error treats the `sd` values as known.
pub fn weighted_line_fit(x: &[f64], y: &[f64], sd: &[f64]) -> LineFit {
    assert!(x.len() == y.len() && y.len() == sd.len() && x.len() >= 2);
    let w: Vec<f64> = sd.iter().map(|s| if *s > 0.0 { 1.0 / (s * s) } else { 1.0 }).collect();
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * (x - mx) * (x - mx)).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    LineFit {
        slope,
        intercept: my - slope * mx,
        slope_se: (1.0 / sxx).sqrt(),
    }
}

/// Coefficient of determination of the least-squares quadratic through
/// the points.
pub fn quadratic_fit_r2(x: &[f64], y: &[f64]) -> f64 {
    assert!(x.len() == y.len() && x.len() >= 3);
    // normal equations for y = c0 + c1 x + c2 x^2
    let mut a = [[0.0f64; 4]; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let p = [1.0, xi, xi * xi];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] += p[r] * p[c];
            }
            a[r][3] += p[r] * yi;
        }
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let f = a[row][col] / a[col][col];
                let pivot_row = a[col];
                for (dst, src) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                    *dst -= f * src;
                }
            }
        }
    }
    let c: Vec<f64> = (0..3).map(|i| a[i][3] / a[i][i]).collect();
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let f = c[0] + c[1] * xi + c[2] * xi * xi;
            (yi - f) * (yi - f)
        })
        .sum();
    1.0 - ss_res / ss_tot
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_standard_error() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(m.within(2.0, 1.0));
    }

    #[test]
    fn line_fit_recovers_exact_slope() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let f = weighted_line_fit(&x, &y, &[1.0, 0.5, 2.0, 1.0]);
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept + 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_r2_is_one_on_parabola() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.3 - 2.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - 0.5 * v + 3.0 * v * v).collect();
        assert!((quadratic_fit_r2(&x, &y) - 1.0).abs() < 1e-12);
        let noisy: Vec<f64> = y
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        assert!(quadratic_fit_r2(&x, &noisy) < 1.0);
    }
}
