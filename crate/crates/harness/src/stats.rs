//! Regression and normality summaries used by the experiments.

use anyhow::{bail, Result};
use serde::Serialize;

/// Ordinary least squares fit of `log v` on `log t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub residual_se: f64,
    /// Half-width of the 95% confidence interval for the slope.
    pub slope_half_width: f64,
}

/// Fit of `y = intercept + slope * x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub residual_se: f64,
    pub slope_se: f64,
}

// two-sided 97.5% Student t quantiles for 1..=30 degrees of freedom
const T975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131,
    2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
];

pub fn t_quantile_975(df: usize) -> f64 {
    match df {
        0 => f64::INFINITY,
        1..=30 => T975[df - 1],
        _ => 1.959_963_984_540_054,
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 3 {
        bail!("linear fit needs at least 3 paired points, got {n}");
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        bail!("abscissae must not all be equal");
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let residual_se = (ss_res / (nf - 2.0)).sqrt();
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        residual_se,
        slope_se: residual_se / sxx.sqrt(),
    })
}

pub fn fit_loglog_slope(grid: &[f64], values: &[f64]) -> Result<SlopeFit> {
    if grid.len() != values.len() || grid.len() < 3 {
        bail!("slope fit needs at least 3 points, got {}", grid.len());
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || !(grid[0] > 0.0) {
        bail!("grid must be positive and strictly increasing");
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        bail!("non-positive variance value {v}");
    }
    let lx: Vec<f64> = grid.iter().map(|g| g.ln()).collect();
    let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let fit = linear_fit(&lx, &ly)?;
    Ok(SlopeFit {
        grid: grid.to_vec(),
        values: values.to_vec(),
        slope: fit.slope,
        intercept: fit.intercept,
        residual_se: fit.residual_se,
        slope_half_width: t_quantile_975(grid.len() - 2) * fit.slope_se,
    })
}

/// `n` points from `lo` to `hi`, equally spaced on the log scale and
/// rounded to integers.
pub fn log_grid(lo: usize, hi: usize, n: usize) -> Vec<usize> {
    if n < 2 {
        return vec![lo];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<usize> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp().round() as usize)
        .collect();
    out.dedup();
    out
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Sample moments of a set of errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn moments(x: &[f64]) -> Moments {
    let n = x.len() as f64;
    let m = mean(x);
    let c2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let c3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    let c4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    let (skewness, excess_kurtosis) = if c2 > 0.0 {
        (c3 / c2.powf(1.5), c4 / (c2 * c2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    Moments {
        mean: m,
        variance: if x.len() > 1 { c2 * n / (n - 1.0) } else { 0.0 },
        skewness,
        excess_kurtosis,
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Anderson-Darling statistic against a normal law with estimated mean and
/// variance, with the small-sample factor `1 + 0.75/n + 2.25/n^2`.
pub fn anderson_darling(x: &[f64]) -> f64 {
    let n = x.len();
    let m = moments(x);
    if !(m.variance > 0.0) {
        return f64::NAN;
    }
    let sd = m.variance.sqrt();
    let mut z: Vec<f64> = x.iter().map(|v| (v - m.mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut s = 0.0;
    for i in 0..n {
        let lo = normal_cdf(z[i]).max(1e-300);
        let hi = (1.0 - normal_cdf(z[n - 1 - i])).max(1e-300);
        s += (2 * i + 1) as f64 * (lo.ln() + hi.ln());
    }
    let a2 = -nf - s / nf;
    a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf))
}

/// 1% critical value of the adjusted statistic for the composite normal
/// hypothesis.
pub const AD_CRITICAL_1PCT: f64 = 1.035;

/// Pass bands for standardized errors at `M = 2000`.
pub const SKEW_BAND: f64 = 0.15;
pub const KURTOSIS_BAND: f64 = 0.3;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identity_and_constant_slopes() {
        let grid: Vec<f64> = (1..=10).map(|i| i as f64 * 3.0).collect();
        assert!((fit_loglog_slope(&grid, &grid).unwrap().slope - 1.0).abs() < 1e-12);
        let c = vec![4.0; 10];
        assert!(fit_loglog_slope(&grid, &c).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn exact_power_law() {
        let grid: Vec<f64> = log_grid(100, 10_000, 9).iter().map(|&t| t as f64).collect();
        let v: Vec<f64> = grid.iter().map(|t| 7.0 * t.sqrt()).collect();
        let fit = fit_loglog_slope(&grid, &v).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
        assert!((fit.intercept - 7f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn noisy_quadratic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let grid: Vec<f64> = (1..=30).map(|i| i as f64).collect();
        let v: Vec<f64> = grid
            .iter()
            .map(|t| {
                let e: f64 = StandardNormal.sample(&mut rng);
                t * t * (1.0 + 0.01 * e)
            })
            .collect();
        let fit = fit_loglog_slope(&grid, &v).unwrap();
        assert!((fit.slope - 2.0).abs() < 0.05);
        assert!(fit.slope_half_width < 0.05);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_loglog_slope(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0]).is_err());
        assert!(fit_loglog_slope(&[1.0, 1.0, 3.0], &[1.0, 1.0, 2.0]).is_err());
        assert!(fit_loglog_slope(&[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn perfect_line_has_unit_r_squared() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.r_squared - 1.0).abs() < 1e-14);
        assert!((f.slope + 0.5).abs() < 1e-14);
    }

    #[test]
    fn moments_of_a_known_sample() {
        let m = moments(&[1.0, 2.0, 3.0, 4.0, 10.0]);
        assert!((m.mean - 4.0).abs() < 1e-15);
        assert!((m.variance - 12.5).abs() < 1e-12);
        // biased central moments: second 10, third 36, fourth 278.8
        assert!((m.skewness - 36.0 / 10f64.powf(1.5)).abs() < 1e-12);
        assert!((m.excess_kurtosis - (2.788 - 3.0)).abs() < 1e-12);
    }

    /// Calibration of the pass bands on genuinely normal samples of size
    /// 2000: the bands must accept the vast majority of them.
    #[test]
    fn bands_accept_normal_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let trials = 400;
        let (mut skew_ok, mut kurt_ok, mut ad_ok) = (0, 0, 0);
        for _ in 0..trials {
            let x: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
            let m = moments(&x);
            skew_ok += usize::from(m.skewness.abs() < SKEW_BAND);
            kurt_ok += usize::from(m.excess_kurtosis.abs() < KURTOSIS_BAND);
            ad_ok += usize::from(anderson_darling(&x) < AD_CRITICAL_1PCT);
        }
        assert!(skew_ok as f64 / trials as f64 > 0.98, "{skew_ok}");
        assert!(kurt_ok as f64 / trials as f64 > 0.93, "{kurt_ok}");
        assert!(ad_ok as f64 / trials as f64 > 0.97, "{ad_ok}");
    }

    #[test]
    fn anderson_darling_flags_skewed_data() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..2000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                e.exp()
            })
            .collect();
        assert!(anderson_darling(&x) > AD_CRITICAL_1PCT);
    }
}
