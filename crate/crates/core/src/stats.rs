//! Small statistics toolkit: least-squares lines, log-log slopes, power-law
//! fits, moments and the two-sample Kolmogorov–Smirnov test.

/// Result of a straight-line fit `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope from the residual scatter (NaN for two points).
    pub slope_stderr: f64,
    pub n: usize,
}

/// Ordinary least squares. Returns `None` for fewer than two points or a
/// degenerate abscissa.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    weighted_linear_fit(xs, ys, None)
}

/// Weighted least squares with weights `w_i` (use `1/σ_i²`).
pub fn weighted_linear_fit(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n || weights.is_some_and(|w| w.len() != n) {
        return None;
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..n).map(w).sum();
    let mx = (0..n).map(|i| w(i) * xs[i]).sum::<f64>() / sw;
    let my = (0..n).map(|i| w(i) * ys[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|i| w(i) * (xs[i] - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = (0..n).map(|i| w(i) * (xs[i] - mx) * (ys[i] - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if n > 2 {
        let rss: f64 = (0..n)
            .map(|i| w(i) * (ys[i] - intercept - slope * xs[i]).powi(2))
            .sum();
        (rss / (n as f64 - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some(LinearFit {
        slope,
        intercept,
        slope_stderr,
        n,
    })
}

/// Slope of `ln y` against `ln x`, skipping non-positive points.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .unzip();
    linear_fit(&lx, &ly)
}

/// Weighted fit of `y = A·x^s` that accepts non-positive `y` values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub exponent: f64,
    /// Half-width of the `Δχ² = 1` interval, inflated by `√(χ²/(n−2))` when that exceeds 1.
    pub exponent_stderr: f64,
    pub amplitude: f64,
    pub chi2: f64,
    pub n: usize,
}

impl PowerLawFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * x.powf(self.exponent)
    }
}

/// Profile least squares of `y = A·x^s` with weights `1/σ²`: for each
/// exponent on a 10⁻³ grid in `[s_lo, s_hi]` the amplitude is solved in
/// closed form. Requires at least three points with positive `x` and `σ`.
pub fn power_law_fit(xs: &[f64], ys: &[f64], sigmas: &[f64], s_lo: f64, s_hi: f64) -> Option<PowerLawFit> {
    let n = xs.len();
    if n < 3 || ys.len() != n || sigmas.len() != n || !(s_hi > s_lo) {
        return None;
    }
    if xs.iter().chain(sigmas).any(|v| !(*v > 0.0 && v.is_finite())) || ys.iter().any(|y| !y.is_finite()) {
        return None;
    }
    // scale x by its geometric mean for conditioning
    let x0 = (xs.iter().map(|x| x.ln()).sum::<f64>() / n as f64).exp();
    let chi2_at = |s: f64| {
        let f: Vec<f64> = xs.iter().map(|x| (x / x0).powf(s)).collect();
        let (mut fy, mut ff) = (0.0, 0.0);
        for i in 0..n {
            let w = sigmas[i].powi(-2);
            fy += w * f[i] * ys[i];
            ff += w * f[i] * f[i];
        }
        let a = fy / ff;
        let chi2 = (0..n).map(|i| ((ys[i] - a * f[i]) / sigmas[i]).powi(2)).sum::<f64>();
        (chi2, a)
    };
    let steps = ((s_hi - s_lo) / 1e-3).round() as usize;
    let grid: Vec<(f64, f64, f64)> = (0..=steps)
        .map(|k| {
            let s = s_lo + k as f64 * 1e-3;
            let (c, a) = chi2_at(s);
            (s, c, a)
        })
        .collect();
    let &(s, chi2, a) = grid.iter().min_by(|p, q| p.1.total_cmp(&q.1))?;
    let inside: Vec<f64> = grid.iter().filter(|g| g.1 <= chi2 + 1.0).map(|g| g.0).collect();
    let half = 0.5 * (inside.last()? - inside.first()?);
    let inflate = (chi2 / (n as f64 - 2.0)).sqrt().max(1.0);
    Some(PowerLawFit {
        exponent: s,
        exponent_stderr: half * inflate,
        amplitude: a * x0.powf(-s),
        chi2,
        n,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)
}

/// Standard error of the mean.
pub fn stderr_of_mean(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Jackknife standard error from leave-one-out replicates.
pub fn jackknife_stderr(replicates: &[f64]) -> f64 {
    let n = replicates.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(replicates);
    let ss: f64 = replicates.iter().map(|r| (r - m).powi(2)).sum();
    ((n as f64 - 1.0) / n as f64 * ss).sqrt()
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let f = linear_fit(&[0.0, 100.0, 200.0], &[0.0, 20.0, 40.0]).unwrap();
        assert!((f.slope - 0.2).abs() < 1e-15);
        assert!(f.intercept.abs() < 1e-12);
        assert!(f.slope_stderr.abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(linear_fit(&[1.0], &[2.0]).is_none());
        assert!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]).is_none());
    }

    #[test]
    fn power_law_slope() {
        let xs: Vec<f64> = (1..10).map(|i| 100.0 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-2.0)).collect();
        let f = log_log_slope(&xs, &ys).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12);
    }

    #[test]
    fn power_law_fit_recovers_exponent() {
        let xs: Vec<f64> = (1..10).map(|i| 500.0 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 7.0 * x.powf(-1.5)).collect();
        let sig: Vec<f64> = ys.iter().map(|y| 0.1 * y).collect();
        let f = power_law_fit(&xs, &ys, &sig, -4.0, 1.0).unwrap();
        assert!((f.exponent + 1.5).abs() < 1e-3);
        assert!((f.eval(1000.0) / (7.0 * 1000f64.powf(-1.5)) - 1.0).abs() < 1e-2);
        assert!(f.chi2 < 1e-3);
        assert!(f.exponent_stderr > 0.0 && f.exponent_stderr < 0.2);
    }

    #[test]
    fn power_law_fit_tolerates_negative_points() {
        let xs = [1000.0, 2000.0, 4000.0, 8000.0];
        let ys = [1.0e-3, 5.0e-4, 2.5e-4, -1.0e-4];
        let sig = [1e-4; 4];
        let f = power_law_fit(&xs, &ys, &sig, -4.0, 1.0).unwrap();
        assert!(f.exponent < -0.8 && f.exponent > -1.5, "{f:?}");
        assert!(power_law_fit(&xs[..2], &ys[..2], &sig[..2], -4.0, 1.0).is_none());
        assert!(power_law_fit(&xs, &ys, &[0.0; 4], -4.0, 1.0).is_none());
    }

    #[test]
    fn jackknife_of_mean_matches_sem() {
        let xs = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let n = xs.len() as f64;
        let total: f64 = xs.iter().sum();
        let reps: Vec<f64> = xs.iter().map(|x| (total - x) / (n - 1.0)).collect();
        assert!((jackknife_stderr(&reps) - stderr_of_mean(&xs)).abs() < 1e-12);
    }

    #[test]
    fn ks_identical_and_shifted() {
        let a: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        let (d, p) = ks_two_sample(&a, &a);
        assert_eq!(d, 0.0);
        assert!(p > 0.99);
        let b: Vec<f64> = a.iter().map(|x| x + 0.3).collect();
        let (_, p) = ks_two_sample(&a, &b);
        assert!(p < 1e-6);
    }
}
