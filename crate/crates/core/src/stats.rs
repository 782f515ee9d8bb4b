//! Small descriptive statistics and goodness-of-fit tests.

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Median; NaN for an empty slice.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation scaled to σ for normal data (×1.4826).
pub fn robust_sigma(xs: &[f64]) -> f64 {
    let m = median(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m).abs()).collect();
    1.4826 * median(&dev)
}

/// Sample skewness g1 = m3 / m2^{3/2}.
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let den: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    if den == 0.0 {
        return 0.0;
    }
    let num: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    num / den
}

/// Result of a one-sample Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KsReport {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample KS test of `samples` against a continuous CDF.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsReport> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("KS test needs samples".into()));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("NaN sample in KS test"));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f);
    }
    Ok(KsReport {
        statistic: d,
        p_value: kolmogorov_sf(d, xs.len()),
        n: xs.len(),
    })
}

/// Asymptotic survival function of the KS statistic with the Stephens
/// small-sample correction.
pub fn kolmogorov_sf(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

/// Two-sided exact binomial sign test p-value for `positives` successes
/// out of `n` trials under p = 1/2.
pub fn sign_test(positives: u64, n: u64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let k = positives.min(n - positives);
    let ln_half_n = n as f64 * 0.5f64.ln();
    let tail: f64 = (0..=k).map(|i| (ln_choose(n, i) + ln_half_n).exp()).sum();
    (2.0 * tail).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptive() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(skewness(&xs), 0.0);
        assert!(skewness(&[0.0, 0.0, 0.0, 10.0]) > 1.0);
    }

    #[test]
    fn kolmogorov_reference_values() {
        // Q_KS(1.0) = 0.26999967..., Q_KS(1.36) ≈ 0.0494
        let n = 1_000_000;
        let scale = (n as f64).sqrt() + 0.12 + 0.11 / (n as f64).sqrt();
        assert!((kolmogorov_sf(1.0 / scale, n) - 0.269_999_671_677_2).abs() < 1e-9);
        assert!((kolmogorov_sf(1.36 / scale, n) - 0.049_45).abs() < 1e-4);
    }

    #[test]
    fn ks_detects_wrong_distribution() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let ok = ks_test(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(ok.p_value > 0.99);
        let bad = ks_test(&xs, |x| (x * x).clamp(0.0, 1.0)).unwrap();
        assert!(bad.p_value < 1e-6);
    }

    #[test]
    fn sign_test_values() {
        // 10 trials, 0 positives: 2 / 1024
        assert!((sign_test(0, 10) - 2.0 / 1024.0).abs() < 1e-15);
        assert_eq!(sign_test(5, 10), 1.0);
        assert!((sign_test(2, 10) - 2.0 * 56.0 / 1024.0).abs() < 1e-12);
    }
}
