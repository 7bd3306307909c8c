//! Small statistics toolbox: stable summation, moment estimates with
//! standard errors, two-sample Kolmogorov-Smirnov, and least squares on a
//! line. Everything here is deterministic given its inputs.

use crate::error::{Error, Result};

/// Pairwise (cascade) summation; error grows like log n instead of n.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

/// Sample mean.
pub fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let n = v.len();
    let m = mean(v);
    let sq: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (n as f64 - 1.0)
}

/// Mean together with its standard error `sd / sqrt(n)`.
pub fn mean_and_se(v: &[f64]) -> Result<(f64, f64)> {
    if v.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 samples for a standard error, got {}",
            v.len()
        )));
    }
    let m = mean(v);
    let se = (variance(v) / v.len() as f64).sqrt();
    Ok((m, se))
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic tail
/// `p = 2 sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lambda^2)`,
/// `lambda = sqrt(mn/(m+n)) D`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.len() < 8 || b.len() < 8 {
        return Err(Error::InsufficientData(format!(
            "Kolmogorov-Smirnov needs at least 8 samples per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.total_cmp(q));
    ys.sort_by(|p, q| p.total_cmp(q));
    let (m, n) = (xs.len(), ys.len());
    let mut i = 0;
    let mut j = 0;
    let mut d = 0.0_f64;
    while i < m && j < n {
        let t = xs[i].min(ys[j]);
        while i < m && xs[i] <= t {
            i += 1;
        }
        while j < n && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / m as f64 - j as f64 / n as f64).abs());
    }
    let en = ((m as f64 * n as f64) / (m as f64 + n as f64)).sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_tail(en * d),
    })
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64).powi(2) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares for `y ~ intercept + slope x`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "regression needs matched samples of length >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let mx = mean(x);
    let my = mean(y);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    if sxx <= 0.0 {
        return Err(Error::InsufficientData(
            "regression abscissae are all equal".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    use statrs::distribution::ContinuousCDF;
    statrs::distribution::Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile argument must lie in (0, 1), got {p}"
        )));
    }
    use statrs::distribution::ContinuousCDF;
    Ok(statrs::distribution::Normal::new(0.0, 1.0)
        .unwrap()
        .inverse_cdf(p))
}

/// `ln Phi(z)`, stable arbitrarily deep in the left tail.
///
/// The direct CDF stays positive down to about `z = -37`; beyond the switch
/// point the Mills-ratio series `ln Phi(z) = -z^2/2 - ln(-z sqrt(2 pi))
/// + ln(1 - 1/z^2 + 3/z^4 - ...)` is accurate to better than 1e-12.
pub fn ln_normal_cdf(z: f64) -> f64 {
    if z > -34.0 {
        return normal_cdf(z).ln();
    }
    let zz = z * z;
    let series = 1.0 - 1.0 / zz + 3.0 / (zz * zz) - 15.0 / (zz * zz * zz);
    -0.5 * zz - (-z).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
}

/// `ln P(alpha < Z < beta)` for a standard normal `Z`, stable when the
/// interval sits far in a tail. Infinite endpoints are allowed.
pub fn log_normal_interval(alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha < beta) {
        return Err(Error::InvalidParameter(format!(
            "interval must satisfy alpha < beta, got [{alpha}, {beta}]"
        )));
    }
    if alpha == f64::NEG_INFINITY && beta == f64::INFINITY {
        return Ok(0.0);
    }
    // Reflect so the better-conditioned endpoint carries the magnitude.
    let (a, b) = if alpha + beta > 0.0 {
        (-beta, -alpha)
    } else {
        (alpha, beta)
    };
    let lb = ln_normal_cdf(b);
    if a == f64::NEG_INFINITY {
        return Ok(lb);
    }
    let ratio = ln_normal_cdf(a) - lb;
    if ratio >= -1e-14 {
        return Err(Error::Underflow(format!(
            "interval [{alpha}, {beta}] carries no resolvable normal mass"
        )));
    }
    Ok(lb + (-ratio.exp()).ln_1p())
}
