//! Goodness-of-fit and MCMC convergence statistics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample two-sided Kolmogorov–Smirnov test against `cdf`.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf(d, xs.len()),
    }
}

/// Asymptotic survival function of the KS statistic with the usual
/// small-sample correction.
fn kolmogorov_sf(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Sample quantile with linear interpolation between order statistics.
/// `sorted` must be sorted ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = prob.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostic {
    /// Split-chain potential scale reduction.
    pub rhat: f64,
    /// Effective sample size across chains.
    pub ess: f64,
}

/// Split-chain R̂ and multi-chain ESS for one scalar quantity.
///
/// Each chain is halved; the ESS uses Geyer's initial monotone sequence on
/// the combined autocorrelation estimate.
pub fn chain_diagnostic(chains: &[Vec<f64>]) -> ChainDiagnostic {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .filter(|h| h.len() >= 2)
        .collect();
    if halves.len() < 2 {
        return ChainDiagnostic {
            rhat: f64::NAN,
            ess: f64::NAN,
        };
    }
    let n = halves.iter().map(|h| h.len()).min().unwrap();
    let means: Vec<f64> = halves.iter().map(|h| mean(&h[..n])).collect();
    let vars: Vec<f64> = halves.iter().map(|h| variance(&h[..n])).collect();
    let w = mean(&vars);
    let b = n as f64 * variance(&means);
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    if w <= 0.0 {
        // constant chains
        let rhat = if b <= 0.0 { 1.0 } else { f64::INFINITY };
        return ChainDiagnostic {
            rhat,
            ess: (n * halves.len()) as f64,
        };
    }
    let rhat = (var_plus / w).sqrt();

    // autocorrelation per half, averaged; lags computed only as needed
    let m = halves.len();
    let centered: Vec<Vec<f64>> = halves
        .iter()
        .zip(&means)
        .map(|(h, &mu)| h[..n].iter().map(|x| x - mu).collect())
        .collect();
    let rho = |lag: usize| -> f64 {
        let avg = centered
            .iter()
            .map(|c| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m as f64;
        1.0 - (w - avg) / var_plus
    };
    // Geyer: sum pairs while positive, enforce monotone decrease
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while k + 1 < n {
        let mut pair = rho(k) + rho(k + 1);
        if pair <= 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        k += 2;
    }
    let total = (n * m) as f64;
    let ess = total / tau.max(1.0 / total.log10().max(1.0));
    ChainDiagnostic { rhat, ess }
}
