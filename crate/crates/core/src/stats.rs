//! Small numerical helpers shared across modules.

use statrs::function::gamma::{gamma_lr, ln_gamma};

/// Poisson probabilities `P(K = k)` for `k = 0..len`, by forward recurrence.
pub(crate) fn poisson_pmfs(mean: f64, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    if len == 0 {
        return out;
    }
    if mean == 0.0 {
        out.push(1.0);
        out.resize(len, 0.0);
        return out;
    }
    // Recurrence underflows for very large means; fall back to log space.
    if mean > 500.0 {
        return (0..len).map(|k| poisson_pmf(k as u64, mean)).collect();
    }
    let mut p = (-mean).exp();
    for k in 0..len {
        out.push(p);
        p *= mean / (k + 1) as f64;
    }
    out
}

pub(crate) fn poisson_pmf(k: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let kf = k as f64;
    (kf * mean.ln() - mean - ln_gamma(kf + 1.0)).exp()
}

/// `P(K >= k)` for `K ~ Poisson(mean)`, accurate for tiny tails.
pub(crate) fn poisson_upper_tail(k: u64, mean: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if mean == 0.0 {
        return 0.0;
    }
    gamma_lr(k as f64, mean)
}

/// `P(K <= k)`.
pub(crate) fn poisson_cdf(k: u64, mean: f64) -> f64 {
    1.0 - poisson_upper_tail(k + 1, mean)
}

/// Smallest `k` with `P(K <= k) >= q`.
pub(crate) fn poisson_quantile(q: f64, mean: f64) -> u64 {
    if mean == 0.0 {
        return 0;
    }
    // Compare upper tails rather than accumulating the cdf, so quantiles very
    // close to 1 are reached without rounding stalls.
    let target = 1.0 - q;
    let mut k = (mean - 10.0 * mean.sqrt()).max(0.0).floor() as u64;
    while poisson_upper_tail(k + 1, mean) > target {
        k += 1;
    }
    k
}

/// Linear-interpolated empirical quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub(crate) fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}
