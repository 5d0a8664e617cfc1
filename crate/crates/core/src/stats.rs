// SPDX-License-Identifier: Apache-2.0

//! Small numerical helpers shared across modules.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

/// Two-sided standard normal critical value for confidence `level`.
pub fn z_for_level(level: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

/// Wilson score interval for `successes` out of `n` trials.
///
/// Accepts non-integer inputs so that it can be used at an effective sample
/// size. Returns `None` when `n` is not positive.
pub fn wilson(successes: f64, n: f64, level: f64) -> Option<(f64, f64)> {
    if n <= 0.0 {
        return None;
    }
    let p = (successes / n).clamp(0.0, 1.0);
    let z = z_for_level(level);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = (centre - half).max(0.0);
    let hi = (centre + half).min(1.0);
    // the closed form can miss the endpoints by an ulp at p = 0 or 1
    Some((lo.min(p), hi.max(p)))
}

/// Linear-interpolated quantile of an ascending slice (R type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    match sorted.len() {
        0 => None,
        1 => Some(sorted[0]),
        n => {
            let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
        }
    }
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, sd))
}

/// Upper tail probability of a chi-squared distribution.
pub fn chi_squared_sf(statistic: f64, df: f64) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df).expect("positive degrees of freedom");
    (1.0 - dist.cdf(statistic)).clamp(0.0, 1.0)
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Support and probabilities of the number of marked items in a draw of
/// `draws` from a population of `total` items, `marked` of them marked.
pub fn hypergeometric_pmf(total: u64, marked: u64, draws: u64) -> (u64, Vec<f64>) {
    let lo = draws.saturating_sub(total - marked);
    let hi = draws.min(marked);
    let denom = ln_choose(total, draws);
    let probs = (lo..=hi)
        .map(|x| (ln_choose(marked, x) + ln_choose(total - marked, draws - x) - denom).exp())
        .collect();
    (lo, probs)
}

/// Probabilities of Binomial(n, p) over 0..=n.
pub fn binomial_pmf(n: u64, p: f64) -> Vec<f64> {
    (0..=n)
        .map(|k| {
            if p == 0.0 {
                return if k == 0 { 1.0 } else { 0.0 };
            }
            if p == 1.0 {
                return if k == n { 1.0 } else { 0.0 };
            }
            (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
        })
        .collect()
}

/// Two-sided exact p-value by the "probability no larger than observed" rule,
/// together with the mass strictly more extreme and the mass tied with the
/// observation. `probs[i]` is the probability of outcome `i`.
pub fn two_sided_tail(probs: &[f64], observed: usize) -> TailMass {
    let p_obs = probs[observed];
    let tol = 1e-7 * p_obs.max(f64::MIN_POSITIVE);
    let mut more = 0.0;
    let mut tied = 0.0;
    for &p in probs {
        if p < p_obs - tol {
            more += p;
        } else if p <= p_obs + tol {
            tied += p;
        }
    }
    TailMass { more, tied }
}

/// Two-sided tail of the hypergeometric distribution at `observed`, by the
/// same ordering as [`two_sided_tail`].
///
/// The pmf is walked outward from the mode by its term ratio and truncated
/// once terms fall below 1e-300 of the modal mass, so the cost is
/// proportional to the effective support rather than the full range.
pub fn hypergeometric_tail(total: u64, marked: u64, draws: u64, observed: u64) -> TailMass {
    let lo = draws.saturating_sub(total - marked);
    let hi = draws.min(marked);
    assert!((lo..=hi).contains(&observed), "observation outside support");
    let mode = (((draws + 1) as f64 * (marked + 1) as f64 / (total + 2) as f64).floor() as u64).clamp(lo, hi);
    let up = |x: u64| {
        (marked - x) as f64 * (draws - x) as f64
            / ((x + 1) as f64 * ((total - marked) as f64 - draws as f64 + x as f64 + 1.0))
    };
    const CUTOFF: f64 = 1e-300;

    // relative masses, mode = 1
    let mut above = Vec::new();
    let mut r = 1.0;
    let mut x = mode;
    while x < hi {
        r *= up(x);
        x += 1;
        if r < CUTOFF && x > observed {
            break;
        }
        above.push(r);
    }
    let mut below = Vec::new();
    r = 1.0;
    x = mode;
    while x > lo {
        r /= up(x - 1);
        x -= 1;
        if r < CUTOFF && x < observed {
            break;
        }
        below.push(r);
    }
    let r_obs = match observed.cmp(&mode) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => above[(observed - mode - 1) as usize],
        std::cmp::Ordering::Less => below[(mode - observed - 1) as usize],
    };
    let tol = 1e-7 * r_obs;
    let (mut sum, mut more, mut tied) = (0.0, 0.0, 0.0);
    for &p in std::iter::once(&1.0).chain(&above).chain(&below) {
        sum += p;
        if p < r_obs - tol {
            more += p;
        } else if p <= r_obs + tol {
            tied += p;
        }
    }
    TailMass {
        more: more / sum,
        tied: tied / sum,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TailMass {
    pub more: f64,
    pub tied: f64,
}

impl TailMass {
    pub fn p_value(&self) -> f64 {
        (self.more + self.tied).min(1.0)
    }

    /// Rejection probability of the randomized test with exact size `alpha`.
    pub fn randomized_rejection(&self, alpha: f64) -> f64 {
        if self.more + self.tied <= alpha {
            1.0
        } else if self.more >= alpha || self.tied <= 0.0 {
            0.0
        } else {
            ((alpha - self.more) / self.tied).clamp(0.0, 1.0)
        }
    }
}
