//! Ordinary (i.i.d.) percentile bootstrap of a collection of estimates.
//!
//! Draws `B` resamples of size `n` with replacement, records the mean and
//! the median of each, and reports bootstrap point estimates, Monte Carlo
//! variances and percentile intervals. Two interval bases are offered:
//!
//! * [`IntervalBasis::Statistic`]: percentiles of the `B` resampled
//!   statistics (an interval for the mean or median itself);
//! * [`IntervalBasis::Pooled`]: percentiles of all `B·n` resampled
//!   estimates pooled together (an interval for a single estimate). The
//!   tests compare individual estimates against the interval, so this is
//!   their default.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Smallest accepted number of resamples.
pub const MIN_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntervalBasis {
    Statistic,
    #[default]
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSettings {
    /// Number of resamples (B).
    pub resamples: usize,
    /// Resample size (n); `None` means half the sample, rounded up.
    pub subsample: Option<usize>,
    pub alpha: f64,
    pub statistic: Statistic,
    pub basis: IntervalBasis,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            resamples: 1000,
            subsample: None,
            alpha: 0.05,
            statistic: Statistic::Mean,
            basis: IntervalBasis::Pooled,
        }
    }
}

impl BootstrapSettings {
    pub fn resolve_subsample(&self, len: usize) -> usize {
        self.subsample.unwrap_or(len.div_ceil(2))
    }
}

/// Bootstrap summary of one statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    /// Average of the B resampled statistics.
    pub estimate: f64,
    /// 1/(B−1) Σ (stat_b − estimate)².
    pub mc_variance: f64,
    /// Percentile interval of the B resampled statistics.
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub lower: f64,
    pub upper: f64,
    pub point_estimate: f64,
    pub mc_variance: f64,
    pub alpha: f64,
    pub statistic: Statistic,
    pub basis: IntervalBasis,
    pub resamples: usize,
    pub subsample: usize,
    pub mean: StatSummary,
    pub median: StatSummary,
    /// Percentile interval of the pooled resampled estimates.
    pub pooled_lower: f64,
    pub pooled_upper: f64,
}

impl BootstrapCI {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Linear-interpolation percentile of sorted data (Hyndman–Fan type 7).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let a = sorted[lo];
    let b = sorted[hi];
    if a == b {
        a
    } else {
        a + (h - lo as f64) * (b - a)
    }
}

/// Type-7 percentile of the multiset where `sorted[i]` appears `counts[i]` times.
fn weighted_percentile(sorted: &[f64], counts: &[u64], q: f64) -> f64 {
    let total: u64 = counts.iter().sum();
    let h = q * (total - 1) as f64;
    let lo = h.floor() as u64;
    let at = |rank: u64| {
        let mut seen = 0;
        for (v, &c) in sorted.iter().zip(counts) {
            seen += c;
            if rank < seen {
                return *v;
            }
        }
        *sorted.last().unwrap()
    };
    let a = at(lo);
    let b = at((lo + 1).min(total - 1));
    if a == b {
        a
    } else {
        a + (h - lo as f64) * (b - a)
    }
}

struct Resample {
    mean: f64,
    median: f64,
    indices: Vec<u32>,
}

fn draw<R: Rng>(values: &[f64], reference: f64, n: usize, rng: &mut R) -> Resample {
    let indices: Vec<u32> = (0..n)
        .map(|_| rng.random_range(0..values.len()) as u32)
        .collect();
    // Offsets from a fixed reference keep constant inputs exact.
    let mut sample: Vec<f64> = indices.iter().map(|&i| values[i as usize] - reference).collect();
    let mean = reference + sample.iter().sum::<f64>() / n as f64;
    let mid = n / 2;
    let (_, upper_mid, _) = sample.select_nth_unstable_by(mid, f64::total_cmp);
    let upper_mid = *upper_mid;
    let median = if n % 2 == 1 {
        reference + upper_mid
    } else {
        let lower_mid = sample[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        reference + (lower_mid + upper_mid) / 2.0
    };
    Resample {
        mean,
        median,
        indices,
    }
}

fn summarize(mut stats: Vec<f64>, alpha: f64) -> StatSummary {
    let b = stats.len();
    let reference = stats[0];
    let estimate = reference + stats.iter().map(|s| s - reference).sum::<f64>() / b as f64;
    let mc_variance = stats.iter().map(|s| (s - estimate).powi(2)).sum::<f64>() / (b - 1) as f64;
    stats.sort_by(f64::total_cmp);
    StatSummary {
        estimate,
        mc_variance,
        lower: percentile_sorted(&stats, alpha / 2.0),
        upper: percentile_sorted(&stats, 1.0 - alpha / 2.0),
    }
}

/// Percentile bootstrap interval for `values`.
///
/// Resample b draws from stream `(seed, BOOTSTRAP, b)`, so resample index
/// patterns depend only on the seed, the sample length and `n`.
pub fn percentile_bootstrap_ci(
    values: &[f64],
    settings: &BootstrapSettings,
    seed: u64,
) -> Result<BootstrapCI> {
    let n = settings.resolve_subsample(values.len());
    if n < 1 || n >= values.len() {
        return Err(Error::InvalidSettings(format!(
            "resample size {n} must satisfy 1 <= n < {}",
            values.len()
        )));
    }
    if settings.resamples < MIN_RESAMPLES {
        return Err(Error::InvalidSettings(format!(
            "need at least {MIN_RESAMPLES} resamples, got {}",
            settings.resamples
        )));
    }
    if !(settings.alpha > 0.0 && settings.alpha < 1.0) {
        return Err(Error::InvalidSettings(format!("alpha must lie in (0, 1), got {}", settings.alpha)));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSettings("bootstrap input contains non-finite values".into()));
    }
    let reference = values[0];
    let resamples: Vec<Resample> = (0..settings.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, &[tag::BOOTSTRAP, b as u64]);
            draw(values, reference, n, &mut rng)
        })
        .collect();

    let mut counts = vec![0u64; values.len()];
    for r in &resamples {
        for &i in &r.indices {
            counts[i as usize] += 1;
        }
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let sorted_counts: Vec<u64> = order.iter().map(|&i| counts[i]).collect();
    let pooled_lower = weighted_percentile(&sorted, &sorted_counts, settings.alpha / 2.0);
    let pooled_upper = weighted_percentile(&sorted, &sorted_counts, 1.0 - settings.alpha / 2.0);

    let mean = summarize(resamples.iter().map(|r| r.mean).collect(), settings.alpha);
    let median = summarize(resamples.iter().map(|r| r.median).collect(), settings.alpha);
    let chosen = match settings.statistic {
        Statistic::Mean => mean,
        Statistic::Median => median,
    };
    let (lower, upper) = match settings.basis {
        IntervalBasis::Statistic => (chosen.lower, chosen.upper),
        IntervalBasis::Pooled => (pooled_lower, pooled_upper),
    };
    Ok(BootstrapCI {
        lower,
        upper,
        point_estimate: chosen.estimate,
        mc_variance: chosen.mc_variance,
        alpha: settings.alpha,
        statistic: settings.statistic,
        basis: settings.basis,
        resamples: settings.resamples,
        subsample: n,
        mean,
        median,
        pooled_lower,
        pooled_upper,
    })
}
