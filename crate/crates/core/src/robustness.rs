// SPDX-License-Identifier: Apache-2.0

//! Subset breakdowns, run-to-run stability and resampling variability.
//!
//! Resampling here always resamples the evaluation set. It measures how much
//! a metric moves with the choice of test cases, not how much a model moves
//! when retrained on different training data, which an evaluator that only
//! sees predictions cannot observe.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Hypergeometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{self, Cell, CiOptions, ConfusionCounts, Metric, MetricEstimate};
use crate::rng::substream;
use crate::stats;

pub use crate::scle::UNKNOWN_CATEGORY;

/// Smallest expected cell count for which the chi-squared approximation is
/// used; below it the permutation test is used instead.
pub const MIN_EXPECTED_COUNT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetOptions {
    pub ci: CiOptions,
    /// Level of the heterogeneity screen.
    pub alpha: f64,
    pub permutations: usize,
}

impl Default for SubsetOptions {
    fn default() -> Self {
        SubsetOptions {
            ci: CiOptions::default(),
            alpha: 0.05,
            permutations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetCategory {
    pub category: String,
    /// Evaluable cases in the category.
    pub n: usize,
    pub errors: usize,
    pub counts: ConfusionCounts,
    pub estimates: Vec<MetricEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeterogeneityTest {
    ChiSquared,
    Permutation,
    /// Fewer than two categories, or no variation in the error indicator.
    NotApplicable,
}

/// Screen for errors concentrated in some categories: a test of
/// independence between category and the misclassification indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heterogeneity {
    pub test: HeterogeneityTest,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub alpha: f64,
    pub flagged: bool,
    pub permutations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub attribute: String,
    pub overall: Vec<MetricEstimate>,
    pub categories: Vec<SubsetCategory>,
    pub heterogeneity: Heterogeneity,
}

/// Pearson statistic for a k x 2 table given per-category sizes and errors.
fn chi_squared_statistic(sizes: &[u64], errors: &[u64]) -> f64 {
    let n: u64 = sizes.iter().sum();
    let e: u64 = errors.iter().sum();
    if n == 0 || e == 0 || e == n {
        return 0.0;
    }
    let p = e as f64 / n as f64;
    sizes
        .iter()
        .zip(errors)
        .filter(|(&s, _)| s > 0)
        .map(|(&s, &x)| {
            let exp_err = s as f64 * p;
            let exp_ok = s as f64 - exp_err;
            let ok = (s - x) as f64;
            (x as f64 - exp_err).powi(2) / exp_err + (ok - exp_ok).powi(2) / exp_ok
        })
        .sum()
}

fn heterogeneity(sizes: &[u64], errors: &[u64], opts: &SubsetOptions) -> Heterogeneity {
    let n: u64 = sizes.iter().sum();
    let e: u64 = errors.iter().sum();
    let occupied = sizes.iter().filter(|&&s| s > 0).count();
    if occupied < 2 || e == 0 || e == n {
        return Heterogeneity {
            test: HeterogeneityTest::NotApplicable,
            statistic: 0.0,
            df: occupied.saturating_sub(1),
            p_value: 1.0,
            alpha: opts.alpha,
            flagged: false,
            permutations: None,
        };
    }
    let df = occupied - 1;
    let observed = chi_squared_statistic(sizes, errors);
    let p = e as f64 / n as f64;
    let sparse = sizes
        .iter()
        .filter(|&&s| s > 0)
        .any(|&s| (s as f64 * p).min(s as f64 * (1.0 - p)) < MIN_EXPECTED_COUNT);
    let (test, p_value, permutations) = if sparse {
        // shuffling error labels across cases with fixed category sizes is
        // a sequence of hypergeometric draws
        let exceed: usize = (0..opts.permutations as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(opts.ci.seed, "robustness/permutation", i);
                let mut remaining_n = n;
                let mut remaining_e = e;
                let mut perm = Vec::with_capacity(sizes.len());
                for &s in sizes {
                    let x = if s == 0 || remaining_e == 0 {
                        0
                    } else if s == remaining_n {
                        remaining_e
                    } else {
                        Hypergeometric::new(remaining_n, remaining_e, s)
                            .expect("valid hypergeometric")
                            .sample(&mut rng)
                    };
                    perm.push(x);
                    remaining_n -= s;
                    remaining_e -= x;
                }
                usize::from(chi_squared_statistic(sizes, &perm) >= observed * (1.0 - 1e-12))
            })
            .sum();
        (
            HeterogeneityTest::Permutation,
            (1 + exceed) as f64 / (1 + opts.permutations) as f64,
            Some(opts.permutations),
        )
    } else {
        (
            HeterogeneityTest::ChiSquared,
            stats::chi_squared_sf(observed, df as f64),
            None,
        )
    };
    Heterogeneity {
        test,
        statistic: observed,
        df,
        p_value,
        alpha: opts.alpha,
        flagged: p_value < opts.alpha,
        permutations,
    }
}

/// Metrics per category of a subgroup attribute.
///
/// Cases without the attribute fall in [`UNKNOWN_CATEGORY`]. Only
/// Positive/Negative cases are counted, so per-category `n` sums to the
/// number of evaluable cases. The heterogeneity screen uses unweighted case
/// counts.
pub fn subset_metrics(
    dataset: &Dataset,
    attribute: &str,
    metric_list: &[Metric],
    opts: &SubsetOptions,
) -> Result<SubsetReport> {
    if !dataset.cases().iter().any(|c| c.subgroups.contains_key(attribute)) {
        return Err(Error::invalid(format!("no case has subgroup attribute `{attribute}`")));
    }
    let category_of = |c: &crate::datamodel::EvaluationCase| {
        c.subgroups
            .get(attribute)
            .cloned()
            .unwrap_or_else(|| UNKNOWN_CATEGORY.to_string())
    };
    let mut names: Vec<String> = dataset.evaluable().map(|(c, _)| category_of(c)).collect();
    names.sort();
    names.dedup();

    let mut categories = Vec::with_capacity(names.len());
    for name in names {
        let sub = dataset.filter(|c| category_of(c) == name)?;
        let counts = metrics::confusion(&sub)?;
        let n = counts.raw.iter().sum::<u64>() as usize;
        let errors = (counts.raw[1] + counts.raw[2]) as usize;
        let estimates = metrics::estimate_all(&sub, metric_list, &opts.ci)?;
        categories.push(SubsetCategory {
            category: name,
            n,
            errors,
            counts,
            estimates,
        });
    }
    let sizes: Vec<u64> = categories.iter().map(|c| c.n as u64).collect();
    let errors: Vec<u64> = categories.iter().map(|c| c.errors as u64).collect();
    Ok(SubsetReport {
        attribute: attribute.to_string(),
        overall: metrics::estimate_all(dataset, metric_list, &opts.ci)?,
        heterogeneity: heterogeneity(&sizes, &errors, opts),
        categories,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n_cases: usize,
    pub n_runs: usize,
    /// Share of cases labelled identically in every run.
    pub unanimity_rate: f64,
    pub unanimity_stderr: f64,
    /// Mean over cases of the share of run pairs that agree.
    pub pairwise_agreement: f64,
    /// Per case, the number of runs disagreeing with the majority label.
    pub flip_counts: BTreeMap<String, usize>,
}

/// Agreement of labels across repeated runs of a nondeterministic model.
///
/// Every case must carry repeated labels and all cases must have the same
/// number of runs (at least two).
pub fn stability(dataset: &Dataset) -> Result<StabilityReport> {
    let mut n_runs = None;
    let mut unanimous = 0usize;
    let mut pair_sum = 0.0;
    let mut flip_counts = BTreeMap::new();
    for case in dataset.cases() {
        let runs = case
            .repeated_labels
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("case `{}` has no repeated run labels", case.case_id)))?;
        let r = runs.len();
        match n_runs {
            None => n_runs = Some(r),
            Some(m) if m != r => {
                return Err(Error::invalid(format!(
                    "case `{}` has {r} runs but earlier cases have {m}",
                    case.case_id
                )))
            }
            Some(_) => {}
        }
        if r < 2 {
            return Err(Error::invalid("stability needs at least two runs per case"));
        }
        let k = runs.iter().filter(|&&x| x).count();
        let minority = k.min(r - k);
        if minority == 0 {
            unanimous += 1;
        }
        let pairs = |m: usize| (m * m.saturating_sub(1) / 2) as f64;
        pair_sum += (pairs(k) + pairs(r - k)) / pairs(r);
        flip_counts.insert(case.case_id.clone(), minority);
    }
    let n = dataset.len();
    if n == 0 {
        return Err(Error::invalid("stability needs at least one case"));
    }
    let rate = unanimous as f64 / n as f64;
    Ok(StabilityReport {
        n_cases: n,
        n_runs: n_runs.unwrap_or(0),
        unanimity_rate: rate,
        unanimity_stderr: (rate * (1.0 - rate) / n as f64).sqrt(),
        pairwise_agreement: pair_sum / n as f64,
        flip_counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", content = "n", rename_all = "snake_case")]
pub enum ResamplingScheme {
    /// Number of bootstrap resamples.
    Bootstrap(usize),
    /// Number of folds; the metric is computed on each fold.
    KFold(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilitySummary {
    pub metric: Metric,
    pub scheme: ResamplingScheme,
    /// Metric per resample or fold; `None` where its denominator is empty.
    pub values: Vec<Option<f64>>,
    pub n_undefined: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub ci_level: f64,
    pub seed: u64,
}

/// Distribution of a metric over resamples of the evaluation set.
pub fn resampling_variability(
    dataset: &Dataset,
    metric: Metric,
    scheme: ResamplingScheme,
    seed: u64,
    level: f64,
) -> Result<VariabilitySummary> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("level must be in (0, 1)"));
    }
    let values: Vec<Option<f64>> = match scheme {
        ResamplingScheme::Bootstrap(b) => {
            if b == 0 {
                return Err(Error::invalid("bootstrap needs at least one resample"));
            }
            let types = metrics::case_types(dataset)?;
            (0..b as u64)
                .into_par_iter()
                .map(|i| metric.value(&types.resample(&mut substream(seed, "robustness/bootstrap", i))))
                .collect()
        }
        ResamplingScheme::KFold(k) => {
            let cells: Vec<(Cell, f64)> = dataset
                .evaluable()
                .map(|(c, w)| {
                    let predicted = c.predicted.ok_or_else(|| Error::MissingPrediction {
                        case_id: c.case_id.clone(),
                    })?;
                    Ok((Cell::classify(c.reference.as_binary() == Some(true), predicted), w))
                })
                .collect::<Result<_>>()?;
            if k < 2 || k > cells.len() {
                return Err(Error::invalid(format!(
                    "k_fold needs 2 <= k <= {} evaluable cases, got {k}",
                    cells.len()
                )));
            }
            let mut order: Vec<usize> = (0..cells.len()).collect();
            order.shuffle(&mut substream(seed, "robustness/k-fold", 0));
            let mut folds = vec![ConfusionCounts::zero(dataset.is_weighted()); k];
            for (pos, &i) in order.iter().enumerate() {
                let (cell, w) = cells[i];
                folds[pos % k].add(cell, w, 1);
            }
            folds.iter().map(|c| metric.value(c)).collect()
        }
    };
    let mut defined: Vec<f64> = values.iter().flatten().copied().collect();
    let n_undefined = values.len() - defined.len();
    let (mean, sd) = match stats::mean_sd(&defined) {
        Some((m, s)) => (Some(m), Some(s)),
        None => (None, None),
    };
    defined.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(VariabilitySummary {
        metric,
        scheme,
        n_undefined,
        mean,
        sd,
        ci_low: stats::quantile_sorted(&defined, tail),
        ci_high: stats::quantile_sorted(&defined, 1.0 - tail),
        ci_level: level,
        seed,
        values,
    })
}
