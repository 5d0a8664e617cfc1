// SPDX-License-Identifier: Apache-2.0

//! Confusion counts and interval estimates of the core performance metrics.
//!
//! Unweighted proportions get Wilson score intervals. When the dataset
//! carries a sampling design, each case counts `1 / inclusion_probability`
//! (inverse-probability weighting) and intervals come from a seeded case
//! bootstrap with percentile limits.

pub(crate) mod bootstrap;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, ReferenceLabel};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::stats;

pub const DEFAULT_CI_LEVEL: f64 = 0.95;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 2000;

/// One of the four cross-classification cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cell {
    #[serde(rename = "TP")]
    Tp,
    #[serde(rename = "FP")]
    Fp,
    #[serde(rename = "FN")]
    Fn,
    #[serde(rename = "TN")]
    Tn,
}

impl Cell {
    pub const ALL: [Cell; 4] = [Cell::Tp, Cell::Fp, Cell::Fn, Cell::Tn];

    pub fn classify(reference: bool, predicted: bool) -> Cell {
        match (reference, predicted) {
            (true, true) => Cell::Tp,
            (false, true) => Cell::Fp,
            (true, false) => Cell::Fn,
            (false, false) => Cell::Tn,
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cell::Tp => "TP",
            Cell::Fp => "FP",
            Cell::Fn => "FN",
            Cell::Tn => "TN",
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// TP/FP/FN/TN tallies, possibly inverse-probability weighted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tn: f64,
    pub weighted: bool,
    /// Unweighted number of cases per cell, in TP, FP, FN, TN order.
    #[serde(default)]
    pub raw: [u64; 4],
    /// Sum of squared weights per cell, for effective sample sizes.
    #[serde(default)]
    pub sum_sq_weights: [f64; 4],
}

impl ConfusionCounts {
    /// Plain integer counts.
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let raw = [tp, fp, fn_, tn];
        ConfusionCounts {
            tp: tp as f64,
            fp: fp as f64,
            fn_: fn_ as f64,
            tn: tn as f64,
            weighted: false,
            raw,
            sum_sq_weights: raw.map(|k| k as f64),
        }
    }

    pub(crate) fn zero(weighted: bool) -> Self {
        ConfusionCounts {
            tp: 0.0,
            fp: 0.0,
            fn_: 0.0,
            tn: 0.0,
            weighted,
            raw: [0; 4],
            sum_sq_weights: [0.0; 4],
        }
    }

    /// Adds `count` cases of weight `weight` to `cell`.
    pub fn add(&mut self, cell: Cell, weight: f64, count: u64) {
        let total = weight * count as f64;
        match cell {
            Cell::Tp => self.tp += total,
            Cell::Fp => self.fp += total,
            Cell::Fn => self.fn_ += total,
            Cell::Tn => self.tn += total,
        }
        self.raw[cell.index()] += count;
        self.sum_sq_weights[cell.index()] += weight * weight * count as f64;
    }

    pub fn get(&self, cell: Cell) -> f64 {
        match cell {
            Cell::Tp => self.tp,
            Cell::Fp => self.fp,
            Cell::Fn => self.fn_,
            Cell::Tn => self.tn,
        }
    }

    pub fn total(&self) -> f64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Every count multiplied by `factor`, as under a constant-weight design.
    pub fn scaled(&self, factor: f64) -> Self {
        ConfusionCounts {
            tp: self.tp * factor,
            fp: self.fp * factor,
            fn_: self.fn_ * factor,
            tn: self.tn * factor,
            weighted: true,
            raw: self.raw,
            sum_sq_weights: self.sum_sq_weights.map(|s| s * factor * factor),
        }
    }

    /// Positive fraction, `(tp + fn) / total`.
    pub fn prevalence(&self) -> Option<f64> {
        let total = self.total();
        (total > 0.0).then(|| (self.tp + self.fn_) / total)
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
        self.weighted |= other.weighted;
        for i in 0..4 {
            self.raw[i] += other.raw[i];
            self.sum_sq_weights[i] += other.sum_sq_weights[i];
        }
    }
}

/// Metrics that are a proportion of one confusion cell over two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Recall,
    Precision,
    Specificity,
    Npv,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Recall, Metric::Precision, Metric::Specificity, Metric::Npv];

    /// (numerator cell, other denominator cell)
    pub fn cells(self) -> (Cell, Cell) {
        match self {
            Metric::Recall => (Cell::Tp, Cell::Fn),
            Metric::Precision => (Cell::Tp, Cell::Fp),
            Metric::Specificity => (Cell::Tn, Cell::Fp),
            Metric::Npv => (Cell::Tn, Cell::Fn),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Precision => "precision",
            Metric::Specificity => "specificity",
            Metric::Npv => "npv",
        }
    }

    /// Point value, `None` on an empty denominator.
    pub fn value(self, counts: &ConfusionCounts) -> Option<f64> {
        let (num, other) = self.cells();
        let num = counts.get(num);
        let denom = num + counts.get(other);
        (denom > 0.0).then(|| num / denom)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "recall" | "sensitivity" => Ok(Metric::Recall),
            "precision" | "ppv" => Ok(Metric::Precision),
            "specificity" => Ok(Metric::Specificity),
            "npv" => Ok(Metric::Npv),
            other => Err(format!(
                "unknown metric `{other}` (recall, precision, specificity, npv)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Wilson,
    Bootstrap,
    None,
}

/// Point estimate with its confidence interval.
///
/// `value`, `ci_low` and `ci_high` are `None` when the metric's denominator
/// is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub metric: String,
    pub value: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub ci_level: f64,
    pub n_effective: f64,
    pub weighted: bool,
    pub interval: IntervalMethod,
}

impl MetricEstimate {
    pub fn undefined(metric: impl Into<String>, ci_level: f64, weighted: bool) -> Self {
        MetricEstimate {
            metric: metric.into(),
            value: None,
            ci_low: None,
            ci_high: None,
            ci_level,
            n_effective: 0.0,
            weighted,
            interval: IntervalMethod::None,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiOptions {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for CiOptions {
    fn default() -> Self {
        CiOptions {
            level: DEFAULT_CI_LEVEL,
            resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            seed: 0,
        }
    }
}

/// Cross-classifies every Positive/Negative case.
pub fn confusion(dataset: &Dataset) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::zero(dataset.is_weighted());
    for (case, weight) in dataset.evaluable() {
        let predicted = case.predicted.ok_or_else(|| Error::MissingPrediction {
            case_id: case.case_id.clone(),
        })?;
        let reference = case.reference == ReferenceLabel::Positive;
        counts.add(Cell::classify(reference, predicted), weight, 1);
    }
    Ok(counts)
}

/// Estimate from counts alone, with a Wilson interval.
///
/// Weighted counts use the Kish effective sample size of the denominator
/// cells. Prefer [`estimate`] for weighted designs, which bootstraps cases.
pub fn proportion(metric: Metric, counts: &ConfusionCounts, level: f64) -> MetricEstimate {
    let (num_cell, other_cell) = metric.cells();
    let Some(value) = metric.value(counts) else {
        return MetricEstimate::undefined(metric.as_str(), level, counts.weighted);
    };
    let denom = counts.get(num_cell) + counts.get(other_cell);
    let n_effective = if counts.weighted {
        let sq = counts.sum_sq_weights[num_cell.index()] + counts.sum_sq_weights[other_cell.index()];
        if sq > 0.0 {
            denom * denom / sq
        } else {
            denom
        }
    } else {
        denom
    };
    let (lo, hi) = stats::wilson(value * n_effective, n_effective, level).unwrap_or((value, value));
    MetricEstimate {
        metric: metric.as_str().to_string(),
        value: Some(value),
        ci_low: Some(lo.min(value)),
        ci_high: Some(hi.max(value)),
        ci_level: level,
        n_effective,
        weighted: counts.weighted,
        interval: IntervalMethod::Wilson,
    }
}

pub fn recall(counts: &ConfusionCounts) -> MetricEstimate {
    proportion(Metric::Recall, counts, DEFAULT_CI_LEVEL)
}

pub fn precision(counts: &ConfusionCounts) -> MetricEstimate {
    proportion(Metric::Precision, counts, DEFAULT_CI_LEVEL)
}

pub fn specificity(counts: &ConfusionCounts) -> MetricEstimate {
    proportion(Metric::Specificity, counts, DEFAULT_CI_LEVEL)
}

pub fn npv(counts: &ConfusionCounts) -> MetricEstimate {
    proportion(Metric::Npv, counts, DEFAULT_CI_LEVEL)
}

/// Estimates `metric` on a dataset: Wilson for simple random samples, case
/// bootstrap percentile interval for weighted designs.
pub fn estimate(dataset: &Dataset, metric: Metric, options: &CiOptions) -> Result<MetricEstimate> {
    Ok(estimate_all(dataset, &[metric], options)?.remove(0))
}

/// Like [`estimate`] for several metrics, sharing one set of bootstrap
/// resamples.
pub fn estimate_all(dataset: &Dataset, metrics: &[Metric], options: &CiOptions) -> Result<Vec<MetricEstimate>> {
    let counts = confusion(dataset)?;
    if !dataset.is_weighted() {
        return Ok(metrics.iter().map(|&m| proportion(m, &counts, options.level)).collect());
    }
    let types = case_types(dataset)?;
    let replicates = bootstrap_counts(&types, options.resamples, options.seed);
    Ok(metrics
        .iter()
        .map(|&m| bootstrap_estimate(m, &counts, &replicates, options.level))
        .collect())
}

pub(crate) fn case_types(dataset: &Dataset) -> Result<bootstrap::CaseTypes> {
    let mut cells = Vec::with_capacity(dataset.len());
    for (case, weight) in dataset.evaluable() {
        let predicted = case.predicted.ok_or_else(|| Error::MissingPrediction {
            case_id: case.case_id.clone(),
        })?;
        cells.push((
            Cell::classify(case.reference == ReferenceLabel::Positive, predicted),
            weight,
        ));
    }
    Ok(bootstrap::CaseTypes::new(cells, dataset.is_weighted()))
}

pub(crate) fn bootstrap_counts(types: &bootstrap::CaseTypes, resamples: usize, seed: u64) -> Vec<ConfusionCounts> {
    (0..resamples as u64)
        .into_par_iter()
        .map(|i| types.resample(&mut substream(seed, "metrics/bootstrap", i)))
        .collect()
}

fn bootstrap_estimate(
    metric: Metric,
    counts: &ConfusionCounts,
    replicates: &[ConfusionCounts],
    level: f64,
) -> MetricEstimate {
    let base = proportion(metric, counts, level);
    let Some(value) = base.value else {
        return base;
    };
    let mut values: Vec<f64> = replicates.iter().filter_map(|c| metric.value(c)).collect();
    if values.is_empty() {
        return base;
    }
    values.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    let lo = stats::quantile_sorted(&values, alpha / 2.0).unwrap_or(value);
    let hi = stats::quantile_sorted(&values, 1.0 - alpha / 2.0).unwrap_or(value);
    MetricEstimate {
        ci_low: Some(lo.min(value)),
        ci_high: Some(hi.max(value)),
        interval: IntervalMethod::Bootstrap,
        ..base
    }
}

/// `(1 + beta^2) p r / (beta^2 p + r)`.
///
/// Undefined when both inputs are 0; exactly 0 when only one of them is.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> Result<Option<f64>> {
    for (name, v) in [("precision", precision), ("recall", recall)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")));
        }
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    if precision == 0.0 && recall == 0.0 {
        return Ok(None);
    }
    if precision == 0.0 || recall == 0.0 {
        return Ok(Some(0.0));
    }
    let b2 = beta * beta;
    Ok(Some((1.0 + b2) * precision * recall / (b2 * precision + recall)))
}

/// Precision projected to an assumed prevalence with Bayes' theorem:
/// `se·π / (se·π + (1 − sp)(1 − π))`.
pub fn bayes_adjusted_precision(sensitivity: f64, specificity: f64, prevalence: f64) -> Result<Option<f64>> {
    for (name, v) in [
        ("sensitivity", sensitivity),
        ("specificity", specificity),
        ("prevalence", prevalence),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")));
        }
    }
    let true_pos = sensitivity * prevalence;
    let false_pos = (1.0 - specificity) * (1.0 - prevalence);
    let denom = true_pos + false_pos;
    Ok((denom > 0.0).then(|| true_pos / denom))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAtK {
    pub k: usize,
    pub estimate: MetricEstimate,
    /// Ambiguous cases inside the top k, left out of the ratio.
    pub ambiguous_in_top_k: usize,
    /// Score of the k-th ranked case.
    pub cutoff_score: f64,
    /// True when cases tied at the cutoff score fall on both sides of it.
    pub ties_straddle_cut: bool,
}

/// Precision among the `k` highest-scored cases.
///
/// Cases are ranked by descending score, ties broken by ascending
/// `case_id`. Excluded cases are not ranked.
pub fn precision_at_k(dataset: &Dataset, k: usize) -> Result<PrecisionAtK> {
    let mut ranked = Vec::new();
    for (i, case) in dataset.cases().iter().enumerate() {
        if case.reference == ReferenceLabel::Excluded {
            continue;
        }
        let score = case.score.ok_or_else(|| Error::MissingScore {
            case_id: case.case_id.clone(),
        })?;
        ranked.push((score, i));
    }
    if k == 0 || k > ranked.len() {
        return Err(Error::invalid(format!(
            "k must be between 1 and the number of scorable cases ({}), got {k}",
            ranked.len()
        )));
    }
    let cases = dataset.cases();
    ranked.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| cases[a.1].case_id.cmp(&cases[b.1].case_id))
    });

    let mut counts = ConfusionCounts::zero(dataset.is_weighted());
    let mut ambiguous = 0;
    for &(_, i) in &ranked[..k] {
        match cases[i].reference.as_binary() {
            Some(true) => counts.add(Cell::Tp, dataset.weight(i), 1),
            Some(false) => counts.add(Cell::Fp, dataset.weight(i), 1),
            None => ambiguous += 1,
        }
    }
    let cutoff_score = ranked[k - 1].0;
    let ties_straddle_cut = ranked.get(k).is_some_and(|next| next.0 == cutoff_score);
    let mut estimate = proportion(Metric::Precision, &counts, DEFAULT_CI_LEVEL);
    estimate.metric = format!("precision@{k}");
    Ok(PrecisionAtK {
        k,
        estimate,
        ambiguous_in_top_k: ambiguous,
        cutoff_score,
        ties_straddle_cut,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concordance {
    pub n: usize,
    pub concordance: f64,
    pub override_rate: f64,
}

/// Agreement between human final decisions and model predictions.
pub fn concordance_and_override(dataset: &Dataset, human_labels: &BTreeMap<String, bool>) -> Result<Concordance> {
    if human_labels.is_empty() {
        return Err(Error::invalid("no human decisions supplied"));
    }
    let index = dataset.index_of();
    let mut agree = 0usize;
    for (case_id, &human) in human_labels {
        let &i = index
            .get(case_id.as_str())
            .ok_or_else(|| Error::invalid(format!("human label for unknown case_id `{case_id}`")))?;
        let case = &dataset.cases()[i];
        let model = case.predicted.ok_or_else(|| Error::MissingPrediction {
            case_id: case.case_id.clone(),
        })?;
        agree += usize::from(model == human);
    }
    let n = human_labels.len();
    let concordance = agree as f64 / n as f64;
    Ok(Concordance {
        n,
        concordance,
        override_rate: (n - agree) as f64 / n as f64,
    })
}

/// Model against benchmark on the same cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkComparison {
    pub model: Vec<MetricEstimate>,
    pub benchmark: Vec<MetricEstimate>,
    /// Model+ / Benchmark− cases.
    pub model_only_flags: usize,
    /// Model− / Benchmark+ cases.
    pub benchmark_only_flags: usize,
    /// Evaluable cases only the model classifies correctly.
    pub model_only_correct: usize,
    /// Evaluable cases only the benchmark classifies correctly.
    pub benchmark_only_correct: usize,
    /// Exact two-sided McNemar p-value on the discordant correct cases.
    pub mcnemar_p_value: f64,
}

/// Paired comparison of model and benchmark predictions.
pub fn benchmark_comparison(dataset: &Dataset, options: &CiOptions) -> Result<BenchmarkComparison> {
    let mut model_only_flags = 0;
    let mut benchmark_only_flags = 0;
    let mut model_only_correct = 0u64;
    let mut benchmark_only_correct = 0u64;
    for case in dataset.cases() {
        if case.reference == ReferenceLabel::Excluded {
            continue;
        }
        let model = case.predicted.ok_or_else(|| Error::MissingPrediction {
            case_id: case.case_id.clone(),
        })?;
        let bench = case
            .benchmark_predicted
            .ok_or_else(|| Error::invalid(format!("case `{}` has no benchmark prediction", case.case_id)))?;
        match (model, bench) {
            (true, false) => model_only_flags += 1,
            (false, true) => benchmark_only_flags += 1,
            _ => {}
        }
        if let Some(reference) = case.reference.as_binary() {
            match (model == reference, bench == reference) {
                (true, false) => model_only_correct += 1,
                (false, true) => benchmark_only_correct += 1,
                _ => {}
            }
        }
    }
    let discordant = model_only_correct + benchmark_only_correct;
    let mcnemar_p_value = if discordant == 0 {
        1.0
    } else {
        let probs = stats::binomial_pmf(discordant, 0.5);
        stats::two_sided_tail(&probs, model_only_correct as usize).p_value()
    };
    let as_benchmark = dataset.map_cases(|c| {
        let mut out = c.clone();
        if c.reference != ReferenceLabel::Excluded {
            out.predicted = c.benchmark_predicted;
        }
        Ok(out)
    })?;
    Ok(BenchmarkComparison {
        model: estimate_all(dataset, &Metric::ALL, options)?,
        benchmark: estimate_all(&as_benchmark, &Metric::ALL, options)?,
        model_only_flags,
        benchmark_only_flags,
        model_only_correct: model_only_correct as usize,
        benchmark_only_correct: benchmark_only_correct as usize,
        mcnemar_p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{EvaluationCase, StratumSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn labelled(id: usize, reference: bool, predicted: bool) -> EvaluationCase {
        let r = if reference {
            ReferenceLabel::Positive
        } else {
            ReferenceLabel::Negative
        };
        EvaluationCase::new(format!("c{id:03}"), r).with_predicted(predicted)
    }

    fn example_cases() -> Vec<EvaluationCase> {
        let mut cases = Vec::new();
        let spec = [(true, true, 2), (true, false, 1), (false, true, 1), (false, false, 6)];
        for (r, p, n) in spec {
            for _ in 0..n {
                cases.push(labelled(cases.len(), r, p));
            }
        }
        cases
    }

    #[test]
    fn confusion_direct_count() {
        let ds = Dataset::from_cases(example_cases()).unwrap();
        let c = confusion(&ds).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2.0, 1.0, 1.0, 6.0));
        assert!(!c.weighted);
    }

    #[test]
    fn confusion_uniform_weights_double_counts() {
        let cases = example_cases().into_iter().map(|c| c.with_stratum("all")).collect();
        let ds = Dataset::new(cases, vec![StratumSpec::new("all", 0.5)], Default::default()).unwrap();
        let c = confusion(&ds).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (4.0, 2.0, 2.0, 12.0));
        assert!(c.weighted);
        let plain = confusion(&Dataset::from_cases(example_cases()).unwrap()).unwrap();
        for m in Metric::ALL {
            assert_eq!(m.value(&c), m.value(&plain));
        }
    }

    #[test]
    fn ambiguous_and_excluded_never_count() {
        let mut cases = example_cases();
        cases.push(EvaluationCase::new("amb", ReferenceLabel::Ambiguous).with_predicted(true));
        cases.push(EvaluationCase::new("exc", ReferenceLabel::Excluded));
        cases.last_mut().unwrap().score = Some(0.1);
        let c = confusion(&Dataset::from_cases(cases).unwrap()).unwrap();
        assert_eq!(c.total(), 10.0);
    }

    #[test]
    fn missing_prediction_names_case() {
        let mut cases = example_cases();
        cases.push(EvaluationCase::new("noprd", ReferenceLabel::Positive).with_score(0.3));
        let err = confusion(&Dataset::from_cases(cases).unwrap()).unwrap_err();
        assert!(matches!(err, Error::MissingPrediction { case_id } if case_id == "noprd"));
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall(&ConfusionCounts::new(75, 0, 25, 0)).value, Some(0.75));
        assert_eq!(recall(&ConfusionCounts::new(0, 3, 0, 9)).value, None);
        assert_relative_eq!(
            recall(&ConfusionCounts::new(178, 0, 1, 0)).value.unwrap(),
            0.994_413_407_8,
            epsilon = 1e-9
        );
    }

    #[test]
    fn precision_specificity_npv_examples() {
        assert_eq!(precision(&ConfusionCounts::new(55, 45, 0, 0)).value, Some(0.55));
        assert_eq!(precision(&ConfusionCounts::new(0, 0, 4, 4)).value, None);
        assert_eq!(specificity(&ConfusionCounts::new(0, 5, 0, 9995)).value, Some(0.9995));
        assert_eq!(specificity(&ConfusionCounts::new(0, 0, 0, 7)).value, Some(1.0));
        assert_eq!(specificity(&ConfusionCounts::new(0, 2, 0, 98)).value, Some(0.98));
        assert_eq!(npv(&ConfusionCounts::new(0, 0, 0, 6)).value, Some(1.0));
        assert_eq!(npv(&ConfusionCounts::new(3, 3, 0, 0)).value, None);
        assert_eq!(
            npv(&ConfusionCounts::new(0, 0, 1, 263_093)).value,
            Some(263_093.0 / 263_094.0)
        );
    }

    #[test]
    fn undefined_estimates_carry_no_interval() {
        let e = recall(&ConfusionCounts::new(0, 1, 0, 1));
        assert!(!e.is_defined());
        assert!(e.ci_low.is_none() && e.ci_high.is_none());
        let json = serde_json::to_value(&e).unwrap();
        assert!(json["value"].is_null());
    }

    #[test]
    fn f_beta_examples() {
        assert_eq!(f_beta(0.5, 0.5, 1.0).unwrap(), Some(0.5));
        assert_eq!(f_beta(1.0, 0.0, 1.0).unwrap(), Some(0.0));
        assert_eq!(f_beta(0.0, 0.0, 1.0).unwrap(), None);
        let expected = 2.0 * 0.55 * 0.994 / (0.55 + 0.994);
        assert_relative_eq!(f_beta(0.55, 0.994, 1.0).unwrap().unwrap(), expected, epsilon = 1e-15);
        assert_relative_eq!(expected, 0.708, epsilon = 5e-4);
        assert!(f_beta(0.5, 0.5, 0.0).is_err());
        assert!(f_beta(1.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn bayes_projection_examples() {
        let se = 178.0 / 179.0;
        let prevalence = 179.0 / 263_451.0;
        let p = bayes_adjusted_precision(se, 0.9995, prevalence).unwrap().unwrap();
        assert!((p - 0.57).abs() < 0.01, "{p}");
        assert!((p - 0.55).abs() <= 0.05);
        let p = bayes_adjusted_precision(se, 0.98, prevalence).unwrap().unwrap();
        assert!((p - 0.033).abs() < 0.001, "{p}");
        assert_eq!(bayes_adjusted_precision(0.3, 1.0, 0.001).unwrap(), Some(1.0));
        assert_eq!(bayes_adjusted_precision(0.0, 1.0, 0.5).unwrap(), None);
        assert!(bayes_adjusted_precision(0.5, 1.2, 0.5).is_err());
    }

    fn scored(id: &str, r: ReferenceLabel, s: f64) -> EvaluationCase {
        EvaluationCase::new(id, r).with_score(s)
    }

    #[test]
    fn precision_at_k_examples() {
        let ds = Dataset::from_cases(vec![
            scored("a", ReferenceLabel::Positive, 0.9),
            scored("b", ReferenceLabel::Negative, 0.8),
            scored("c", ReferenceLabel::Positive, 0.7),
        ])
        .unwrap();
        assert_eq!(precision_at_k(&ds, 2).unwrap().estimate.value, Some(0.5));
        // full dataset: prevalence among labelled cases
        assert_eq!(precision_at_k(&ds, 3).unwrap().estimate.value, Some(2.0 / 3.0));
        assert!(precision_at_k(&ds, 4).is_err());
        assert!(precision_at_k(&ds, 0).is_err());
    }

    #[test]
    fn precision_at_k_ties_and_ambiguous() {
        let ds = Dataset::from_cases(vec![
            scored("b", ReferenceLabel::Negative, 0.5),
            scored("a", ReferenceLabel::Positive, 0.5),
            scored("z", ReferenceLabel::Ambiguous, 0.9),
            scored("x", ReferenceLabel::Excluded, 1.0),
        ])
        .unwrap();
        let p = precision_at_k(&ds, 2).unwrap();
        // x is not ranked; z is ambiguous; a wins the tie over b by case_id
        assert_eq!(p.ambiguous_in_top_k, 1);
        assert_eq!(p.estimate.value, Some(1.0));
        assert!(p.ties_straddle_cut);
        assert!(!precision_at_k(&ds, 3).unwrap().ties_straddle_cut);

        let unscored = Dataset::from_cases(vec![
            EvaluationCase::new("q", ReferenceLabel::Positive).with_predicted(true)
        ])
        .unwrap();
        assert!(matches!(precision_at_k(&unscored, 1), Err(Error::MissingScore { .. })));
    }

    #[test]
    fn concordance_examples() {
        let cases: Vec<_> = (0..10).map(|i| labelled(i, i % 2 == 0, i < 5)).collect();
        let ds = Dataset::from_cases(cases.clone()).unwrap();
        let same: BTreeMap<_, _> = cases
            .iter()
            .map(|c| (c.case_id.clone(), c.predicted.unwrap()))
            .collect();
        let r = concordance_and_override(&ds, &same).unwrap();
        assert_eq!((r.concordance, r.override_rate), (1.0, 0.0));
        let flipped: BTreeMap<_, _> = same.iter().map(|(k, v)| (k.clone(), !v)).collect();
        assert_eq!(concordance_and_override(&ds, &flipped).unwrap().concordance, 0.0);
        let mut three = same.clone();
        for id in ["c000", "c004", "c009"] {
            let v = three.get_mut(id).unwrap();
            *v = !*v;
        }
        // direct count: 3 of 10 differ
        let expected = cases
            .iter()
            .filter(|c| three[&c.case_id] != c.predicted.unwrap())
            .count() as f64
            / 10.0;
        assert_relative_eq!(concordance_and_override(&ds, &three).unwrap().override_rate, expected);
        assert_relative_eq!(expected, 0.30);
        let mut unknown = same;
        unknown.insert("nope".into(), true);
        assert!(concordance_and_override(&ds, &unknown).is_err());
    }

    #[test]
    fn benchmark_comparison_counts_disagreements() {
        let cases = vec![
            labelled(0, true, true).with_benchmark(false),
            labelled(1, true, true).with_benchmark(false),
            labelled(2, false, false).with_benchmark(true),
            labelled(3, true, false).with_benchmark(false),
            labelled(4, false, true).with_benchmark(true),
        ];
        let ds = Dataset::from_cases(cases).unwrap();
        let cmp = benchmark_comparison(&ds, &CiOptions::default()).unwrap();
        assert_eq!((cmp.model_only_flags, cmp.benchmark_only_flags), (2, 1));
        assert_eq!((cmp.model_only_correct, cmp.benchmark_only_correct), (3, 0));
        // exact McNemar: 2 * 0.5^3
        assert_relative_eq!(cmp.mcnemar_p_value, 0.25, epsilon = 1e-12);
        assert_eq!(cmp.model[0].value, Some(2.0 / 3.0));
        assert_eq!(cmp.benchmark[0].value, Some(0.0));
    }

    #[test]
    fn weighted_estimates_are_bootstrapped_and_seeded() {
        let mut cases = Vec::new();
        for i in 0..400 {
            let positive = i % 4 == 0;
            let predicted = if positive { i % 3 != 0 } else { i % 7 == 0 };
            cases.push(labelled(i, positive, predicted).with_stratum(if positive { "pos" } else { "neg" }));
        }
        let ds = Dataset::new(
            cases,
            vec![StratumSpec::new("pos", 1.0), StratumSpec::new("neg", 0.1)],
            Default::default(),
        )
        .unwrap();
        let opts = CiOptions {
            seed: 9,
            ..Default::default()
        };
        let a = estimate_all(&ds, &Metric::ALL, &opts).unwrap();
        let b = estimate_all(&ds, &Metric::ALL, &opts).unwrap();
        assert_eq!(a, b);
        for e in &a {
            assert_eq!(e.interval, IntervalMethod::Bootstrap);
            let v = e.value.unwrap();
            assert!(e.ci_low.unwrap() <= v && v <= e.ci_high.unwrap());
        }
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_uniform_scaling(
            tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500, k in 0.01f64..100.0
        ) {
            let c = ConfusionCounts::new(tp, fp, fn_, tn);
            let s = c.scaled(k);
            for m in Metric::ALL {
                match (m.value(&c), m.value(&s)) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                    (None, None) => {}
                    other => prop_assert!(false, "{:?}", other),
                }
            }
        }

        #[test]
        fn f1_symmetric_and_bounded(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let a = f_beta(p, r, 1.0).unwrap();
            let b = f_beta(r, p, 1.0).unwrap();
            prop_assert_eq!(a.map(|v| (v * 1e12).round()), b.map(|v| (v * 1e12).round()));
            if let Some(f) = a {
                prop_assert!(f >= p.min(r) - 1e-12 && f <= p.max(r) + 1e-12);
            }
        }

        #[test]
        fn bayes_projection_monotone(
            se in 0.01f64..0.99, sp in 0.01f64..0.99, pi in 0.01f64..0.99, d in 0.001f64..0.009
        ) {
            let base = bayes_adjusted_precision(se, sp, pi).unwrap().unwrap();
            prop_assert!(bayes_adjusted_precision(se + d, sp, pi).unwrap().unwrap() >= base);
            prop_assert!(bayes_adjusted_precision(se, sp + d, pi).unwrap().unwrap() >= base);
            prop_assert!(bayes_adjusted_precision(se, sp, pi + d).unwrap().unwrap() >= base);
        }

        #[test]
        fn bayes_projection_reproduces_sample_precision(
            tp in 1u64..1000, fp in 0u64..1000, fn_ in 0u64..1000, tn in 1u64..1000
        ) {
            let c = ConfusionCounts::new(tp, fp, fn_, tn);
            let se = Metric::Recall.value(&c).unwrap();
            let sp = Metric::Specificity.value(&c).unwrap();
            let pi = c.prevalence().unwrap();
            let projected = bayes_adjusted_precision(se, sp, pi).unwrap().unwrap();
            prop_assert!((projected - Metric::Precision.value(&c).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn wilson_interval_contains_estimate(num in 0u64..300, extra in 0u64..300) {
            let e = recall(&ConfusionCounts::new(num, 0, extra, 0));
            if let Some(v) = e.value {
                prop_assert!(e.ci_low.unwrap() <= v && v <= e.ci_high.unwrap());
                prop_assert!(e.ci_low.unwrap() >= 0.0 && e.ci_high.unwrap() <= 1.0);
            }
        }
    }
}
