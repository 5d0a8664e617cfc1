// SPDX-License-Identifier: Apache-2.0

//! Structured case-level examination.
//!
//! Reviewers examine stratified random samples of false positives, false
//! negatives and true positives (optionally true negatives). The workflow is
//! [`draw_sample`], [`emit_review_sheet`], manual annotation,
//! [`ingest_annotations`] and [`aggregate`]. Corrected reference labels are
//! applied separately with [`apply_verdicts`].

mod sheet;
mod summary;

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{Dataset, ReferenceLabel};
use crate::error::{Error, Result};
use crate::metrics::Cell;
use crate::rng::substream;

pub use sheet::{emit_review_sheet, ingest_annotations, IngestedSheet, TAG_COLUMNS};
pub use summary::{
    aggregate, apply_verdicts, render_summary_markdown, CellSummary, NeverEventItem, RemedialAction, ScleSummary,
    TagFrequency, TrivialityRate,
};

/// Category used for cases without a value for a substratification attribute.
pub const UNKNOWN_CATEGORY: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScleConfig {
    #[serde(default)]
    pub n_fp: usize,
    #[serde(default)]
    pub n_fn: usize,
    #[serde(default)]
    pub n_tp: usize,
    #[serde(default)]
    pub n_tn: usize,
    /// Subgroup attributes to allocate proportionally across.
    #[serde(default)]
    pub substratify_by: Vec<String>,
    /// Number of equal-frequency bins of distance to the decision threshold.
    #[serde(default)]
    pub boundary_bins: Option<usize>,
    /// Threshold for boundary bins; defaults to the one recorded on the dataset.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub benchmark_mode: bool,
    #[serde(default = "one")]
    pub disagreement_oversample_factor: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl Default for ScleConfig {
    fn default() -> Self {
        ScleConfig {
            n_fp: 0,
            n_fn: 0,
            n_tp: 0,
            n_tn: 0,
            substratify_by: Vec::new(),
            boundary_bins: None,
            threshold: None,
            benchmark_mode: false,
            disagreement_oversample_factor: 1.0,
            seed: 0,
        }
    }
}

impl ScleConfig {
    pub fn new(n_fp: usize, n_fn: usize, n_tp: usize, seed: u64) -> Self {
        ScleConfig {
            n_fp,
            n_fn,
            n_tp,
            seed,
            ..ScleConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_fp + self.n_fn + self.n_tp == 0 {
            return Err(Error::invalid("at least one of n_fp, n_fn, n_tp must be positive"));
        }
        if !(self.disagreement_oversample_factor >= 1.0 && self.disagreement_oversample_factor.is_finite()) {
            return Err(Error::invalid(
                "disagreement_oversample_factor must be a finite number >= 1",
            ));
        }
        if self.boundary_bins == Some(0) {
            return Err(Error::invalid("boundary_bins must be positive"));
        }
        Ok(())
    }

    pub fn budget(&self) -> usize {
        self.n_fp + self.n_fn + self.n_tp + self.n_tn
    }
}

/// Model-by-benchmark cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BenchmarkCell {
    #[serde(rename = "M+B+")]
    BothPositive,
    #[serde(rename = "M+B-")]
    ModelOnly,
    #[serde(rename = "M-B+")]
    BenchmarkOnly,
    #[serde(rename = "M-B-")]
    BothNegative,
}

impl BenchmarkCell {
    pub const ALL: [BenchmarkCell; 4] = [
        BenchmarkCell::BothPositive,
        BenchmarkCell::ModelOnly,
        BenchmarkCell::BenchmarkOnly,
        BenchmarkCell::BothNegative,
    ];

    pub fn classify(model: bool, benchmark: bool) -> Self {
        match (model, benchmark) {
            (true, true) => BenchmarkCell::BothPositive,
            (true, false) => BenchmarkCell::ModelOnly,
            (false, true) => BenchmarkCell::BenchmarkOnly,
            (false, false) => BenchmarkCell::BothNegative,
        }
    }

    pub fn is_disagreement(self) -> bool {
        matches!(self, BenchmarkCell::ModelOnly | BenchmarkCell::BenchmarkOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkCell::BothPositive => "M+B+",
            BenchmarkCell::ModelOnly => "M+B-",
            BenchmarkCell::BenchmarkOnly => "M-B+",
            BenchmarkCell::BothNegative => "M-B-",
        }
    }
}

impl fmt::Display for BenchmarkCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Diagnostic category tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticTag {
    NeverEvent,
    UnexpectedError,
    InputDataIssue,
    TestSetIssue,
}

impl DiagnosticTag {
    pub const ALL: [DiagnosticTag; 4] = [
        DiagnosticTag::NeverEvent,
        DiagnosticTag::UnexpectedError,
        DiagnosticTag::InputDataIssue,
        DiagnosticTag::TestSetIssue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticTag::NeverEvent => "never_event",
            DiagnosticTag::UnexpectedError => "unexpected_error",
            DiagnosticTag::InputDataIssue => "input_data_issue",
            DiagnosticTag::TestSetIssue => "test_set_issue",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Triviality {
    Trivial,
    NonTrivial,
    Unclear,
}

impl Triviality {
    pub fn as_str(self) -> &'static str {
        match self {
            Triviality::Trivial => "trivial",
            Triviality::NonTrivial => "non_trivial",
            Triviality::Unclear => "unclear",
        }
    }
}

impl std::str::FromStr for Triviality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "trivial" => Ok(Triviality::Trivial),
            "non_trivial" | "non-trivial" | "nontrivial" => Ok(Triviality::NonTrivial),
            "unclear" => Ok(Triviality::Unclear),
            other => Err(format!("unknown triviality `{other}` (trivial, non_trivial, unclear)")),
        }
    }
}

/// One sampled case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScleRow {
    pub case_id: String,
    pub classification_cell: Cell,
    #[serde(default)]
    pub benchmark_cell: Option<BenchmarkCell>,
    /// Substratification labels, including `boundary_bin` when binned.
    #[serde(default)]
    pub strata: BTreeMap<String, String>,
    /// Cell population size over cell sample size.
    pub sampling_weight: f64,
}

impl ScleRow {
    /// The cell the row was sampled from.
    pub fn sampling_cell(&self) -> String {
        match self.benchmark_cell {
            Some(b) => b.as_str().to_string(),
            None => self.classification_cell.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortfall {
    pub cell: String,
    pub requested: usize,
    pub available: usize,
}

impl fmt::Display for Shortfall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cell {}: {} of {} requested cases available",
            self.cell, self.available, self.requested
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScleSample {
    pub rows: Vec<ScleRow>,
    /// Cases available per sampling cell.
    pub cell_population: BTreeMap<String, usize>,
    /// Requested (allocated) cases per sampling cell.
    pub cell_requested: BTreeMap<String, usize>,
    pub cell_sample_size: BTreeMap<String, usize>,
    pub shortfalls: Vec<Shortfall>,
    pub config: ScleConfig,
    pub seed: u64,
    /// SHA-256 over the configuration and the sampled case ids.
    pub config_hash: String,
}

impl ScleSample {
    pub fn warnings(&self) -> Vec<String> {
        self.shortfalls.iter().map(|s| s.to_string()).collect()
    }

    pub fn row(&self, case_id: &str) -> Option<&ScleRow> {
        self.rows.iter().find(|r| r.case_id == case_id)
    }
}

/// A case eligible for sampling, with its sampling cell key.
struct Candidate {
    index: usize,
    cell: Cell,
    benchmark: Option<BenchmarkCell>,
}

/// Splits `total` across `sizes` in proportion, rounding by largest
/// remainder. Ties in the remainder go to the earlier entry.
pub fn largest_remainder(total: usize, sizes: &[usize]) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    if sum == 0 {
        return vec![0; sizes.len()];
    }
    let total = total.min(sum);
    let quotas: Vec<f64> = sizes.iter().map(|&s| total as f64 * s as f64 / sum as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = total - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        if alloc[i] < sizes[i] {
            alloc[i] += 1;
            left -= 1;
        }
    }
    alloc
}

/// Randomized systematic rounding of real quotas summing to an integer:
/// each entry's expected count equals its quota and the total is exact.
fn systematic_round<R: Rng + ?Sized>(quotas: &[f64], rng: &mut R) -> Vec<usize> {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut prev = u.floor() as i64;
    quotas
        .iter()
        .map(|&q| {
            cumulative += q;
            let next = (cumulative + u + 1e-9).floor() as i64;
            let k = (next - prev).max(0) as usize;
            prev = next;
            k
        })
        .collect()
}

/// Draws the stratified review sample.
///
/// Cells are sampled uniformly without replacement, each from its own
/// seeded stream. In benchmark mode the sampling cells are the four
/// model-by-benchmark cells: the total budget is split across them with
/// relative weight `disagreement_oversample_factor` for the two
/// disagreement cells and 1 for the agreement cells, using randomized
/// systematic rounding so expected counts follow the weights exactly.
/// Only cases with a Positive or Negative reference are sampled.
pub fn draw_sample(dataset: &Dataset, config: &ScleConfig) -> Result<ScleSample> {
    config.validate()?;
    let mut candidates = Vec::new();
    for (index, case) in dataset.cases().iter().enumerate() {
        let Some(reference) = case.reference.as_binary() else {
            continue;
        };
        let predicted = case.predicted.ok_or_else(|| Error::MissingPrediction {
            case_id: case.case_id.clone(),
        })?;
        let benchmark = if config.benchmark_mode {
            let b = case.benchmark_predicted.ok_or_else(|| {
                Error::invalid(format!(
                    "benchmark mode needs benchmark labels; case `{}` has none",
                    case.case_id
                ))
            })?;
            Some(BenchmarkCell::classify(predicted, b))
        } else {
            None
        };
        candidates.push(Candidate {
            index,
            cell: Cell::classify(reference, predicted),
            benchmark,
        });
    }

    let threshold = match config.boundary_bins {
        Some(_) => Some(
            config
                .threshold
                .or_else(|| dataset.recorded_threshold())
                .ok_or_else(|| {
                    Error::invalid("boundary_bins needs a threshold in the config or recorded on the dataset")
                })?,
        ),
        None => None,
    };

    // (cell key, requested count, members)
    let mut cells: Vec<(String, usize, Vec<&Candidate>)> = Vec::new();
    if config.benchmark_mode {
        let f = config.disagreement_oversample_factor;
        let weights: Vec<f64> = BenchmarkCell::ALL
            .iter()
            .map(|b| if b.is_disagreement() { f } else { 1.0 })
            .collect();
        let total_weight: f64 = weights.iter().sum();
        let quotas: Vec<f64> = weights
            .iter()
            .map(|w| config.budget() as f64 * w / total_weight)
            .collect();
        let counts = systematic_round(&quotas, &mut substream(config.seed, "scle/allocation", 0));
        for (b, requested) in BenchmarkCell::ALL.into_iter().zip(counts) {
            let members = candidates.iter().filter(|c| c.benchmark == Some(b)).collect();
            cells.push((b.as_str().to_string(), requested, members));
        }
    } else {
        for (cell, requested) in [
            (Cell::Fp, config.n_fp),
            (Cell::Fn, config.n_fn),
            (Cell::Tp, config.n_tp),
            (Cell::Tn, config.n_tn),
        ] {
            let members = candidates.iter().filter(|c| c.cell == cell).collect();
            cells.push((cell.as_str().to_string(), requested, members));
        }
    }

    let mut sample = ScleSample {
        rows: Vec::new(),
        cell_population: BTreeMap::new(),
        cell_requested: BTreeMap::new(),
        cell_sample_size: BTreeMap::new(),
        shortfalls: Vec::new(),
        config: config.clone(),
        seed: config.seed,
        config_hash: String::new(),
    };
    for (key, requested, members) in cells {
        let population = members.len();
        sample.cell_population.insert(key.clone(), population);
        sample.cell_requested.insert(key.clone(), requested);
        if requested > population {
            sample.shortfalls.push(Shortfall {
                cell: key.clone(),
                requested,
                available: population,
            });
        }
        let take = requested.min(population);
        let mut rows = sample_cell(dataset, &key, &members, take, config, threshold)?;
        sample.cell_sample_size.insert(key.clone(), rows.len());
        let weight = if rows.is_empty() {
            0.0
        } else {
            population as f64 / rows.len() as f64
        };
        for row in &mut rows {
            row.sampling_weight = weight;
        }
        sample.rows.extend(rows);
    }
    sample.config_hash = config_hash(&sample.config, &sample.rows);
    Ok(sample)
}

fn sample_cell(
    dataset: &Dataset,
    key: &str,
    members: &[&Candidate],
    take: usize,
    config: &ScleConfig,
    threshold: Option<f64>,
) -> Result<Vec<ScleRow>> {
    if take == 0 {
        return Ok(Vec::new());
    }
    let cases = dataset.cases();
    let mut labels: Vec<BTreeMap<String, String>> = members
        .iter()
        .map(|c| {
            config
                .substratify_by
                .iter()
                .map(|attr| {
                    let value = cases[c.index]
                        .subgroups
                        .get(attr)
                        .cloned()
                        .unwrap_or_else(|| UNKNOWN_CATEGORY.to_string());
                    (attr.clone(), value)
                })
                .collect()
        })
        .collect();

    let mut top_bin = None;
    if let (Some(bins), Some(t)) = (config.boundary_bins, threshold) {
        let mut by_distance: Vec<(f64, usize)> = Vec::with_capacity(members.len());
        for (pos, c) in members.iter().enumerate() {
            let case = &cases[c.index];
            let score = case.score.ok_or_else(|| Error::MissingScore {
                case_id: case.case_id.clone(),
            })?;
            by_distance.push(((score - t).abs(), pos));
        }
        by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let n = by_distance.len();
        let bins = bins.min(n);
        for (rank, &(_, pos)) in by_distance.iter().enumerate() {
            let bin = rank * bins / n;
            labels[pos].insert("boundary_bin".to_string(), (bin + 1).to_string());
        }
        top_bin = Some(bins.to_string());
    }

    // group members by stratum label set
    let mut strata: BTreeMap<&BTreeMap<String, String>, Vec<usize>> = BTreeMap::new();
    for (pos, l) in labels.iter().enumerate() {
        strata.entry(l).or_default().push(pos);
    }
    let keys: Vec<_> = strata.keys().copied().collect();
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let mut alloc = largest_remainder(take, &sizes);
    if let Some(top) = &top_bin {
        let is_top = |k: &BTreeMap<String, String>| k.get("boundary_bin") == Some(top);
        let top_total: usize = keys.iter().zip(&alloc).filter(|(k, _)| is_top(k)).map(|(_, a)| a).sum();
        if top_total == 0 {
            // move one case from the largest allocation into the largest top stratum
            let donor = (0..alloc.len()).max_by_key(|&i| (alloc[i], std::cmp::Reverse(i)));
            let receiver = (0..keys.len())
                .filter(|&i| is_top(keys[i]))
                .max_by_key(|&i| (sizes[i], std::cmp::Reverse(i)));
            if let (Some(d), Some(r)) = (donor, receiver) {
                alloc[d] -= 1;
                alloc[r] += 1;
            }
        }
    }

    let mut picked: Vec<(usize, &BTreeMap<String, String>)> = Vec::new();
    for (s, ((label, positions), &k)) in strata.iter().zip(&alloc).enumerate() {
        if k == 0 {
            continue;
        }
        let mut rng = substream(config.seed, &format!("scle/cell/{key}"), s as u64);
        for i in index::sample(&mut rng, positions.len(), k) {
            picked.push((positions[i], *label));
        }
    }
    picked.sort_by_key(|&(pos, _)| members[pos].index);
    Ok(picked
        .into_iter()
        .map(|(pos, label)| {
            let c = members[pos];
            ScleRow {
                case_id: cases[c.index].case_id.clone(),
                classification_cell: c.cell,
                benchmark_cell: c.benchmark,
                strata: label.clone(),
                sampling_weight: 0.0,
            }
        })
        .collect())
}

fn config_hash(config: &ScleConfig, rows: &[ScleRow]) -> String {
    let ids: Vec<&str> = rows.iter().map(|r| r.case_id.as_str()).collect();
    let payload = serde_json::json!({ "config": config, "case_ids": ids });
    let digest = Sha256::digest(payload.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// A reviewer's record for one sampled case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScleAnnotation {
    pub case_id: String,
    #[serde(default)]
    pub reviewer: String,
    #[serde(default)]
    pub tags: Vec<DiagnosticTag>,
    #[serde(default)]
    pub triviality: Option<Triviality>,
    #[serde(default)]
    pub note: Option<String>,
    /// Corrected reference label proposed by the reviewer.
    #[serde(default)]
    pub verdict: Option<ReferenceLabel>,
}

impl ScleAnnotation {
    pub fn has(&self, tag: DiagnosticTag) -> bool {
        self.tags.contains(&tag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::EvaluationCase;

    /// 6 TP, 5 FP, 4 FN, 20 TN
    fn dataset() -> Dataset {
        let mut cases = Vec::new();
        let mut push = |n: usize, reference: ReferenceLabel, predicted: bool, prefix: &str| {
            for i in 0..n {
                cases.push(
                    EvaluationCase::new(format!("{prefix}{i}"), reference)
                        .with_predicted(predicted)
                        .with_subgroup("site", if i % 3 == 0 { "a" } else { "b" }),
                );
            }
        };
        push(6, ReferenceLabel::Positive, true, "tp");
        push(5, ReferenceLabel::Negative, true, "fp");
        push(4, ReferenceLabel::Positive, false, "fn");
        push(20, ReferenceLabel::Negative, false, "tn");
        Dataset::from_cases(cases).unwrap()
    }

    #[test]
    fn exhausted_cell_reports_shortfall() {
        let s = draw_sample(&dataset(), &ScleConfig::new(10, 0, 0, 1)).unwrap();
        assert_eq!(s.rows.len(), 5);
        assert_eq!(s.shortfalls.len(), 1);
        assert_eq!(s.warnings()[0], "cell FP: 5 of 10 requested cases available");
        assert!(s.rows.iter().all(|r| r.sampling_weight == 1.0));
    }

    #[test]
    fn weights_are_cell_size_over_sample_size() {
        let s = draw_sample(&dataset(), &ScleConfig::new(3, 3, 3, 9)).unwrap();
        assert_eq!(s.rows.len(), 9);
        let size = |cell: Cell| s.rows.iter().filter(|r| r.classification_cell == cell).count();
        assert_eq!((size(Cell::Fp), size(Cell::Fn), size(Cell::Tp)), (3, 3, 3));
        for r in &s.rows {
            let pop = match r.classification_cell {
                Cell::Fp => 5.0,
                Cell::Fn => 4.0,
                Cell::Tp => 6.0,
                Cell::Tn => unreachable!(),
            };
            assert_eq!(r.sampling_weight, pop / 3.0);
            assert!(r
                .case_id
                .starts_with(&r.classification_cell.as_str().to_ascii_lowercase()));
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = ScleConfig::new(2, 2, 2, 5);
        assert_eq!(
            draw_sample(&dataset(), &cfg).unwrap(),
            draw_sample(&dataset(), &cfg).unwrap()
        );
    }

    #[test]
    fn substrata_allocations_sum_to_request() {
        let mut cfg = ScleConfig::new(4, 3, 5, 2);
        cfg.substratify_by = vec!["site".into()];
        let s = draw_sample(&dataset(), &cfg).unwrap();
        assert_eq!(s.cell_sample_size["FP"], 4);
        assert_eq!(s.cell_sample_size["FN"], 3);
        assert_eq!(s.cell_sample_size["TP"], 5);
        assert!(s.rows.iter().all(|r| r.strata.contains_key("site")));
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(10, &[1, 1, 1]), vec![1, 1, 1]);
        assert_eq!(largest_remainder(5, &[10, 10, 10]), vec![2, 2, 1]);
        assert_eq!(largest_remainder(7, &[1, 2, 97]), vec![0, 0, 7]);
        assert_eq!(largest_remainder(0, &[]), Vec::<usize>::new());
    }

    #[test]
    fn benchmark_mode_requires_benchmark() {
        let mut cfg = ScleConfig::new(1, 1, 1, 0);
        cfg.benchmark_mode = true;
        assert!(draw_sample(&dataset(), &cfg).is_err());
    }

    #[test]
    fn boundary_bins_keep_top_bin() {
        let cases = (0..40)
            .map(|i| {
                EvaluationCase::new(format!("c{i}"), ReferenceLabel::Negative)
                    .with_score(0.5 + i as f64 / 100.0)
                    .with_predicted(true)
            })
            .collect();
        let ds = Dataset::from_cases(cases).unwrap();
        let mut cfg = ScleConfig::new(1, 0, 0, 4);
        cfg.boundary_bins = Some(4);
        cfg.threshold = Some(0.5);
        let s = draw_sample(&ds, &cfg).unwrap();
        assert_eq!(s.rows.len(), 1);
        assert_eq!(s.rows[0].strata["boundary_bin"], "4");
        let n: usize = s.rows[0].case_id[1..].parse().unwrap();
        assert!(n >= 30);

        cfg.threshold = None;
        assert!(draw_sample(&ds, &cfg).is_err());
    }
}
