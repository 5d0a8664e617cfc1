// SPDX-License-Identifier: Apache-2.0

//! Evaluation cases, sampling designs and the validated [`Dataset`] container.
//!
//! Row numbers in every error refer to the 1-based position of the case in
//! the dataset, which is also its data-record number in the source file.

mod io;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{emit, emit_to_string, ingest, ingest_str, read_design, Format, SIDECAR_KEY};

/// Metadata key under which [`apply_threshold`] records the threshold used.
pub const THRESHOLD_METADATA_KEY: &str = "decision_threshold";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceLabel {
    Positive,
    Negative,
    /// Unresolved edge case. Dropped from counts but still reviewable.
    Ambiguous,
    /// Deliberately set aside. Invisible to every downstream analysis.
    Excluded,
}

impl ReferenceLabel {
    /// `Some(true)` for positives, `Some(false)` for negatives, `None` when
    /// the case does not enter confusion counts.
    pub fn as_binary(self) -> Option<bool> {
        match self {
            ReferenceLabel::Positive => Some(true),
            ReferenceLabel::Negative => Some(false),
            ReferenceLabel::Ambiguous | ReferenceLabel::Excluded => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReferenceLabel::Positive => "positive",
            ReferenceLabel::Negative => "negative",
            ReferenceLabel::Ambiguous => "ambiguous",
            ReferenceLabel::Excluded => "excluded",
        }
    }
}

impl fmt::Display for ReferenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReferenceLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(ReferenceLabel::Positive),
            "negative" => Ok(ReferenceLabel::Negative),
            "ambiguous" => Ok(ReferenceLabel::Ambiguous),
            "excluded" => Ok(ReferenceLabel::Excluded),
            other => Err(format!(
                "expected one of positive, negative, ambiguous, excluded; got `{other}`"
            )),
        }
    }
}

/// Parses a binary label written as 1/0, true/false, yes/no or
/// positive/negative (case-insensitive).
pub fn parse_binary(s: &str) -> std::result::Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "positive" | "pos" => Ok(true),
        "0" | "false" | "no" | "negative" | "neg" => Ok(false),
        other => Err(format!("expected a binary label (1/0, true/false); got `{other}`")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCase {
    pub case_id: String,
    pub reference: ReferenceLabel,
    /// Higher means more positive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark_predicted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum_id: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub subgroups: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeated_labels: Option<Vec<bool>>,
}

impl EvaluationCase {
    /// A case with only an id and a reference label; callers fill in the rest.
    pub fn new(case_id: impl Into<String>, reference: ReferenceLabel) -> Self {
        EvaluationCase {
            case_id: case_id.into(),
            reference,
            score: None,
            predicted: None,
            benchmark_predicted: None,
            stratum_id: None,
            subgroups: BTreeMap::new(),
            repeated_labels: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn with_predicted(mut self, predicted: bool) -> Self {
        self.predicted = Some(predicted);
        self
    }

    pub fn with_benchmark(mut self, predicted: bool) -> Self {
        self.benchmark_predicted = Some(predicted);
        self
    }

    pub fn with_stratum(mut self, stratum_id: impl Into<String>) -> Self {
        self.stratum_id = Some(stratum_id.into());
        self
    }

    pub fn with_subgroup(mut self, name: impl Into<String>, category: impl Into<String>) -> Self {
        self.subgroups.insert(name.into(), category.into());
        self
    }

    pub fn with_runs(mut self, runs: Vec<bool>) -> Self {
        self.repeated_labels = Some(runs);
        self
    }

    /// Positive or Negative reference.
    pub fn is_evaluable(&self) -> bool {
        self.reference.as_binary().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSpec {
    pub stratum_id: String,
    pub inclusion_probability: f64,
    #[serde(default)]
    pub description: String,
}

impl StratumSpec {
    pub fn new(stratum_id: impl Into<String>, inclusion_probability: f64) -> Self {
        StratumSpec {
            stratum_id: stratum_id.into(),
            inclusion_probability,
            description: String::new(),
        }
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.inclusion_probability
    }
}

/// Tallies of reference labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub positive: usize,
    pub negative: usize,
    pub ambiguous: usize,
    pub excluded: usize,
}

impl LabelCounts {
    pub fn evaluable(&self) -> usize {
        self.positive + self.negative
    }

    /// Positive fraction among Positive/Negative cases.
    pub fn prevalence(&self) -> Option<f64> {
        match self.evaluable() {
            0 => None,
            n => Some(self.positive as f64 / n as f64),
        }
    }
}

/// Validated, immutable collection of evaluation cases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    cases: Vec<EvaluationCase>,
    design: Vec<StratumSpec>,
    metadata: BTreeMap<String, String>,
    #[serde(skip)]
    weights: Vec<f64>,
}

impl Dataset {
    pub fn new(
        cases: Vec<EvaluationCase>,
        design: Vec<StratumSpec>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut strata: HashMap<&str, f64> = HashMap::new();
        for s in &design {
            if s.stratum_id.is_empty() {
                return Err(Error::InvalidDataset("empty stratum_id in design".into()));
            }
            let p = s.inclusion_probability;
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidDataset(format!(
                    "stratum `{}`: inclusion_probability must be in (0, 1], got {p}",
                    s.stratum_id
                )));
            }
            if strata.insert(&s.stratum_id, p).is_some() {
                return Err(Error::InvalidDataset(format!(
                    "stratum `{}` declared twice",
                    s.stratum_id
                )));
            }
        }

        let mut seen: HashMap<&str, usize> = HashMap::with_capacity(cases.len());
        let mut with_stratum = 0usize;
        for (i, case) in cases.iter().enumerate() {
            let row = i + 1;
            if case.case_id.is_empty() {
                return Err(Error::row(row, "case_id", "must not be empty"));
            }
            if let Some(first) = seen.insert(&case.case_id, row) {
                return Err(Error::DuplicateCaseId {
                    case_id: case.case_id.clone(),
                    first_row: first,
                    second_row: row,
                });
            }
            if case.score.is_none() && case.predicted.is_none() {
                return Err(Error::row(
                    row,
                    "score/predicted",
                    "neither score nor predicted is present",
                ));
            }
            if let Some(s) = case.score {
                if !s.is_finite() {
                    return Err(Error::row(row, "score", format!("score must be finite, got {s}")));
                }
            }
            if let Some(runs) = &case.repeated_labels {
                if runs.is_empty() {
                    return Err(Error::row(row, "repeated_labels", "must be non-empty when present"));
                }
            }
            for (name, category) in &case.subgroups {
                if name.is_empty() || category.is_empty() {
                    return Err(Error::row(
                        row,
                        "subgroups",
                        "subgroup names and categories must be non-empty",
                    ));
                }
            }
            if let Some(stratum) = &case.stratum_id {
                with_stratum += 1;
                if !strata.contains_key(stratum.as_str()) {
                    return Err(Error::UnknownStratum {
                        row,
                        stratum_id: stratum.clone(),
                    });
                }
            }
        }

        if with_stratum != 0 && with_stratum != cases.len() {
            let row = cases.iter().position(|c| c.stratum_id.is_none()).unwrap_or(0) + 1;
            return Err(Error::row(
                row,
                "stratum_id",
                "mixed design: some cases carry a stratum_id and others do not",
            ));
        }
        if !design.is_empty() && with_stratum == 0 && !cases.is_empty() {
            return Err(Error::InvalidDataset(
                "a sampling design is declared but no case carries a stratum_id".into(),
            ));
        }

        let weights = cases
            .iter()
            .map(|c| match &c.stratum_id {
                Some(s) => 1.0 / strata[s.as_str()],
                None => 1.0,
            })
            .collect();
        Ok(Dataset {
            cases,
            design,
            metadata,
            weights,
        })
    }

    pub fn from_cases(cases: Vec<EvaluationCase>) -> Result<Self> {
        Dataset::new(cases, Vec::new(), BTreeMap::new())
    }

    pub fn cases(&self) -> &[EvaluationCase] {
        &self.cases
    }

    pub fn design(&self) -> &[StratumSpec] {
        &self.design
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// True when cases carry inverse-probability weights.
    pub fn is_weighted(&self) -> bool {
        !self.design.is_empty()
    }

    /// Inverse inclusion probability of the case at `index` (1 without a design).
    pub fn weight(&self, index: usize) -> f64 {
        self.weights[index]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, case_id: &str) -> Option<&EvaluationCase> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.cases
            .iter()
            .enumerate()
            .map(|(i, c)| (c.case_id.as_str(), i))
            .collect()
    }

    pub fn label_counts(&self) -> LabelCounts {
        let mut counts = LabelCounts::default();
        for c in &self.cases {
            match c.reference {
                ReferenceLabel::Positive => counts.positive += 1,
                ReferenceLabel::Negative => counts.negative += 1,
                ReferenceLabel::Ambiguous => counts.ambiguous += 1,
                ReferenceLabel::Excluded => counts.excluded += 1,
            }
        }
        counts
    }

    /// Cases with a Positive or Negative reference, with their weights.
    pub fn evaluable(&self) -> impl Iterator<Item = (&EvaluationCase, f64)> + '_ {
        self.cases
            .iter()
            .zip(self.weights.iter().copied())
            .filter(|(c, _)| c.is_evaluable())
    }

    /// Distinct subgroup attribute names across all cases.
    pub fn subgroup_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.cases.iter().flat_map(|c| c.subgroups.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
    }

    /// The threshold recorded by [`apply_threshold`], if any.
    pub fn recorded_threshold(&self) -> Option<f64> {
        self.metadata.get(THRESHOLD_METADATA_KEY).and_then(|s| s.parse().ok())
    }

    pub fn into_parts(self) -> (Vec<EvaluationCase>, Vec<StratumSpec>, BTreeMap<String, String>) {
        (self.cases, self.design, self.metadata)
    }

    pub fn with_design(self, design: Vec<StratumSpec>) -> Result<Self> {
        let (cases, _, metadata) = self.into_parts();
        Dataset::new(cases, design, metadata)
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    /// Rebuild with a per-case transformation, re-running validation.
    pub fn map_cases<F>(&self, f: F) -> Result<Self>
    where
        F: FnMut(&EvaluationCase) -> Result<EvaluationCase>,
    {
        let cases = self.cases.iter().map(f).collect::<Result<Vec<_>>>()?;
        Dataset::new(cases, self.design.clone(), self.metadata.clone())
    }

    /// Sub-dataset keeping the cases for which `keep` returns true.
    pub fn filter<F>(&self, mut keep: F) -> Result<Self>
    where
        F: FnMut(&EvaluationCase) -> bool,
    {
        let cases = self.cases.iter().filter(|c| keep(c)).cloned().collect();
        Dataset::new(cases, self.design.clone(), self.metadata.clone())
    }
}

/// Sets `predicted = score >= threshold` on every case.
///
/// Ties at the threshold are predicted positive. Scores are retained, and
/// the threshold is recorded in the metadata.
pub fn apply_threshold(dataset: &Dataset, threshold: f64) -> Result<Dataset> {
    if !threshold.is_finite() {
        return Err(Error::invalid(format!("threshold must be finite, got {threshold}")));
    }
    let thresholded = dataset.map_cases(|c| {
        let score = c.score.ok_or_else(|| Error::MissingScore {
            case_id: c.case_id.clone(),
        })?;
        let mut out = c.clone();
        out.predicted = Some(score >= threshold);
        Ok(out)
    })?;
    Ok(thresholded.with_metadata(THRESHOLD_METADATA_KEY, threshold.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scored(id: &str, reference: ReferenceLabel, score: f64) -> EvaluationCase {
        EvaluationCase::new(id, reference).with_score(score)
    }

    #[test]
    fn threshold_examples() {
        let ds = Dataset::from_cases(vec![
            scored("a", ReferenceLabel::Negative, 0.2),
            scored("b", ReferenceLabel::Positive, 0.7),
        ])
        .unwrap();
        let out = apply_threshold(&ds, 0.5).unwrap();
        let predicted: Vec<_> = out.cases().iter().map(|c| c.predicted).collect();
        assert_eq!(predicted, vec![Some(false), Some(true)]);
        assert_eq!(out.cases()[0].score, Some(0.2));
        assert_eq!(out.recorded_threshold(), Some(0.5));

        let all = apply_threshold(&ds, 0.1).unwrap();
        assert!(all.cases().iter().all(|c| c.predicted == Some(true)));
    }

    #[test]
    fn ties_at_threshold_are_positive() {
        let ds = Dataset::from_cases(vec![scored("a", ReferenceLabel::Negative, 0.5)]).unwrap();
        assert_eq!(apply_threshold(&ds, 0.5).unwrap().cases()[0].predicted, Some(true));
    }

    #[test]
    fn threshold_requires_scores() {
        let ds = Dataset::from_cases(vec![
            scored("a", ReferenceLabel::Negative, 0.2),
            EvaluationCase::new("nos", ReferenceLabel::Positive).with_predicted(true),
        ])
        .unwrap();
        match apply_threshold(&ds, 0.5) {
            Err(Error::MissingScore { case_id }) => assert_eq!(case_id, "nos"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_case_without_score_or_prediction() {
        let err = Dataset::from_cases(vec![
            scored("a", ReferenceLabel::Negative, 0.2),
            EvaluationCase::new("b", ReferenceLabel::Positive),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Row { row: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_duplicates_naming_both_rows() {
        let err = Dataset::from_cases(vec![
            scored("a", ReferenceLabel::Negative, 0.2),
            scored("b", ReferenceLabel::Negative, 0.2),
            scored("a", ReferenceLabel::Positive, 0.9),
        ])
        .unwrap_err();
        assert!(matches!(
            err,
            Error::DuplicateCaseId {
                first_row: 1,
                second_row: 3,
                ..
            }
        ));
    }

    #[test]
    fn design_validation() {
        let cases = vec![
            scored("a", ReferenceLabel::Negative, 0.2).with_stratum("s1"),
            scored("b", ReferenceLabel::Positive, 0.9).with_stratum("s2"),
        ];
        let err = Dataset::new(cases.clone(), vec![StratumSpec::new("s1", 0.5)], BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::UnknownStratum { row: 2, .. }));

        let err = Dataset::new(
            cases.clone(),
            vec![StratumSpec::new("s1", 0.0), StratumSpec::new("s2", 1.0)],
            BTreeMap::new(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidDataset(_)));

        let mut mixed = cases.clone();
        mixed[1].stratum_id = None;
        let err = Dataset::new(mixed, vec![StratumSpec::new("s1", 0.5)], BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::Row { row: 2, .. }));

        let ok = Dataset::new(
            cases,
            vec![StratumSpec::new("s1", 0.5), StratumSpec::new("s2", 0.25)],
            BTreeMap::new(),
        )
        .unwrap();
        assert!(ok.is_weighted());
        assert_eq!(ok.weights(), &[2.0, 4.0]);
    }

    #[test]
    fn empty_repeated_labels_rejected() {
        let err = Dataset::from_cases(vec![scored("a", ReferenceLabel::Negative, 0.2).with_runs(vec![])]).unwrap_err();
        assert!(matches!(err, Error::Row { row: 1, .. }));
    }

    #[test]
    fn reference_labels_parse_case_insensitively() {
        assert_eq!("POSITIVE".parse::<ReferenceLabel>().unwrap(), ReferenceLabel::Positive);
        assert_eq!(
            " Ambiguous ".parse::<ReferenceLabel>().unwrap(),
            ReferenceLabel::Ambiguous
        );
        assert!("maybe".parse::<ReferenceLabel>().is_err());
    }

    fn arb_label() -> impl Strategy<Value = ReferenceLabel> {
        prop_oneof![
            Just(ReferenceLabel::Positive),
            Just(ReferenceLabel::Negative),
            Just(ReferenceLabel::Ambiguous),
            Just(ReferenceLabel::Excluded),
        ]
    }

    proptest! {
        #[test]
        fn threshold_is_monotone_and_conserves_labels(
            cases in prop::collection::vec((arb_label(), 0.0f64..1.0), 1..60),
            t1 in 0.0f64..1.0,
            dt in 0.0f64..0.5,
        ) {
            let ds = Dataset::from_cases(
                cases.iter().enumerate().map(|(i, (l, s))| scored(&format!("c{i}"), *l, *s)).collect()
            ).unwrap();
            let lo = apply_threshold(&ds, t1).unwrap();
            let hi = apply_threshold(&ds, t1 + dt).unwrap();
            prop_assert_eq!(lo.label_counts(), ds.label_counts());
            for (a, b) in lo.cases().iter().zip(hi.cases()) {
                // raising the threshold never turns a negative into a positive
                prop_assert!(!(a.predicted == Some(false) && b.predicted == Some(true)));
            }
        }
    }
}
