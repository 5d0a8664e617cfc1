// SPDX-License-Identifier: Apache-2.0

//! Evaluation checklist and consolidated reports.
//!
//! [`prefill_checklist`] maps collected [`EvaluationOutputs`] to a status
//! for each of the twelve considerations. Rows whose question is about
//! judgement rather than numbers never reach `satisfied` without an
//! [`Attestation`].

mod render;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::curves::{CostSpec, CurvePoint, RareEventWarning, WarningCode};
use crate::datamodel::{Dataset, StratumSpec};
use crate::metrics::{BenchmarkComparison, Concordance, MetricEstimate, PrecisionAtK};
use crate::robustness::{StabilityReport, SubsetReport, VariabilitySummary};
use crate::scle::{DiagnosticTag, ScleSummary};

pub use render::{render_report, section_seed, RenderOptions, RenderedReport, REPORT_SCHEMA, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consideration {
    TestSets,
    AnnotationProcess,
    Metrics,
    Recall,
    Precision,
    Specificity,
    DecisionThresholds,
    Benchmarks,
    Robustness,
    NonTriviality,
    TypesOfErrors,
    HumanAiInteraction,
}

impl Consideration {
    pub const ALL: [Consideration; 12] = [
        Consideration::TestSets,
        Consideration::AnnotationProcess,
        Consideration::Metrics,
        Consideration::Recall,
        Consideration::Precision,
        Consideration::Specificity,
        Consideration::DecisionThresholds,
        Consideration::Benchmarks,
        Consideration::Robustness,
        Consideration::NonTriviality,
        Consideration::TypesOfErrors,
        Consideration::HumanAiInteraction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Consideration::TestSets => "test_sets",
            Consideration::AnnotationProcess => "annotation_process",
            Consideration::Metrics => "metrics",
            Consideration::Recall => "recall",
            Consideration::Precision => "precision",
            Consideration::Specificity => "specificity",
            Consideration::DecisionThresholds => "decision_thresholds",
            Consideration::Benchmarks => "benchmarks",
            Consideration::Robustness => "robustness",
            Consideration::NonTriviality => "non_triviality",
            Consideration::TypesOfErrors => "types_of_errors",
            Consideration::HumanAiInteraction => "human_ai_interaction",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Consideration::TestSets => "Test sets",
            Consideration::AnnotationProcess => "Annotation process",
            Consideration::Metrics => "Metrics",
            Consideration::Recall => "Recall",
            Consideration::Precision => "Precision",
            Consideration::Specificity => "Specificity",
            Consideration::DecisionThresholds => "Decision thresholds",
            Consideration::Benchmarks => "Benchmarks",
            Consideration::Robustness => "Robustness",
            Consideration::NonTriviality => "Non-triviality",
            Consideration::TypesOfErrors => "Types of errors",
            Consideration::HumanAiInteraction => "Human-AI interaction",
        }
    }

    /// Short prompt for the reviewer filling in the row.
    pub fn key_questions(self) -> &'static str {
        match self {
            Consideration::TestSets => {
                "Is the evaluation data in scope for the deployment setting, and large and varied enough, \
                 with positive and negative controls that represent what will be met in use?"
            }
            Consideration::AnnotationProcess => {
                "How were reference labels assigned, how was label quality checked, and what happened to \
                 hard or borderline cases?"
            }
            Consideration::Metrics => {
                "Which metrics are reported, do they matter for the use case, and do they jointly cover \
                 false positives, false negatives and stability?"
            }
            Consideration::Recall => {
                "Do the positive controls span the kinds and difficulty of events the model must find, \
                 and is any over-sampling of positives corrected for?"
            }
            Consideration::Precision => {
                "What share of the test set is positive compared with deployment, and is any enrichment \
                 corrected for when precision is quoted?"
            }
            Consideration::Specificity => {
                "Is specificity high enough for the chosen operating point once projected to deployment \
                 prevalence, and is its estimate precise?"
            }
            Consideration::DecisionThresholds => {
                "Which thresholds were evaluated, and does the chosen one reflect the use case and the \
                 relative cost of each error type?"
            }
            Consideration::Benchmarks => {
                "Was the model compared with credible alternatives run at their best, and on shared \
                 benchmark data where such data exist?"
            }
            Consideration::Robustness => {
                "Does performance hold across conditions and subgroups, and is there monitoring for drift \
                 in data, model or performance after release?"
            }
            Consideration::NonTriviality => {
                "Are the true positives found by the model ones that required real skill to find, or \
                 mostly easy cases?"
            }
            Consideration::TypesOfErrors => {
                "What do the false positives and false negatives look like, and are they acceptable for \
                 the use case or a sign of invalid or unfair behaviour?"
            }
            Consideration::HumanAiInteraction => {
                "How will people work with the model's output, and does the evaluation reflect that way \
                 of working?"
            }
        }
    }

    /// Rows answered by judgement; these need an attestation to be satisfied.
    pub fn is_qualitative(self) -> bool {
        matches!(
            self,
            Consideration::TestSets
                | Consideration::AnnotationProcess
                | Consideration::Metrics
                | Consideration::Benchmarks
                | Consideration::Robustness
                | Consideration::NonTriviality
                | Consideration::TypesOfErrors
                | Consideration::HumanAiInteraction
        )
    }
}

impl fmt::Display for Consideration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Consideration {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Consideration::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| format!("unknown consideration `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChecklistStatus {
    Satisfied,
    Partial,
    Unsatisfied,
    NotApplicable,
    ExternalEvidenceRequired,
}

impl ChecklistStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ChecklistStatus::Satisfied => "satisfied",
            ChecklistStatus::Partial => "partial",
            ChecklistStatus::Unsatisfied => "unsatisfied",
            ChecklistStatus::NotApplicable => "not_applicable",
            ChecklistStatus::ExternalEvidenceRequired => "external_evidence_required",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub consideration: Consideration,
    pub key_questions: String,
    pub status: ChecklistStatus,
    pub rationale: String,
    /// Pointers into the report, such as `metrics.recall` or `scle.triviality`.
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttestationKind {
    /// A person has reviewed the row and confirms the evidence.
    Confirmed,
    NotApplicable,
}

/// A human statement about one consideration, supplied through config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attestation {
    pub kind: AttestationKind,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_cases: usize,
    pub positive: usize,
    pub negative: usize,
    pub ambiguous: usize,
    pub excluded: usize,
    pub prevalence: Option<f64>,
    pub weighted: bool,
    pub strata: Vec<StratumSpec>,
    pub threshold: Option<f64>,
    pub has_scores: bool,
    pub has_benchmark: bool,
    pub has_repeated_runs: bool,
    pub subgroup_attributes: Vec<String>,
}

impl DatasetSummary {
    pub fn of(dataset: &Dataset) -> Self {
        let counts = dataset.label_counts();
        let cases = dataset.cases();
        DatasetSummary {
            n_cases: dataset.len(),
            positive: counts.positive,
            negative: counts.negative,
            ambiguous: counts.ambiguous,
            excluded: counts.excluded,
            prevalence: counts.prevalence(),
            weighted: dataset.is_weighted(),
            strata: dataset.design().to_vec(),
            threshold: dataset.recorded_threshold(),
            has_scores: !cases.is_empty() && cases.iter().all(|c| c.score.is_some()),
            has_benchmark: cases.iter().any(|c| c.benchmark_predicted.is_some()),
            has_repeated_runs: cases.iter().any(|c| c.repeated_labels.is_some()),
            subgroup_attributes: dataset.subgroup_names(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionProjection {
    pub sensitivity: f64,
    pub specificity: f64,
    pub assumed_prevalence: f64,
    pub projected_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub auc: Option<f64>,
    pub n_points: usize,
    pub test_prevalence: Option<f64>,
    #[serde(default)]
    pub costs: Option<CostSpec>,
    #[serde(default)]
    pub operating_point: Option<CurvePoint>,
}

/// Everything a run produced, as input to the checklist and the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationOutputs {
    pub seed: u64,
    /// Input file names or labels, for provenance.
    pub inputs: Vec<String>,
    pub dataset: Option<DatasetSummary>,
    pub metrics: Vec<MetricEstimate>,
    pub assumed_deployment_prevalence: Option<f64>,
    pub precision_projection: Option<PrecisionProjection>,
    pub precision_at_k: Option<PrecisionAtK>,
    pub curves: Option<CurveSummary>,
    pub warnings: Vec<RareEventWarning>,
    pub benchmark: Option<BenchmarkComparison>,
    pub subsets: Vec<SubsetReport>,
    pub stability: Option<StabilityReport>,
    pub variability: Vec<VariabilitySummary>,
    pub scle: Option<ScleSummary>,
    pub human_ai: Option<Concordance>,
    /// The evaluator states that enrichment of positives was handled
    /// outside this tool.
    pub enrichment_justified: bool,
    pub attestations: BTreeMap<Consideration, Attestation>,
}

impl EvaluationOutputs {
    fn metric(&self, name: &str) -> Option<&MetricEstimate> {
        self.metrics.iter().find(|m| m.metric == name && m.is_defined())
    }
}

struct Row {
    status: ChecklistStatus,
    rationale: String,
    evidence: Vec<String>,
}

fn row(status: ChecklistStatus, rationale: impl Into<String>, evidence: Vec<String>) -> Row {
    Row {
        status,
        rationale: rationale.into(),
        evidence,
    }
}

use ChecklistStatus::{ExternalEvidenceRequired, Partial, Satisfied, Unsatisfied};

/// Fills the twelve checklist rows from a run's outputs. Deterministic.
pub fn prefill_checklist(outputs: &EvaluationOutputs) -> Vec<ChecklistItem> {
    Consideration::ALL
        .into_iter()
        .map(|c| {
            let mut r = assess(c, outputs);
            if c.is_qualitative() && r.status == Satisfied {
                r.status = Partial;
            }
            if let Some(a) = outputs.attestations.get(&c) {
                match a.kind {
                    AttestationKind::NotApplicable => {
                        r.status = ChecklistStatus::NotApplicable;
                        r.rationale = format!("attested not applicable: {}", a.note);
                    }
                    AttestationKind::Confirmed => {
                        r.status = match r.status {
                            Unsatisfied => Partial,
                            Partial => Satisfied,
                            s => s,
                        };
                        r.rationale = format!("{}; attested: {}", r.rationale, a.note);
                    }
                }
                r.evidence.push(format!("attestations.{}", c.as_str()));
            }
            if r.rationale.is_empty() {
                r.rationale = "criteria met by the attached evidence".to_string();
            }
            ChecklistItem {
                consideration: c,
                key_questions: c.key_questions().to_string(),
                status: r.status,
                rationale: r.rationale,
                evidence: r.evidence,
            }
        })
        .collect()
}

fn assess(c: Consideration, o: &EvaluationOutputs) -> Row {
    let ds = o.dataset.as_ref();
    match c {
        Consideration::TestSets => match ds {
            None => row(Unsatisfied, "no evaluation dataset was summarized", vec![]),
            Some(d) if d.positive == 0 || d.negative == 0 => row(
                Unsatisfied,
                format!(
                    "test set lacks {} controls",
                    if d.positive == 0 { "positive" } else { "negative" }
                ),
                vec!["dataset".into()],
            ),
            Some(d) => row(
                Partial,
                format!(
                    "{} positive, {} negative, {} ambiguous and {} excluded cases; fit to the deployment \
                     scope needs human review",
                    d.positive, d.negative, d.ambiguous, d.excluded
                ),
                vec!["dataset".into()],
            ),
        },
        Consideration::AnnotationProcess => match &o.scle {
            Some(s) if !s.no_findings => row(
                Partial,
                format!(
                    "case-level review recorded {} verdict(s) and {} test-set issue tag(s); labelling \
                     criteria and quality checks need documenting",
                    s.verdicts,
                    s.projected_totals
                        .get(&DiagnosticTag::TestSetIssue)
                        .map_or(0, |f| f.count)
                ),
                vec!["scle".into()],
            ),
            _ => row(
                Unsatisfied,
                "no evidence on how reference labels were produced or checked",
                vec![],
            ),
        },
        Consideration::Metrics => {
            let names: Vec<String> = o.metrics.iter().map(|m| format!("metrics.{}", m.metric)).collect();
            if names.is_empty() {
                return row(Unsatisfied, "no performance metrics were computed", vec![]);
            }
            let has = |n: &str| o.metric(n).is_some();
            let mut missing = Vec::new();
            if !has("precision") {
                missing.push("precision");
            }
            if !has("recall") {
                missing.push("recall");
            }
            if o.stability.is_none() {
                missing.push("stability");
            }
            let rationale = if missing.is_empty() {
                "false positives, false negatives and stability are all covered".to_string()
            } else {
                format!("not covered: {}", missing.join(", "))
            };
            row(Partial, rationale, names)
        }
        Consideration::Recall => match o.metric("recall") {
            None => row(Unsatisfied, "recall was not estimated", vec![]),
            Some(m) if m.weighted || o.enrichment_justified => row(
                Satisfied,
                if m.weighted {
                    "recall uses inverse-probability weights for the sampling design"
                } else {
                    "enrichment handling justified by the evaluator"
                },
                vec!["metrics.recall".into()],
            ),
            Some(_) => row(
                Partial,
                "recall is unweighted; any enrichment of positives is not accounted for",
                vec!["metrics.recall".into()],
            ),
        },
        Consideration::Precision => {
            let Some(m) = o.metric("precision") else {
                return row(Unsatisfied, "precision was not estimated", vec![]);
            };
            let mut evidence = vec!["metrics.precision".to_string()];
            let test_prev = ds.and_then(|d| d.prevalence);
            let enrichment = o.warnings.iter().find(|w| w.code == WarningCode::EnrichmentOptimism);
            if enrichment.is_some() {
                evidence.push("warnings.enrichment_optimism".into());
            }
            let prev_text = |p: Option<f64>| p.map_or("unknown".to_string(), |x| x.to_string());
            match (o.assumed_deployment_prevalence, &o.precision_projection) {
                (Some(dp), Some(proj)) => {
                    evidence.push("precision_projection".into());
                    row(
                        Satisfied,
                        format!(
                            "test-set prevalence {} vs assumed deployment prevalence {dp}; precision projected \
                             to deployment{}",
                            prev_text(test_prev),
                            if proj.projected_precision.is_none() {
                                " is undefined"
                            } else {
                                ""
                            }
                        ),
                        evidence,
                    )
                }
                (Some(dp), None) if m.weighted => row(
                    Satisfied,
                    format!(
                        "weighted precision; test-set prevalence {} vs assumed deployment prevalence {dp}",
                        prev_text(test_prev)
                    ),
                    evidence,
                ),
                (Some(dp), None) => row(
                    Partial,
                    format!(
                        "test-set prevalence {} vs assumed deployment prevalence {dp}, but precision was not \
                         projected or weighted{}",
                        prev_text(test_prev),
                        if enrichment.is_some() {
                            "; enrichment warning raised"
                        } else {
                            ""
                        }
                    ),
                    evidence,
                ),
                (None, _) if m.weighted => row(
                    Partial,
                    "weighted precision, but no deployment prevalence was stated",
                    evidence,
                ),
                (None, _) => row(
                    Partial,
                    format!(
                        "test-set prevalence {}; no deployment prevalence stated, so precision cannot be \
                         related to use",
                        prev_text(test_prev)
                    ),
                    evidence,
                ),
            }
        }
        Consideration::Specificity => match o.metric("specificity") {
            None => row(Unsatisfied, "specificity was not estimated", vec![]),
            Some(m) => {
                let mut evidence = vec!["metrics.specificity".to_string()];
                if o.precision_projection.is_some() {
                    evidence.push("precision_projection".into());
                    row(
                        Satisfied,
                        format!(
                            "specificity {} with interval [{}, {}], projected to deployment prevalence",
                            m.value.unwrap_or(f64::NAN),
                            m.ci_low.unwrap_or(f64::NAN),
                            m.ci_high.unwrap_or(f64::NAN)
                        ),
                        evidence,
                    )
                } else {
                    row(
                        Partial,
                        "specificity estimated but not related to deployment prevalence",
                        evidence,
                    )
                }
            }
        },
        Consideration::DecisionThresholds => match &o.curves {
            Some(cs) if cs.operating_point.is_some() && cs.costs.is_some() => row(
                Satisfied,
                "operating point chosen by expected cost at the assumed prevalence",
                vec!["curves.operating_point".into()],
            ),
            Some(_) => row(
                Partial,
                "thresholds swept, but no error costs were given to choose among them",
                vec!["curves".into()],
            ),
            None if ds.and_then(|d| d.threshold).is_some() => row(
                Partial,
                "a single threshold was applied without a sweep or cost argument",
                vec!["dataset.threshold".into()],
            ),
            None => row(Unsatisfied, "no threshold analysis", vec![]),
        },
        Consideration::Benchmarks => match &o.benchmark {
            Some(_) => row(
                Partial,
                "model compared with a benchmark on the same cases; whether the benchmark was run at its \
                 best needs human review",
                vec!["benchmark".into()],
            ),
            None => row(Unsatisfied, "no benchmark comparison", vec![]),
        },
        Consideration::Robustness => {
            if o.subsets.is_empty() {
                let mut r = row(
                    Unsatisfied,
                    "missing subset breakdown: performance across subgroups was not analysed",
                    vec![],
                );
                if o.stability.is_some() {
                    r.evidence.push("stability".into());
                }
                return r;
            }
            let mut evidence: Vec<String> = o.subsets.iter().map(|s| format!("subsets.{}", s.attribute)).collect();
            let flagged: Vec<&str> = o
                .subsets
                .iter()
                .filter(|s| s.heterogeneity.flagged)
                .map(|s| s.attribute.as_str())
                .collect();
            if o.stability.is_some() {
                evidence.push("stability".into());
            }
            if !o.variability.is_empty() {
                evidence.push("variability".into());
            }
            let mut rationale = if flagged.is_empty() {
                "no subgroup heterogeneity flagged".to_string()
            } else {
                format!("errors vary by subgroup for: {}", flagged.join(", "))
            };
            rationale.push_str("; drift monitoring needs external evidence");
            row(Partial, rationale, evidence)
        }
        Consideration::NonTriviality => match o.scle.as_ref().and_then(|s| s.triviality.rate.map(|r| (s, r))) {
            Some((s, rate)) => row(
                Partial,
                format!(
                    "triviality rate {rate} among {} judged true positives",
                    s.triviality.judged
                ),
                vec!["scle.triviality".into()],
            ),
            None => row(Unsatisfied, "no review of true positives for triviality", vec![]),
        },
        Consideration::TypesOfErrors => match &o.scle {
            Some(s) if s.cells.keys().any(|k| k == "FP" || k == "FN" || k.contains("B")) => row(
                Partial,
                format!(
                    "{} sampled case(s) reviewed, {} never event(s) itemized",
                    s.n_annotations,
                    s.never_events.len()
                ),
                vec!["scle".into(), "scle.never_events".into()],
            ),
            _ => row(
                Unsatisfied,
                "false positives and false negatives were not examined case by case",
                vec![],
            ),
        },
        Consideration::HumanAiInteraction => match &o.human_ai {
            Some(h) => row(
                Partial,
                format!(
                    "concordance {} and override rate {} over {} decisions",
                    h.concordance, h.override_rate, h.n
                ),
                vec!["human_ai".into()],
            ),
            None => row(
                ExternalEvidenceRequired,
                "the intended way of working with the model is outside the evaluation data",
                vec![],
            ),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_outputs_give_twelve_unmet_rows() {
        let items = prefill_checklist(&EvaluationOutputs::default());
        assert_eq!(items.len(), 12);
        for item in &items {
            assert!(
                matches!(item.status, Unsatisfied | ExternalEvidenceRequired),
                "{item:?}"
            );
            assert!(!item.rationale.is_empty());
        }
        let robustness = items
            .iter()
            .find(|i| i.consideration == Consideration::Robustness)
            .unwrap();
        assert!(robustness.rationale.contains("subset breakdown"));
    }

    #[test]
    fn attestation_raises_one_level() {
        let mut o = EvaluationOutputs::default();
        o.attestations.insert(
            Consideration::AnnotationProcess,
            Attestation {
                kind: AttestationKind::Confirmed,
                note: "double annotation with adjudication".into(),
            },
        );
        o.attestations.insert(
            Consideration::Benchmarks,
            Attestation {
                kind: AttestationKind::NotApplicable,
                note: "no prior method exists".into(),
            },
        );
        let items = prefill_checklist(&o);
        assert_eq!(items[1].status, Partial);
        assert_eq!(items[7].status, ChecklistStatus::NotApplicable);
    }

    #[test]
    fn considerations_parse() {
        for c in Consideration::ALL {
            assert_eq!(c.as_str().parse::<Consideration>().unwrap(), c);
        }
    }
}
