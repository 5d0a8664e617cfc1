// SPDX-License-Identifier: Apache-2.0

//! Threshold sweeps: precision-recall and ROC curves, AUC, cost-based
//! operating points and warnings about rare-event misuse of summaries.
//!
//! A curve has one point per distinct observed score, in strictly
//! decreasing threshold order, preceded by the all-negative extreme at
//! threshold `+inf`. The lowest observed score is the all-positive extreme.
//! Nothing is interpolated.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datamodel::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Cases with `score >= threshold` are predicted positive.
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub recall: f64,
    /// Undefined when nothing is predicted positive.
    pub precision: Option<f64>,
    pub specificity: f64,
    pub fpr: f64,
    pub predicted_positive_count: usize,
}

mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        if t.is_infinite() {
            s.serialize_str(if *t > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*t)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad threshold `{s}`"))),
        }
    }
}

fn sweep(dataset: &Dataset) -> Result<Vec<CurvePoint>> {
    let mut scored = Vec::new();
    let (mut total_pos, mut total_neg) = (0.0, 0.0);
    for (case, weight) in dataset.evaluable() {
        let score = case.score.ok_or_else(|| Error::MissingScore {
            case_id: case.case_id.clone(),
        })?;
        let positive = case.reference.as_binary() == Some(true);
        if positive {
            total_pos += weight;
        } else {
            total_neg += weight;
        }
        scored.push((score, positive, weight));
    }
    if total_pos <= 0.0 || total_neg <= 0.0 {
        return Err(Error::invalid(
            "a curve needs at least one Positive and one Negative case",
        ));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let point = |threshold: f64, tp: f64, fp: f64, count: usize| CurvePoint {
        threshold,
        recall: tp / total_pos,
        precision: (tp + fp > 0.0).then(|| tp / (tp + fp)),
        specificity: (total_neg - fp) / total_neg,
        fpr: fp / total_neg,
        predicted_positive_count: count,
    };

    let mut points = vec![point(f64::INFINITY, 0.0, 0.0, 0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        while i < scored.len() && scored[i].0 == threshold {
            let (_, positive, w) = scored[i];
            if positive {
                tp += w;
            } else {
                fp += w;
            }
            i += 1;
        }
        points.push(point(threshold, tp, fp, i));
    }
    Ok(points)
}

/// Precision-recall curve over every distinct score (weighted under a design).
pub fn pr_curve(dataset: &Dataset) -> Result<Vec<CurvePoint>> {
    sweep(dataset)
}

/// ROC curve; the same sweep as [`pr_curve`], read as (fpr, recall).
pub fn roc_curve(dataset: &Dataset) -> Result<Vec<CurvePoint>> {
    sweep(dataset)
}

/// Trapezoidal area under the ROC curve.
///
/// Because ties are swept together, this equals the probability that a
/// random positive outranks a random negative with ties counted one half.
pub fn auc(curve: &[CurvePoint]) -> Result<f64> {
    partial_auc(curve, 1.0)
}

/// Area under the ROC curve for `fpr <= max_fpr`, unnormalized.
pub fn partial_auc(curve: &[CurvePoint], max_fpr: f64) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::invalid("AUC needs at least two curve points"));
    }
    if !(max_fpr > 0.0 && max_fpr <= 1.0) {
        return Err(Error::invalid(format!("max_fpr must be in (0, 1], got {max_fpr}")));
    }
    let mut area = 0.0;
    for pair in curve.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.fpr < a.fpr || b.recall < a.recall {
            return Err(Error::invalid("curve points are not in sweep order"));
        }
        if a.fpr >= max_fpr {
            break;
        }
        let (x1, mut y1) = (a.fpr, b.recall);
        let mut x1_end = b.fpr;
        if x1_end > max_fpr {
            // linear cut of the last segment at the boundary
            let t = (max_fpr - x1) / (x1_end - x1);
            y1 = a.recall + t * (b.recall - a.recall);
            x1_end = max_fpr;
        }
        area += (x1_end - x1) * (a.recall + y1) / 2.0;
    }
    Ok(area.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub cost_fp: f64,
    pub cost_fn: f64,
}

impl CostSpec {
    pub fn new(cost_fp: f64, cost_fn: f64) -> Result<Self> {
        if !(cost_fp > 0.0 && cost_fn > 0.0 && cost_fp.is_finite() && cost_fn.is_finite()) {
            return Err(Error::invalid("error costs must be positive and finite"));
        }
        Ok(CostSpec { cost_fp, cost_fn })
    }
}

/// Expected cost per case at deployment prevalence `prevalence`.
pub fn expected_cost(point: &CurvePoint, costs: &CostSpec, prevalence: f64) -> f64 {
    costs.cost_fn * prevalence * (1.0 - point.recall) + costs.cost_fp * (1.0 - prevalence) * point.fpr
}

/// The curve point of least expected cost; ties go to the lower fpr.
pub fn select_operating_point(curve: &[CurvePoint], costs: &CostSpec, assumed_prevalence: f64) -> Result<CurvePoint> {
    if !(assumed_prevalence > 0.0 && assumed_prevalence < 1.0) {
        return Err(Error::invalid(format!(
            "assumed prevalence must be in (0, 1), got {assumed_prevalence}"
        )));
    }
    let costs = CostSpec::new(costs.cost_fp, costs.cost_fn)?;
    let mut best: Option<(&CurvePoint, f64)> = None;
    for p in curve {
        let c = expected_cost(p, &costs, assumed_prevalence);
        let better = match best {
            None => true,
            Some((b, bc)) => {
                let tol = 1e-12 * bc.abs().max(c.abs()).max(f64::MIN_POSITIVE);
                c < bc - tol || ((c - bc).abs() <= tol && p.fpr < b.fpr)
            }
        };
        if better {
            best = Some((p, c));
        }
    }
    best.map(|(p, _)| p.clone())
        .ok_or_else(|| Error::invalid("empty curve"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarningConfig {
    /// AUC is flagged below this deployment prevalence.
    pub auc_prevalence_floor: f64,
    /// Test-set over deployment prevalence ratio that triggers the
    /// enrichment warning.
    pub enrichment_ratio: f64,
}

impl Default for WarningConfig {
    fn default() -> Self {
        WarningConfig {
            auc_prevalence_floor: 0.01,
            enrichment_ratio: 10.0,
        }
    }
}

/// Which summaries the caller intends to report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportedSummaries {
    pub auc: bool,
    pub f1: bool,
    /// The F-score weighting is backed by an explicit error-cost argument.
    pub cost_justified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningCode {
    AucRareEvent,
    EnrichmentOptimism,
    F1WithoutCostJustification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareEventWarning {
    pub code: WarningCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
}

/// Test-set prevalence implied by a curve: precision at the all-positive end.
pub fn curve_prevalence(curve: &[CurvePoint]) -> Option<f64> {
    curve.last().and_then(|p| p.precision)
}

pub fn rare_event_warnings(
    curve: &[CurvePoint],
    assumed_prevalence: f64,
    reported: &ReportedSummaries,
    config: &WarningConfig,
) -> Vec<RareEventWarning> {
    let mut warnings = Vec::new();
    if reported.auc && assumed_prevalence < config.auc_prevalence_floor {
        warnings.push(RareEventWarning {
            code: WarningCode::AucRareEvent,
            message: format!(
                "AUC at deployment prevalence {assumed_prevalence} is dominated by operating regions \
                 that will never be used; report precision at relevant thresholds instead"
            ),
            ratio: None,
        });
    }
    if let Some(test_prevalence) = curve_prevalence(curve) {
        if assumed_prevalence > 0.0 {
            let ratio = test_prevalence / assumed_prevalence;
            if ratio > config.enrichment_ratio {
                warnings.push(RareEventWarning {
                    code: WarningCode::EnrichmentOptimism,
                    message: format!(
                        "test-set prevalence {test_prevalence} is {ratio:.1}x the assumed deployment \
                         prevalence {assumed_prevalence}; precision on this test set is optimistic"
                    ),
                    ratio: Some(ratio),
                });
            }
        }
    }
    if reported.f1 && !reported.cost_justified {
        warnings.push(RareEventWarning {
            code: WarningCode::F1WithoutCostJustification,
            message: "F1 weighs false positives and false negatives equally; state the error costs \
                      that justify it or use an F-beta score"
                .to_string(),
            ratio: None,
        });
    }
    warnings
}

/// Plot-ready CSV: `threshold, recall, precision, specificity, fpr,
/// predicted_positive_count`. Undefined precision is an empty field.
pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("threshold,recall,precision,specificity,fpr,predicted_positive_count\n");
    for p in curve {
        let threshold = if p.threshold.is_infinite() {
            if p.threshold > 0.0 {
                "inf".to_string()
            } else {
                "-inf".to_string()
            }
        } else {
            p.threshold.to_string()
        };
        let precision = p.precision.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{threshold},{},{precision},{},{},{}",
            p.recall, p.specificity, p.fpr, p.predicted_positive_count
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{EvaluationCase, ReferenceLabel};

    fn ds(points: &[(bool, f64)]) -> Dataset {
        Dataset::from_cases(
            points
                .iter()
                .enumerate()
                .map(|(i, &(pos, s))| {
                    let r = if pos {
                        ReferenceLabel::Positive
                    } else {
                        ReferenceLabel::Negative
                    };
                    EvaluationCase::new(format!("c{i}"), r).with_score(s)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn separable_scores() {
        let curve = pr_curve(&ds(&[(true, 0.9), (false, 0.1)])).unwrap();
        assert_eq!(curve.len(), 3);
        assert_eq!(curve[0].precision, None);
        assert_eq!((curve[1].recall, curve[1].precision), (1.0, Some(1.0)));
        let roc = roc_curve(&ds(&[(true, 0.9), (false, 0.1)])).unwrap();
        assert!(roc.iter().any(|p| p.fpr == 0.0 && p.recall == 1.0));
        assert_eq!(auc(&roc).unwrap(), 1.0);
    }

    #[test]
    fn diagonal_two_point_curve() {
        let curve = vec![
            CurvePoint {
                threshold: 1.0,
                recall: 0.0,
                precision: None,
                specificity: 1.0,
                fpr: 0.0,
                predicted_positive_count: 0,
            },
            CurvePoint {
                threshold: 0.0,
                recall: 1.0,
                precision: Some(0.5),
                specificity: 0.0,
                fpr: 1.0,
                predicted_positive_count: 2,
            },
        ];
        assert_eq!(auc(&curve).unwrap(), 0.5);
        assert!(auc(&curve[..1]).is_err());
    }

    #[test]
    fn reversed_scores_complement_auc() {
        let data = [
            (true, 0.9),
            (false, 0.8),
            (true, 0.4),
            (false, 0.3),
            (false, 0.4),
            (true, 0.1),
        ];
        let a = auc(&roc_curve(&ds(&data)).unwrap()).unwrap();
        let rev: Vec<_> = data.iter().map(|&(p, s)| (p, -s)).collect();
        let b = auc(&roc_curve(&ds(&rev)).unwrap()).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn curve_requires_both_classes() {
        assert!(pr_curve(&ds(&[(true, 0.2), (true, 0.3)])).is_err());
    }

    #[test]
    fn curve_points_are_ordered() {
        let curve = pr_curve(&ds(&[(true, 0.5), (false, 0.5), (true, 0.7), (false, 0.2)])).unwrap();
        for w in curve.windows(2) {
            assert!(w[0].threshold > w[1].threshold);
            assert!(w[0].recall <= w[1].recall);
        }
        for p in &curve {
            assert!((p.fpr - (1.0 - p.specificity)).abs() < 1e-12);
        }
        assert_eq!(curve.last().unwrap().predicted_positive_count, 4);
    }

    #[test]
    fn operating_point_limits() {
        let curve = roc_curve(&ds(&[
            (true, 0.9),
            (false, 0.8),
            (true, 0.6),
            (false, 0.5),
            (true, 0.3),
            (false, 0.1),
        ]))
        .unwrap();
        let p = select_operating_point(&curve, &CostSpec::new(1.0, 1e9).unwrap(), 0.1).unwrap();
        assert_eq!(p.recall, 1.0);
        // lowest fpr among the full-recall points
        assert_eq!(p.threshold, 0.3);
        let p = select_operating_point(&curve, &CostSpec::new(1e9, 1.0).unwrap(), 0.1).unwrap();
        assert_eq!(p.fpr, 0.0);
        assert_eq!(p.threshold, 0.9);
        assert!(CostSpec::new(0.0, 1.0).is_err());
        assert!(select_operating_point(&curve, &CostSpec::new(1.0, 1.0).unwrap(), 1.0).is_err());
    }

    #[test]
    fn warning_rules() {
        let balanced = roc_curve(&ds(&[(true, 0.9), (false, 0.1)])).unwrap();
        let w = rare_event_warnings(
            &balanced,
            0.0007,
            &ReportedSummaries {
                auc: true,
                ..Default::default()
            },
            &WarningConfig::default(),
        );
        assert!(w.iter().any(|w| w.code == WarningCode::AucRareEvent));

        let w = rare_event_warnings(
            &balanced,
            0.01,
            &ReportedSummaries::default(),
            &WarningConfig::default(),
        );
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].code, WarningCode::EnrichmentOptimism);
        assert!((w[0].ratio.unwrap() - 50.0).abs() < 1e-9);

        let w = rare_event_warnings(&balanced, 0.5, &ReportedSummaries::default(), &WarningConfig::default());
        assert!(w.is_empty());

        let w = rare_event_warnings(
            &balanced,
            0.5,
            &ReportedSummaries {
                f1: true,
                ..Default::default()
            },
            &WarningConfig::default(),
        );
        assert_eq!(w[0].code, WarningCode::F1WithoutCostJustification);
        let json = serde_json::to_value(&w[0]).unwrap();
        assert_eq!(json["code"], "f1_without_cost_justification");
    }

    #[test]
    fn partial_auc_is_bounded_by_region() {
        let curve = roc_curve(&ds(&[(true, 0.9), (false, 0.8), (true, 0.6), (false, 0.5)])).unwrap();
        let full = auc(&curve).unwrap();
        let part = partial_auc(&curve, 0.5).unwrap();
        assert!(part <= 0.5 && part <= full);
    }

    #[test]
    fn csv_and_json_encode_infinite_threshold() {
        let curve = pr_curve(&ds(&[(true, 0.9), (false, 0.1)])).unwrap();
        let csv = curve_to_csv(&curve);
        assert!(csv.lines().nth(1).unwrap().starts_with("inf,0,,1,0,0"));
        let json = serde_json::to_string(&curve).unwrap();
        let back: Vec<CurvePoint> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, curve);
    }
}
