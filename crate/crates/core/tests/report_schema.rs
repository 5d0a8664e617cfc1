// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;
use rareval_core::curves::{self, ReportedSummaries, WarningConfig};
use rareval_core::metrics::{estimate_all, CiOptions};
use rareval_core::report::{
    prefill_checklist, render_report, ChecklistStatus, Consideration, CurveSummary, DatasetSummary, EvaluationOutputs,
    RenderOptions, REPORT_SCHEMA,
};
use rareval_core::robustness::{self, ResamplingScheme, SubsetOptions};
use rareval_core::synth::{Population, PopulationSpec, RepeatedRuns, SubgroupSpec};
use rareval_core::Metric;

fn outputs(seed: u64, prevalence: f64, with_subsets: bool, with_runs: bool, weighted: bool) -> EvaluationOutputs {
    let mut spec = PopulationSpec::new(600, prevalence, seed);
    spec.subgroups = vec![SubgroupSpec {
        name: "site".into(),
        categories: vec!["x".into(), "y".into(), "z".into()],
        weights: None,
    }];
    if with_runs {
        spec.runs = Some(RepeatedRuns {
            n_runs: 2,
            flip_probability: 0.1,
        });
    }
    if weighted {
        spec.enrichment = vec![rareval_core::synth::EnrichmentRule {
            selector: rareval_core::synth::Selector::Negative,
            inclusion_probability: 0.5,
        }];
    }
    let ds = Population::generate(&spec).unwrap().dataset().unwrap();
    let ci = CiOptions {
        resamples: 200,
        seed,
        ..CiOptions::default()
    };
    let mut o = EvaluationOutputs {
        seed,
        inputs: vec!["synthetic".into()],
        dataset: Some(DatasetSummary::of(&ds)),
        metrics: estimate_all(&ds, &Metric::ALL, &ci).unwrap(),
        assumed_deployment_prevalence: Some(0.01),
        ..EvaluationOutputs::default()
    };
    if let Ok(curve) = curves::pr_curve(&ds) {
        o.curves = Some(CurveSummary {
            auc: curves::auc(&curve).ok(),
            n_points: curve.len(),
            test_prevalence: curves::curve_prevalence(&curve),
            costs: None,
            operating_point: None,
        });
        let reported = ReportedSummaries {
            auc: true,
            f1: true,
            cost_justified: false,
        };
        o.warnings = curves::rare_event_warnings(&curve, 0.01, &reported, &WarningConfig::default());
    }
    if with_subsets {
        let opts = SubsetOptions {
            ci,
            permutations: 100,
            ..SubsetOptions::default()
        };
        o.subsets
            .push(robustness::subset_metrics(&ds, "site", &Metric::ALL, &opts).unwrap());
        o.variability.push(
            robustness::resampling_variability(&ds, Metric::Recall, ResamplingScheme::KFold(5), seed, 0.9).unwrap(),
        );
    }
    if with_runs {
        o.stability = Some(robustness::stability(&ds).unwrap());
    }
    o
}

fn validator() -> jsonschema::Validator {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn rendered_reports_validate(
        seed in any::<u64>(),
        prevalence in 0.02f64..0.5,
        with_subsets in any::<bool>(),
        with_runs in any::<bool>(),
        weighted in any::<bool>(),
        reproducible in any::<bool>(),
    ) {
        let o = outputs(seed, prevalence, with_subsets, with_runs, weighted);
        let checklist = prefill_checklist(&o);
        prop_assert_eq!(checklist.len(), 12);
        let opts = RenderOptions { reproducible, generated_at: Some("2026-01-01T00:00:00Z".into()) };
        let rendered = render_report(&o, &checklist, &opts).unwrap();
        let value: serde_json::Value = serde_json::from_str(&rendered.json).unwrap();
        let errors: Vec<String> = validator().iter_errors(&value).map(|e| e.to_string()).collect();
        prop_assert!(errors.is_empty(), "{:?}", errors);
        prop_assert_eq!(value.get("generated_at").is_none(), reproducible);
        let again = render_report(&o, &checklist, &opts).unwrap();
        prop_assert_eq!(&rendered.json, &again.json);
    }
}

#[test]
fn robustness_row_follows_subsets() {
    let status = |o: &EvaluationOutputs| {
        prefill_checklist(o)
            .into_iter()
            .find(|r| r.consideration == Consideration::Robustness)
            .unwrap()
            .status
    };
    assert_eq!(
        status(&outputs(1, 0.1, false, false, false)),
        ChecklistStatus::Unsatisfied
    );
    assert_ne!(
        status(&outputs(1, 0.1, true, true, false)),
        ChecklistStatus::Unsatisfied
    );
}

#[test]
fn schema_rejects_a_missing_row() {
    let o = outputs(2, 0.1, false, false, false);
    let mut checklist = prefill_checklist(&o);
    checklist.pop();
    let rendered = render_report(&o, &checklist, &RenderOptions::default()).unwrap();
    let value: serde_json::Value = serde_json::from_str(&rendered.json).unwrap();
    assert!(!validator().is_valid(&value));
}
