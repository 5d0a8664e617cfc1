// SPDX-License-Identifier: Apache-2.0

//! JSON and Markdown rendering of an evaluation report.
//!
//! Numbers in the Markdown are printed with the JSON number formatter, so
//! every value in the Markdown appears verbatim in the JSON.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

use super::{ChecklistItem, EvaluationOutputs};

pub const SCHEMA_VERSION: &str = "1.0.0";

/// JSON Schema of the report document.
pub const REPORT_SCHEMA: &str = include_str!("../../schema/report.schema.json");

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RenderOptions {
    /// Omit the timestamp so identical inputs give identical bytes.
    pub reproducible: bool,
    pub generated_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub json: String,
    pub markdown: String,
}

/// (section key, producing operation, seed label for randomized operations)
const SECTIONS: [(&str, &str, Option<&str>); 11] = [
    ("metrics", "metrics.estimate_all", Some("metrics")),
    ("precision_projection", "metrics.bayes_adjusted_precision", None),
    ("precision_at_k", "metrics.precision_at_k", None),
    ("curves", "curves.pr_curve", None),
    ("warnings", "curves.rare_event_warnings", None),
    ("benchmark", "metrics.benchmark_comparison", Some("metrics")),
    ("subsets", "robustness.subset_metrics", Some("robustness")),
    ("stability", "robustness.stability", None),
    ("variability", "robustness.resampling_variability", Some("robustness")),
    ("scle", "scle.aggregate", Some("scle")),
    ("human_ai", "metrics.concordance_and_override", None),
];

/// Seed a run should pass to the module that produces section `label`.
pub fn section_seed(seed: u64, label: &str) -> u64 {
    derive_seed(seed, label)
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(Error::from)
}

fn is_empty(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::Array(a) => a.is_empty(),
        _ => false,
    }
}

fn report_value(outputs: &EvaluationOutputs, checklist: &[ChecklistItem], options: &RenderOptions) -> Result<Value> {
    let all = to_value(outputs)?;
    let mut sections = Map::new();
    for (key, operation, seed_label) in SECTIONS {
        let result = all.get(key).cloned().unwrap_or(Value::Null);
        if is_empty(&result) {
            continue;
        }
        let mut section = Map::new();
        section.insert("operation".into(), json!(operation));
        if let Some(label) = seed_label {
            section.insert("seed".into(), json!(section_seed(outputs.seed, label)));
            section.insert("seed_label".into(), json!(label));
        }
        section.insert("result".into(), result);
        sections.insert(key.into(), Value::Object(section));
    }
    let mut doc = Map::new();
    doc.insert("schema_version".into(), json!(SCHEMA_VERSION));
    doc.insert(
        "tool".into(),
        json!({ "name": "rareval", "version": env!("CARGO_PKG_VERSION") }),
    );
    if !options.reproducible {
        if let Some(t) = &options.generated_at {
            doc.insert("generated_at".into(), json!(t));
        }
    }
    doc.insert(
        "provenance".into(),
        json!({ "seed": outputs.seed, "inputs": outputs.inputs }),
    );
    doc.insert(
        "settings".into(),
        json!({
            "assumed_deployment_prevalence": outputs.assumed_deployment_prevalence,
            "enrichment_justified": outputs.enrichment_justified,
            "attestations": to_value(&outputs.attestations)?,
        }),
    );
    doc.insert("dataset".into(), to_value(&outputs.dataset)?);
    doc.insert("sections".into(), Value::Object(sections));
    doc.insert("checklist".into(), to_value(&checklist)?);
    Ok(Value::Object(doc))
}

fn num(x: f64) -> String {
    Value::from(x).to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), num)
}

fn escape(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

/// Renders the report. Keys in the JSON are sorted and the document ends
/// with a newline.
pub fn render_report(
    outputs: &EvaluationOutputs,
    checklist: &[ChecklistItem],
    options: &RenderOptions,
) -> Result<RenderedReport> {
    let value = report_value(outputs, checklist, options)?;
    let mut json = serde_json::to_string_pretty(&value)?;
    json.push('\n');
    Ok(RenderedReport {
        json,
        markdown: markdown(outputs, checklist, options),
    })
}

fn markdown(o: &EvaluationOutputs, checklist: &[ChecklistItem], options: &RenderOptions) -> String {
    let mut md = String::from("# Evaluation report\n\n");
    let _ = writeln!(md, "- tool: rareval {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(md, "- schema version: {SCHEMA_VERSION}");
    let _ = writeln!(md, "- seed: {}", o.seed);
    if !o.inputs.is_empty() {
        let _ = writeln!(md, "- inputs: {}", o.inputs.join(", "));
    }
    if let (false, Some(t)) = (options.reproducible, &options.generated_at) {
        let _ = writeln!(md, "- generated at: {t}");
    }
    if let Some(p) = o.assumed_deployment_prevalence {
        let _ = writeln!(md, "- assumed deployment prevalence: {}", num(p));
    }

    md.push_str("\n## Dataset\n\n");
    match &o.dataset {
        None => md.push_str("No dataset summary.\n"),
        Some(d) => {
            md.push_str("| cases | positive | negative | ambiguous | excluded | prevalence | weighted | threshold |\n");
            md.push_str("|---|---|---|---|---|---|---|---|\n");
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                d.n_cases,
                d.positive,
                d.negative,
                d.ambiguous,
                d.excluded,
                opt(d.prevalence),
                d.weighted,
                opt(d.threshold)
            );
            if !d.strata.is_empty() {
                md.push_str("\n| stratum | inclusion probability | weight |\n|---|---|---|\n");
                for s in &d.strata {
                    let _ = writeln!(
                        md,
                        "| {} | {} | {} |",
                        escape(&s.stratum_id),
                        num(s.inclusion_probability),
                        num(s.weight())
                    );
                }
            }
        }
    }

    if !o.metrics.is_empty() {
        md.push_str(
            "\n## Metrics\n\n| metric | value | CI low | CI high | level | n effective | weighted | interval |\n",
        );
        md.push_str("|---|---|---|---|---|---|---|---|\n");
        for m in &o.metrics {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                m.metric,
                opt(m.value),
                opt(m.ci_low),
                opt(m.ci_high),
                num(m.ci_level),
                num(m.n_effective),
                m.weighted,
                serde_json::to_value(m.interval)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default()
            );
        }
    }

    if let Some(p) = &o.precision_projection {
        md.push_str("\n## Precision at deployment prevalence\n\n");
        let _ = writeln!(
            md,
            "Sensitivity {}, specificity {} and prevalence {} give projected precision {}.",
            num(p.sensitivity),
            num(p.specificity),
            num(p.assumed_prevalence),
            opt(p.projected_precision)
        );
    }

    if let Some(k) = &o.precision_at_k {
        md.push_str("\n## Precision at k\n\n");
        let _ = writeln!(
            md,
            "k = {}: precision {} (CI {} to {}), {} ambiguous case(s) in the top k{}.",
            k.k,
            opt(k.estimate.value),
            opt(k.estimate.ci_low),
            opt(k.estimate.ci_high),
            k.ambiguous_in_top_k,
            if k.ties_straddle_cut {
                "; tied scores straddle the cut"
            } else {
                ""
            }
        );
    }

    if let Some(c) = &o.curves {
        md.push_str("\n## Curves\n\n");
        let _ = writeln!(
            md,
            "- points: {}\n- AUC: {}\n- test-set prevalence: {}",
            c.n_points,
            opt(c.auc),
            opt(c.test_prevalence)
        );
        if let (Some(p), Some(costs)) = (&c.operating_point, &c.costs) {
            let _ = writeln!(
                md,
                "- operating point for costs FP {} / FN {}: threshold {}, recall {}, precision {}, specificity {}",
                num(costs.cost_fp),
                num(costs.cost_fn),
                if p.threshold.is_finite() {
                    num(p.threshold)
                } else {
                    "inf".into()
                },
                num(p.recall),
                opt(p.precision),
                num(p.specificity)
            );
        }
    }

    if !o.warnings.is_empty() {
        md.push_str("\n## Warnings\n\n");
        for w in &o.warnings {
            let code = serde_json::to_value(w.code)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            let _ = writeln!(md, "- `{code}`: {}", w.message);
        }
    }

    if let Some(b) = &o.benchmark {
        md.push_str("\n## Benchmark comparison\n\n| metric | model | benchmark |\n|---|---|---|\n");
        for (m, bm) in b.model.iter().zip(&b.benchmark) {
            let _ = writeln!(md, "| {} | {} | {} |", m.metric, opt(m.value), opt(bm.value));
        }
        let _ = writeln!(
            md,
            "\nFlagged by the model only: {} ({} correct); by the benchmark only: {} ({} correct); McNemar p = {}.",
            b.model_only_flags,
            b.model_only_correct,
            b.benchmark_only_flags,
            b.benchmark_only_correct,
            num(b.mcnemar_p_value)
        );
    }

    if !o.subsets.is_empty() || o.stability.is_some() || !o.variability.is_empty() {
        md.push_str("\n## Robustness\n");
    }
    for s in &o.subsets {
        let _ = writeln!(md, "\n### Subsets by `{}`\n", escape(&s.attribute));
        md.push_str("| category | n | errors |");
        for m in &s.overall {
            let _ = write!(md, " {} |", m.metric);
        }
        md.push_str("\n|---|---|---|");
        md.push_str(&"---|".repeat(s.overall.len()));
        md.push('\n');
        for c in &s.categories {
            let _ = write!(md, "| {} | {} | {} |", escape(&c.category), c.n, c.errors);
            for e in &c.estimates {
                let _ = write!(md, " {} |", opt(e.value));
            }
            md.push('\n');
        }
        let h = &s.heterogeneity;
        let test = serde_json::to_value(h.test)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let _ = writeln!(
            md,
            "\nHeterogeneity ({test}): statistic {}, df {}, p = {}, flagged: {}.",
            num(h.statistic),
            h.df,
            num(h.p_value),
            h.flagged
        );
    }
    if let Some(s) = &o.stability {
        let _ = writeln!(
            md,
            "\n### Stability\n\n{} cases, {} runs: unanimity {}, pairwise agreement {}.",
            s.n_cases,
            s.n_runs,
            num(s.unanimity_rate),
            num(s.pairwise_agreement)
        );
    }
    for v in &o.variability {
        let scheme = match v.scheme {
            crate::robustness::ResamplingScheme::Bootstrap(n) => format!("bootstrap, {n} resamples"),
            crate::robustness::ResamplingScheme::KFold(k) => format!("{k}-fold"),
        };
        let _ = writeln!(
            md,
            "\n### Variability of {} ({scheme})\n\nMean {}, sd {}, interval {} to {}.",
            v.metric,
            opt(v.mean),
            opt(v.sd),
            opt(v.ci_low),
            opt(v.ci_high)
        );
    }

    if let Some(s) = &o.scle {
        md.push_str("\n## Case-level examination\n\n");
        if s.no_findings {
            md.push_str("No findings: no sampled case was annotated.\n");
        } else {
            let _ = writeln!(md, "Annotated cases: {}.", s.n_annotations);
            md.push_str("\nNever events:\n\n");
            if s.never_events.is_empty() {
                md.push_str("- none\n");
            }
            for n in &s.never_events {
                let _ = writeln!(md, "- `{}` ({})", n.case_id, n.cell);
            }
            if let Some(rate) = s.triviality.rate {
                let _ = writeln!(
                    md,
                    "\nTriviality rate among true positives: {} ({} of {}; CI {} to {}).",
                    num(rate),
                    s.triviality.trivial,
                    s.triviality.judged,
                    opt(s.triviality.ci_low),
                    opt(s.triviality.ci_high)
                );
            }
        }
    }

    if let Some(h) = &o.human_ai {
        let _ = writeln!(
            md,
            "\n## Human-AI interaction\n\n{} decisions: concordance {}, override rate {}.",
            h.n,
            num(h.concordance),
            num(h.override_rate)
        );
    }

    md.push_str("\n## Checklist\n\n| consideration | status | rationale | evidence |\n|---|---|---|---|\n");
    for item in checklist {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} |",
            item.consideration.title(),
            item.status.as_str(),
            escape(&item.rationale),
            item.evidence.join(", ")
        );
    }
    md
}
