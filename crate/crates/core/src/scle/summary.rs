// SPDX-License-Identifier: Apache-2.0

//! Aggregation of reviewer annotations.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{Cell, CiOptions};
use crate::rng::substream;
use crate::stats;

use super::{DiagnosticTag, ScleAnnotation, ScleSample, Triviality};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagFrequency {
    pub count: usize,
    /// Share of the cell's sampled cases carrying the tag.
    pub sample_rate: f64,
    /// Weighted projection onto the whole cell population.
    pub projected_count: f64,
    pub projected_ci_low: f64,
    pub projected_ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub population: usize,
    pub sampled: usize,
    pub annotated: usize,
    pub tags: BTreeMap<DiagnosticTag, TagFrequency>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrivialityRate {
    pub trivial: usize,
    pub non_trivial: usize,
    pub unclear: usize,
    /// Sampled true positives with a triviality judgement.
    pub judged: usize,
    pub rate: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeverEventItem {
    pub case_id: String,
    pub cell: Cell,
    pub reviewer: String,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemedialAction {
    pub code: String,
    pub tag: DiagnosticTag,
    pub case_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScleSummary {
    /// True when there are no annotations at all.
    pub no_findings: bool,
    pub n_annotations: usize,
    pub config_hash: String,
    pub cells: BTreeMap<String, CellSummary>,
    /// Weighted projection of each tag over all sampled cells.
    pub projected_totals: BTreeMap<DiagnosticTag, TagFrequency>,
    pub triviality: TrivialityRate,
    pub never_events: Vec<NeverEventItem>,
    /// attribute -> category -> tag -> count, when the sample was substratified.
    pub by_subgroup: BTreeMap<String, BTreeMap<String, BTreeMap<DiagnosticTag, usize>>>,
    pub remedial_actions: Vec<RemedialAction>,
    pub verdicts: usize,
    pub ci_level: f64,
}

fn remedial_code(tag: DiagnosticTag) -> &'static str {
    match tag {
        DiagnosticTag::TestSetIssue => "update_annotations_or_guidelines",
        DiagnosticTag::InputDataIssue => "improve_data_quality",
        DiagnosticTag::UnexpectedError => "review_training_or_threshold",
        DiagnosticTag::NeverEvent => "escalate",
    }
}

/// Percentile interval of `scale * Binomial(n, k / n) / n` over seeded draws.
fn binomial_percentile(k: usize, n: usize, scale: f64, opts: &CiOptions, label: &str) -> (f64, f64) {
    if n == 0 || k == 0 || k == n {
        let v = if n == 0 { 0.0 } else { scale * k as f64 / n as f64 };
        return (v, v);
    }
    let dist = Binomial::new(n as u64, k as f64 / n as f64).expect("valid binomial");
    let mut rng = substream(opts.seed, label, 0);
    let mut draws: Vec<f64> = (0..opts.resamples)
        .map(|_| scale * dist.sample(&mut rng) as f64 / n as f64)
        .collect();
    draws.sort_by(f64::total_cmp);
    let tail = (1.0 - opts.level) / 2.0;
    (
        stats::quantile_sorted(&draws, tail).unwrap_or(f64::NAN),
        stats::quantile_sorted(&draws, 1.0 - tail).unwrap_or(f64::NAN),
    )
}

/// Summarizes annotations against the sample they were drawn for.
///
/// Within a sampling cell every case has the same weight, so resampling the
/// cell's reviewed cases with replacement is a binomial draw of the tagged
/// count; projected intervals are percentile intervals of those draws, and
/// the all-cell total sums independent per-cell draws.
pub fn aggregate(annotations: &[ScleAnnotation], sample: &ScleSample, opts: &CiOptions) -> Result<ScleSummary> {
    let mut by_id: HashMap<&str, &ScleAnnotation> = HashMap::new();
    for a in annotations {
        if sample.row(&a.case_id).is_none() {
            return Err(Error::invalid(format!(
                "annotation for `{}` is not in the sample",
                a.case_id
            )));
        }
        if by_id.insert(a.case_id.as_str(), a).is_some() {
            return Err(Error::invalid(format!("two annotations for `{}`", a.case_id)));
        }
    }

    let mut cells: BTreeMap<String, CellSummary> = BTreeMap::new();
    for (key, &population) in &sample.cell_population {
        cells.insert(
            key.clone(),
            CellSummary {
                population,
                sampled: sample.cell_sample_size.get(key).copied().unwrap_or(0),
                annotated: 0,
                tags: BTreeMap::new(),
            },
        );
    }
    let mut triviality = TrivialityRate {
        trivial: 0,
        non_trivial: 0,
        unclear: 0,
        judged: 0,
        rate: None,
        ci_low: None,
        ci_high: None,
    };
    let mut never_events = Vec::new();
    let mut by_subgroup: BTreeMap<String, BTreeMap<String, BTreeMap<DiagnosticTag, usize>>> = BTreeMap::new();
    let mut tag_counts: BTreeMap<(String, DiagnosticTag), usize> = BTreeMap::new();
    let mut verdicts = 0;

    for row in &sample.rows {
        let Some(a) = by_id.get(row.case_id.as_str()) else {
            continue;
        };
        let key = row.sampling_cell();
        if let Some(c) = cells.get_mut(&key) {
            c.annotated += 1;
        }
        for &tag in &a.tags {
            *tag_counts.entry((key.clone(), tag)).or_default() += 1;
            for (attr, category) in &row.strata {
                if attr == "boundary_bin" {
                    continue;
                }
                *by_subgroup
                    .entry(attr.clone())
                    .or_default()
                    .entry(category.clone())
                    .or_default()
                    .entry(tag)
                    .or_default() += 1;
            }
        }
        if a.has(DiagnosticTag::NeverEvent) {
            never_events.push(NeverEventItem {
                case_id: a.case_id.clone(),
                cell: row.classification_cell,
                reviewer: a.reviewer.clone(),
                note: a.note.clone(),
            });
        }
        if row.classification_cell == Cell::Tp {
            match a.triviality {
                Some(Triviality::Trivial) => triviality.trivial += 1,
                Some(Triviality::NonTrivial) => triviality.non_trivial += 1,
                Some(Triviality::Unclear) => triviality.unclear += 1,
                None => {}
            }
        }
        if a.verdict.is_some() {
            verdicts += 1;
        }
    }

    for ((key, tag), &count) in &tag_counts {
        let cell = cells.get_mut(key).expect("cell of a sampled row");
        let (lo, hi) = binomial_percentile(
            count,
            cell.sampled,
            cell.population as f64,
            opts,
            &format!("scle/aggregate/{key}/{}", tag.as_str()),
        );
        cell.tags.insert(
            *tag,
            TagFrequency {
                count,
                sample_rate: count as f64 / cell.sampled as f64,
                projected_count: cell.population as f64 * count as f64 / cell.sampled as f64,
                projected_ci_low: lo,
                projected_ci_high: hi,
            },
        );
    }

    let mut projected_totals = BTreeMap::new();
    for tag in DiagnosticTag::ALL {
        let involved: Vec<(&CellSummary, usize)> = cells
            .values()
            .filter_map(|c| c.tags.get(&tag).map(|f| (c, f.count)))
            .collect();
        if involved.is_empty() {
            continue;
        }
        let sampled: usize = cells.values().map(|c| c.sampled).sum();
        let count: usize = involved.iter().map(|(_, k)| k).sum();
        let point: f64 = involved
            .iter()
            .map(|(c, k)| c.population as f64 * *k as f64 / c.sampled as f64)
            .sum();
        let mut rng = substream(opts.seed, &format!("scle/aggregate/total/{}", tag.as_str()), 0);
        let mut draws: Vec<f64> = (0..opts.resamples)
            .map(|_| {
                involved
                    .iter()
                    .map(|(c, k)| {
                        let p = *k as f64 / c.sampled as f64;
                        let x = if p >= 1.0 {
                            c.sampled as u64
                        } else {
                            Binomial::new(c.sampled as u64, p)
                                .expect("valid binomial")
                                .sample(&mut rng)
                        };
                        c.population as f64 * x as f64 / c.sampled as f64
                    })
                    .sum()
            })
            .collect();
        draws.sort_by(f64::total_cmp);
        let tail = (1.0 - opts.level) / 2.0;
        projected_totals.insert(
            tag,
            TagFrequency {
                count,
                sample_rate: count as f64 / sampled as f64,
                projected_count: point,
                projected_ci_low: stats::quantile_sorted(&draws, tail).unwrap_or(point),
                projected_ci_high: stats::quantile_sorted(&draws, 1.0 - tail).unwrap_or(point),
            },
        );
    }

    triviality.judged = triviality.trivial + triviality.non_trivial + triviality.unclear;
    if triviality.judged > 0 {
        let (lo, hi) = binomial_percentile(
            triviality.trivial,
            triviality.judged,
            1.0,
            opts,
            "scle/aggregate/triviality",
        );
        triviality.rate = Some(triviality.trivial as f64 / triviality.judged as f64);
        triviality.ci_low = Some(lo);
        triviality.ci_high = Some(hi);
    }

    let remedial_actions = projected_totals
        .iter()
        .map(|(&tag, f)| RemedialAction {
            code: remedial_code(tag).to_string(),
            tag,
            case_count: f.count,
        })
        .collect();

    Ok(ScleSummary {
        no_findings: by_id.is_empty(),
        n_annotations: by_id.len(),
        config_hash: sample.config_hash.clone(),
        cells,
        projected_totals,
        triviality,
        never_events,
        by_subgroup,
        remedial_actions,
        verdicts,
        ci_level: opts.level,
    })
}

/// A new dataset with reviewers' verdicts replacing reference labels.
///
/// The input is left untouched; the count of applied verdicts is recorded
/// in the metadata under `verdicts_applied`.
pub fn apply_verdicts(dataset: &Dataset, annotations: &[ScleAnnotation]) -> Result<Dataset> {
    let mut verdicts = HashMap::new();
    for a in annotations {
        if let Some(v) = a.verdict {
            if dataset.get(&a.case_id).is_none() {
                return Err(Error::invalid(format!("verdict for unknown case `{}`", a.case_id)));
            }
            verdicts.insert(a.case_id.as_str(), v);
        }
    }
    let updated = dataset.map_cases(|c| {
        let mut c = c.clone();
        if let Some(&v) = verdicts.get(c.case_id.as_str()) {
            c.reference = v;
        }
        Ok(c)
    })?;
    Ok(updated.with_metadata("verdicts_applied", verdicts.len().to_string()))
}

fn fmt_num(x: f64) -> String {
    serde_json::Number::from_f64(x)
        .map(|n| n.to_string())
        .unwrap_or_else(|| "null".into())
}

pub fn render_summary_markdown(summary: &ScleSummary) -> String {
    let mut md = String::from("# Case-level examination summary\n\n");
    let _ = writeln!(md, "Sample config hash: `{}`\n", summary.config_hash);
    if summary.no_findings {
        md.push_str("No findings: no sampled case was annotated.\n");
        return md;
    }
    let _ = writeln!(md, "Annotated cases: {}\n", summary.n_annotations);
    md.push_str("## Never events\n\n");
    if summary.never_events.is_empty() {
        md.push_str("None recorded.\n\n");
    } else {
        for n in &summary.never_events {
            let _ = writeln!(
                md,
                "- `{}` ({}){}",
                n.case_id,
                n.cell,
                n.note.as_deref().map(|s| format!(": {s}")).unwrap_or_default()
            );
        }
        md.push('\n');
    }
    md.push_str("## Tags by cell\n\n| cell | population | sampled | annotated | tag | count | projected | CI low | CI high |\n|---|---|---|---|---|---|---|---|---|\n");
    for (key, c) in &summary.cells {
        for (tag, f) in &c.tags {
            let _ = writeln!(
                md,
                "| {key} | {} | {} | {} | {} | {} | {} | {} | {} |",
                c.population,
                c.sampled,
                c.annotated,
                tag.as_str(),
                f.count,
                fmt_num(f.projected_count),
                fmt_num(f.projected_ci_low),
                fmt_num(f.projected_ci_high)
            );
        }
    }
    md.push_str("\n## Triviality of true positives\n\n");
    let t = &summary.triviality;
    match t.rate {
        Some(rate) => {
            let _ = writeln!(
                md,
                "{} of {} judged true positives trivial: rate {} (CI {} to {}).",
                t.trivial,
                t.judged,
                fmt_num(rate),
                fmt_num(t.ci_low.unwrap_or(rate)),
                fmt_num(t.ci_high.unwrap_or(rate))
            );
        }
        None => md.push_str("No triviality judgements.\n"),
    }
    if !summary.remedial_actions.is_empty() {
        md.push_str("\n## Suggested follow-up (advisory)\n\n");
        for a in &summary.remedial_actions {
            let _ = writeln!(md, "- `{}`: {} case(s) tagged {}", a.code, a.case_count, a.tag.as_str());
        }
    }
    md
}
