// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rareval_core::curves::{self, CostSpec, CurvePoint, ReportedSummaries, WarningConfig};
use rareval_core::datamodel::{self, parse_binary, Format};
use rareval_core::design::{self, FlagCountBasis, PairPrevalenceSpec, PrecisionStudyAssumptions, SampleSizeSearch};
use rareval_core::metrics::{self, CiOptions};
use rareval_core::report::{
    self, render_report, section_seed, Attestation, Consideration, CurveSummary, DatasetSummary, EvaluationOutputs,
    PrecisionProjection, RenderOptions,
};
use rareval_core::robustness::{self, ResamplingScheme, SubsetOptions};
use rareval_core::scle::{self, ScleAnnotation, ScleConfig, ScleSample};
use rareval_core::synth::{self, PopulationSpec};
use rareval_core::{Dataset, Metric};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::config::{merge, read_as};
use crate::{CliError, Context};

type Res<T = ()> = Result<T, CliError>;

pub fn dispatch(command: Command, ctx: &Context) -> Res {
    let cfg = ctx.config.as_ref();
    match command {
        Command::Evaluate(a) => evaluate(merge(a, cfg, "evaluate")?, ctx),
        Command::AdjustPrecision(a) => adjust_precision(merge(a, cfg, "adjust_precision")?),
        Command::SizeStudy(a) => size_study(merge(a, cfg, "size_study")?, ctx),
        Command::PairPrevalence(a) => pair_prevalence(merge(a, cfg, "pair_prevalence")?),
        Command::Scle(ScleCommand::Sample(a)) => scle_sample(merge(a, cfg, "scle_sample")?, ctx),
        Command::Scle(ScleCommand::Ingest(a)) => scle_ingest(merge(a, cfg, "scle_ingest")?, ctx),
        Command::Scle(ScleCommand::Aggregate(a)) => scle_aggregate(merge(a, cfg, "scle_aggregate")?, ctx),
        Command::Scle(ScleCommand::ApplyVerdicts(a)) => scle_apply(merge(a, cfg, "scle_apply_verdicts")?, ctx),
        Command::Subsets(a) => subsets(merge(a, cfg, "subsets")?, ctx),
        Command::Stability(a) => stability(merge(a, cfg, "stability")?),
        Command::Resample(a) => resample(merge(a, cfg, "resample")?, ctx),
        Command::Synth(a) => synth_cmd(merge(a, cfg, "synth")?, ctx),
        Command::Checklist(a) => checklist(merge(a, cfg, "checklist")?, ctx),
    }
}

fn print_json<T: Serialize>(value: &T) -> Res {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Res<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn write_out(ctx: &Context, name: impl AsRef<Path>, contents: &str) -> Res<PathBuf> {
    fs::create_dir_all(&ctx.out_dir).map_err(|e| CliError::input(format!("{}: {e}", ctx.out_dir.display())))?;
    let path = ctx.out_dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn read_text(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load(input: &InputArgs) -> Res<Dataset> {
    let format = match input.format {
        Some(FormatArg::Csv) => Format::Csv,
        Some(FormatArg::Jsonl) => Format::Jsonl,
        None => Format::from_path(&input.input).ok_or_else(|| {
            CliError::input(format!(
                "{}: cannot infer format from extension; pass --format",
                input.input.display()
            ))
        })?,
    };
    let mut ds = datamodel::ingest(&input.input, format)?;
    if let Some(design) = &input.design {
        ds = ds.with_design(datamodel::read_design(design)?)?;
    }
    Ok(ds)
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn parse_metric(name: &str) -> Res<Metric> {
    name.parse::<Metric>().map_err(|e| CliError::input(e.to_string()))
}

/// Predictions from a threshold; an infinite threshold predicts every case negative.
fn threshold_dataset(ds: &Dataset, threshold: f64) -> Res<Dataset> {
    if threshold == f64::INFINITY {
        return Ok(ds
            .map_cases(|c| {
                let mut out = c.clone();
                out.predicted = Some(false);
                Ok(out)
            })?
            .with_metadata(datamodel::THRESHOLD_METADATA_KEY, "inf"));
    }
    Ok(datamodel::apply_threshold(ds, threshold)?)
}

fn read_human_labels(path: &Path) -> Res<BTreeMap<String, bool>> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut labels = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let (Some(id), Some(label)) = (record.get(0), record.get(1)) else {
            return Err(CliError::input(format!(
                "{}: row {}: need case_id,label",
                path.display(),
                i + 1
            )));
        };
        let value =
            parse_binary(label).map_err(|e| CliError::input(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        if labels.insert(id.to_string(), value).is_some() {
            return Err(CliError::input(format!("{}: duplicate case_id `{id}`", path.display())));
        }
    }
    Ok(labels)
}

fn evaluate(a: EvaluateArgs, ctx: &Context) -> Res {
    let raw = load(&a.input)?;
    let chosen = [a.threshold.is_some(), a.k.is_some(), a.cost_fp.is_some()]
        .iter()
        .filter(|&&b| b)
        .count();
    if chosen > 1 {
        return Err(CliError::input(
            "give at most one of --threshold, --k, or --cost-fp/--cost-fn",
        ));
    }
    if a.cost_fp.is_some() && a.prevalence.is_none() {
        return Err(CliError::input("cost-based operating points need --prevalence"));
    }
    if let Some(p) = a.prevalence {
        if !(p > 0.0 && p < 1.0) {
            return Err(CliError::input(format!("--prevalence must be in (0, 1), got {p}")));
        }
    }

    let has_scores = !raw.is_empty() && raw.cases().iter().all(|c| c.score.is_some());
    let curve: Option<Vec<CurvePoint>> = if has_scores {
        Some(curves::pr_curve(&raw)?)
    } else {
        None
    };

    let mut outputs = EvaluationOutputs {
        seed: ctx.seed,
        inputs: vec![file_label(&a.input.input)],
        assumed_deployment_prevalence: a.prevalence,
        enrichment_justified: a.enrichment_justified,
        ..EvaluationOutputs::default()
    };
    if let Some(d) = &a.input.design {
        outputs.inputs.push(file_label(d));
    }

    let mut costs = None;
    let mut operating_point = None;
    let ds = if let Some(t) = a.threshold {
        threshold_dataset(&raw, t)?
    } else if let Some(k) = a.k {
        let at_k = metrics::precision_at_k(&raw, k)?;
        let cut = at_k.cutoff_score;
        outputs.precision_at_k = Some(at_k);
        // ties at the cut are predicted positive too
        threshold_dataset(&raw, cut)?
    } else if let (Some(cfp), Some(cfn)) = (a.cost_fp, a.cost_fn) {
        let spec = CostSpec::new(cfp, cfn)?;
        let Some(curve) = &curve else {
            return Err(CliError::input(
                "cost-based operating points need a score on every case",
            ));
        };
        let point = curves::select_operating_point(curve, &spec, a.prevalence.unwrap_or_default())?;
        let ds = threshold_dataset(&raw, point.threshold)?;
        costs = Some(spec);
        operating_point = Some(point);
        ds
    } else {
        raw.clone()
    };
    let has_predictions = ds.cases().iter().all(|c| c.predicted.is_some());
    if !has_predictions {
        return Err(CliError::input(
            "cases lack predicted labels; give --threshold, --k, or --cost-fp/--cost-fn",
        ));
    }
    outputs.dataset = Some(DatasetSummary::of(&ds));

    let ci = CiOptions {
        level: a.ci_level,
        resamples: a.resamples,
        seed: section_seed(ctx.seed, "metrics"),
    };
    outputs.metrics = metrics::estimate_all(&ds, &Metric::ALL, &ci)?;

    if let Some(prev) = a.prevalence {
        let value = |name: &str| outputs.metrics.iter().find(|m| m.metric == name).and_then(|m| m.value);
        if let (Some(se), Some(sp)) = (value("recall"), value("specificity")) {
            outputs.precision_projection = Some(PrecisionProjection {
                sensitivity: se,
                specificity: sp,
                assumed_prevalence: prev,
                projected_precision: metrics::bayes_adjusted_precision(se, sp, prev)?,
            });
        }
    }

    if let Some(curve) = &curve {
        let auc = curves::auc(curve).ok();
        outputs.curves = Some(CurveSummary {
            auc,
            n_points: curve.len(),
            test_prevalence: curves::curve_prevalence(curve),
            costs,
            operating_point,
        });
        write_out(ctx, "curve.csv", &curves::curve_to_csv(curve))?;
        if let Some(prev) = a.prevalence {
            let reported = ReportedSummaries {
                auc: a.report_auc,
                f1: a.report_f1,
                cost_justified: a.cost_justified,
            };
            outputs.warnings = curves::rare_event_warnings(curve, prev, &reported, &WarningConfig::default());
        }
    }

    if ds.cases().iter().any(|c| c.benchmark_predicted.is_some()) {
        outputs.benchmark = Some(metrics::benchmark_comparison(&ds, &ci)?);
    }

    let robust_seed = section_seed(ctx.seed, "robustness");
    let subset_opts = SubsetOptions {
        ci: CiOptions {
            seed: robust_seed,
            ..ci
        },
        alpha: 0.05,
        permutations: 2000,
    };
    for attr in &a.subsets {
        outputs
            .subsets
            .push(robustness::subset_metrics(&ds, attr, &Metric::ALL, &subset_opts)?);
    }
    if ds.cases().iter().any(|c| c.repeated_labels.is_some()) {
        outputs.stability = Some(robustness::stability(&ds)?);
    }
    if a.variability > 0 {
        for metric in [Metric::Recall, Metric::Precision] {
            outputs.variability.push(robustness::resampling_variability(
                &ds,
                metric,
                ResamplingScheme::Bootstrap(a.variability),
                robust_seed,
                a.ci_level,
            )?);
        }
    }
    if let Some(path) = &a.scle_summary {
        outputs.scle = Some(read_as(path)?);
        outputs.inputs.push(file_label(path));
    }
    if let Some(path) = &a.human_labels {
        outputs.human_ai = Some(metrics::concordance_and_override(&ds, &read_human_labels(path)?)?);
        outputs.inputs.push(file_label(path));
    }
    if let Some(path) = &a.attestations {
        outputs.attestations = read_attestations(path)?;
    }

    write_out(ctx, "outputs.json", &to_json(&outputs)?)?;
    let written = write_report(&outputs, ctx)?;
    let warnings: Vec<&str> = outputs.warnings.iter().map(|w| w.message.as_str()).collect();
    print_json(&json!({ "written": written, "warnings": warnings }))
}

fn read_attestations(path: &Path) -> Res<BTreeMap<Consideration, Attestation>> {
    read_as(path)
}

fn write_report(outputs: &EvaluationOutputs, ctx: &Context) -> Res<Vec<String>> {
    let checklist = report::prefill_checklist(outputs);
    let rendered = render_report(
        outputs,
        &checklist,
        &RenderOptions {
            reproducible: ctx.reproducible,
            generated_at: ctx.generated_at(),
        },
    )?;
    let json_path = write_out(ctx, "report.json", &rendered.json)?;
    let md_path = write_out(ctx, "report.md", &rendered.markdown)?;
    Ok(vec![json_path.display().to_string(), md_path.display().to_string()])
}

fn adjust_precision(a: AdjustPrecisionArgs) -> Res {
    let projected = metrics::bayes_adjusted_precision(a.sensitivity, a.specificity, a.prevalence)?;
    print_json(&json!({
        "sensitivity": a.sensitivity,
        "specificity": a.specificity,
        "prevalence": a.prevalence,
        "projected_precision": projected,
    }))
}

fn size_study(a: SizeStudyArgs, ctx: &Context) -> Res {
    let mut assumptions: PrecisionStudyAssumptions = match &a.assumptions {
        Some(path) => read_as(path)?,
        None => {
            let need = |v: Option<f64>, name: &str| {
                v.ok_or_else(|| CliError::input(format!("--{name} is required without --assumptions")))
            };
            let overlap = need(a.overlap_rate, "overlap-rate")?;
            let (fa, fb) = match a.flag_count {
                Some(count) => {
                    let base = a
                        .flag_count_sample
                        .or(a.sample_size)
                        .ok_or_else(|| CliError::input("--flag-count needs --flag-count-sample or --sample-size"))?;
                    let basis = match a.flag_count_basis {
                        BasisArg::Union => FlagCountBasis::Union,
                        BasisArg::Sum => FlagCountBasis::Sum,
                    };
                    let f = design::equal_flag_rate(base, count, overlap, basis)?;
                    (f, f)
                }
                None => (need(a.flag_rate_a, "flag-rate-a")?, need(a.flag_rate_b, "flag-rate-b")?),
            };
            PrecisionStudyAssumptions {
                sample_size: a.sample_size.unwrap_or(0),
                flag_rate_a: fa,
                flag_rate_b: fb,
                overlap_rate: overlap,
                precision_a: need(a.precision_a, "precision-a")?,
                precision_b: need(a.precision_b, "precision-b")?,
                alpha: 0.05,
                n_replicates: 2000,
                seed: ctx.seed,
                shared_precision: None,
                randomized: true,
            }
        }
    };
    if let Some(n) = a.sample_size {
        assumptions.sample_size = n;
    }
    if let Some(x) = a.shared_precision {
        assumptions.shared_precision = Some(x);
    }
    if let Some(x) = a.alpha {
        assumptions.alpha = x;
    }
    if let Some(x) = a.replicates {
        assumptions.n_replicates = x;
    }
    if a.conservative {
        assumptions.randomized = false;
    }
    if a.assumptions.is_none() {
        assumptions.seed = ctx.seed;
    }

    match a.target_power {
        Some(target) => {
            let search = SampleSizeSearch {
                min_size: a.min_size,
                max_size: a.max_size,
            };
            let result = design::solve_sample_size(&assumptions, target, &search)?;
            print_json(&json!({ "assumptions": assumptions, "target_power": target, "result": result }))
        }
        None => {
            if assumptions.sample_size == 0 {
                return Err(CliError::input("give --sample-size or --target-power"));
            }
            let power = design::simulate_precision_power(&assumptions)?;
            print_json(&json!({ "assumptions": assumptions, "result": power }))
        }
    }
}

fn pair_prevalence(a: PairPrevalenceArgs) -> Res {
    let result = design::pair_prevalence(&PairPrevalenceSpec {
        n_records: a.n,
        duplicate_fraction: a.duplicate_fraction,
    })?;
    print_json(&result)
}

fn scle_sample(a: ScleSampleArgs, ctx: &Context) -> Res {
    let mut ds = load(&a.input)?;
    if let Some(t) = a.threshold {
        ds = threshold_dataset(&ds, t)?;
    }
    let config = ScleConfig {
        n_fp: a.n_fp,
        n_fn: a.n_fn,
        n_tp: a.n_tp,
        n_tn: a.n_tn,
        substratify_by: a.substratify_by.clone(),
        boundary_bins: a.boundary_bins,
        threshold: a.threshold.or_else(|| ds.recorded_threshold()),
        benchmark_mode: a.benchmark_mode,
        disagreement_oversample_factor: a.oversample,
        seed: section_seed(ctx.seed, "scle"),
    };
    let sample = scle::draw_sample(&ds, &config)?;
    let generated_at = ctx.generated_at().unwrap_or_default();
    let sheet = scle::emit_review_sheet(&sample, &ds, &a.context, &generated_at)?;
    let sample_path = write_out(ctx, "scle_sample.json", &to_json(&sample)?)?;
    let sheet_path = write_out(ctx, "review_sheet.csv", &sheet)?;
    for w in sample.warnings() {
        eprintln!("warning: {w}");
    }
    print_json(&json!({
        "written": [sample_path.display().to_string(), sheet_path.display().to_string()],
        "sampled": sample.rows.len(),
        "config_hash": sample.config_hash,
        "warnings": sample.warnings(),
    }))
}

fn scle_ingest(a: ScleIngestArgs, ctx: &Context) -> Res {
    let sample: ScleSample = read_as(&a.sample)?;
    let sheet = scle::ingest_annotations(&read_text(&a.sheet)?, &sample)?;
    for id in &sheet.missing_triviality {
        eprintln!("warning: true positive `{id}` has no triviality judgement");
    }
    let path = write_out(ctx, "annotations.json", &to_json(&sheet.annotations)?)?;
    print_json(&json!({
        "written": [path.display().to_string()],
        "annotations": sheet.annotations.len(),
        "missing_triviality": sheet.missing_triviality,
    }))
}

fn scle_aggregate(a: ScleAggregateArgs, ctx: &Context) -> Res {
    let sample: ScleSample = read_as(&a.sample)?;
    let annotations: Vec<ScleAnnotation> = read_as(&a.annotations)?;
    let opts = CiOptions {
        level: a.ci_level,
        resamples: a.resamples,
        seed: section_seed(ctx.seed, "scle"),
    };
    let summary = scle::aggregate(&annotations, &sample, &opts)?;
    let json_path = write_out(ctx, "scle_summary.json", &to_json(&summary)?)?;
    let md_path = write_out(ctx, "scle_summary.md", &scle::render_summary_markdown(&summary))?;
    print_json(&json!({
        "written": [json_path.display().to_string(), md_path.display().to_string()],
        "no_findings": summary.no_findings,
    }))
}

fn scle_apply(a: ScleApplyArgs, ctx: &Context) -> Res {
    let ds = load(&a.input)?;
    let annotations: Vec<ScleAnnotation> = read_as(&a.annotations)?;
    let reviewed = scle::apply_verdicts(&ds, &annotations)?;
    let format = Format::from_path(&a.output).unwrap_or(Format::Csv);
    let text = datamodel::emit_to_string(&reviewed, format)?;
    let path = write_out(ctx, &a.output, &text)?;
    print_json(&json!({ "written": [path.display().to_string()] }))
}

fn subsets(a: SubsetsArgs, ctx: &Context) -> Res {
    let ds = load(&a.input)?;
    let metric_list = a.metrics.iter().map(|m| parse_metric(m)).collect::<Res<Vec<_>>>()?;
    let opts = SubsetOptions {
        ci: CiOptions {
            level: a.ci_level,
            seed: section_seed(ctx.seed, "robustness"),
            ..CiOptions::default()
        },
        alpha: a.alpha,
        permutations: a.permutations,
    };
    print_json(&robustness::subset_metrics(&ds, &a.attribute, &metric_list, &opts)?)
}

fn stability(a: InputArgs) -> Res {
    let ds = load(&a)?;
    print_json(&robustness::stability(&ds)?)
}

fn resample(a: ResampleArgs, ctx: &Context) -> Res {
    let ds = load(&a.input)?;
    let scheme = match a.scheme {
        SchemeArg::Bootstrap => ResamplingScheme::Bootstrap(a.n),
        SchemeArg::KFold => ResamplingScheme::KFold(a.n),
    };
    let summary = robustness::resampling_variability(
        &ds,
        parse_metric(&a.metric)?,
        scheme,
        section_seed(ctx.seed, "robustness"),
        a.ci_level,
    )?;
    print_json(&summary)
}

fn synth_cmd(a: SynthArgs, ctx: &Context) -> Res {
    let spec: PopulationSpec = match &a.spec {
        Some(path) => read_as(path)?,
        None => {
            let (Some(n), Some(p)) = (a.n, a.prevalence) else {
                return Err(CliError::input("give --spec, or both --n and --prevalence"));
            };
            PopulationSpec::new(n, p, ctx.seed)
        }
    };
    let (ds, truth) = synth::generate(&spec)?;
    let (name, format) = match a.format {
        FormatArg::Csv => ("dataset.csv", Format::Csv),
        FormatArg::Jsonl => ("dataset.jsonl", Format::Jsonl),
    };
    let data_path = write_out(ctx, name, &datamodel::emit_to_string(&ds, format)?)?;
    let truth_path = write_out(ctx, "truth.json", &synth::truth_sidecar_json(&spec, &truth)?)?;
    print_json(&json!({
        "written": [data_path.display().to_string(), truth_path.display().to_string()],
        "cases": ds.len(),
    }))
}

fn checklist(a: ChecklistArgs, ctx: &Context) -> Res {
    let mut outputs: EvaluationOutputs = match &a.outputs {
        Some(path) => read_as(path)?,
        None => EvaluationOutputs {
            seed: ctx.seed,
            ..EvaluationOutputs::default()
        },
    };
    if let Some(path) = &a.attestations {
        outputs.attestations = read_attestations(path)?;
    }
    let written = write_report(&outputs, ctx)?;
    print_json(&json!({ "written": written }))
}
