// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Prevalence-aware evaluation of rare-event classifiers.
#[derive(Debug, Parser)]
#[command(name = "rareval", version, about, max_term_width = 100)]
pub struct Cli {
    /// Seed for every random procedure; module streams are derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Omit timestamps so identical inputs give byte-identical outputs.
    #[arg(long, global = true)]
    pub reproducible: bool,

    /// TOML or JSON file whose values override the command-line flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Output directory [env: RAREVAL_OUT_DIR; default: current directory].
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a dataset, compute metrics and curves, and write a report.
    Evaluate(EvaluateArgs),
    /// Project precision to a deployment prevalence from sensitivity and specificity.
    AdjustPrecision(AdjustPrecisionArgs),
    /// Simulated power of a two-model precision comparison, or the sample size reaching a target power.
    SizeStudy(SizeStudyArgs),
    /// Prevalence of duplicate pairs among all record pairs.
    PairPrevalence(PairPrevalenceArgs),
    /// Case-level examination: sampling, review sheets and aggregation.
    #[command(subcommand)]
    Scle(ScleCommand),
    /// Metrics broken down by a subgroup attribute.
    Subsets(SubsetsArgs),
    /// Agreement of labels across repeated runs.
    Stability(InputArgs),
    /// Distribution of a metric over resamples of the evaluation set.
    Resample(ResampleArgs),
    /// Generate a synthetic population with known truth.
    Synth(SynthArgs),
    /// Fill the checklist from saved outputs and render the report.
    Checklist(ChecklistArgs),
}

#[derive(Debug, Subcommand)]
pub enum ScleCommand {
    /// Draw the stratified review sample and write the review sheet.
    Sample(ScleSampleArgs),
    /// Read a completed review sheet into annotations.
    Ingest(ScleIngestArgs),
    /// Summarize annotations.
    Aggregate(ScleAggregateArgs),
    /// Write a new dataset with reviewer verdicts applied.
    ApplyVerdicts(ScleApplyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InputArgs {
    /// Dataset file (.csv or .jsonl).
    #[arg(long, short)]
    pub input: PathBuf,

    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,

    /// Sampling design file (CSV or JSON array of strata).
    #[arg(long, value_name = "FILE")]
    pub design: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,

    /// Decision threshold applied to scores (score >= threshold is positive).
    #[arg(long)]
    pub threshold: Option<f64>,

    /// Review budget: the k highest-scored cases are predicted positive.
    #[arg(long)]
    pub k: Option<usize>,

    /// Cost of a false positive; with --cost-fn, picks the threshold of least expected cost.
    #[arg(long, requires = "cost_fn")]
    pub cost_fp: Option<f64>,

    /// Cost of a false negative.
    #[arg(long, requires = "cost_fp")]
    pub cost_fn: Option<f64>,

    /// Assumed prevalence of positives where the model will be used.
    #[arg(long)]
    pub prevalence: Option<f64>,

    /// Confidence level of intervals.
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,

    /// Bootstrap resamples for weighted designs.
    #[arg(long, default_value_t = 2000)]
    pub resamples: usize,

    /// Subgroup attribute to break metrics down by (repeatable).
    #[arg(long = "subset", value_name = "ATTRIBUTE")]
    #[serde(default)]
    pub subsets: Vec<String>,

    /// Bootstrap resamples for variability of recall and precision (0 = skip).
    #[arg(long, default_value_t = 0)]
    pub variability: usize,

    /// CSV of human decisions (case_id,label) for concordance and override rate.
    #[arg(long, value_name = "FILE")]
    pub human_labels: Option<PathBuf>,

    /// Case-level examination summary JSON to include.
    #[arg(long, value_name = "FILE")]
    pub scle_summary: Option<PathBuf>,

    /// TOML or JSON map of checklist attestations.
    #[arg(long, value_name = "FILE")]
    pub attestations: Option<PathBuf>,

    /// AUC will be quoted; warn when prevalence is too low for it to be informative.
    #[arg(long)]
    #[serde(default)]
    pub report_auc: bool,

    /// F1 will be quoted.
    #[arg(long)]
    #[serde(default)]
    pub report_f1: bool,

    /// The F-score weighting is backed by a stated error-cost argument.
    #[arg(long)]
    #[serde(default)]
    pub cost_justified: bool,

    /// Enrichment of positives is accounted for outside this tool.
    #[arg(long)]
    #[serde(default)]
    pub enrichment_justified: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AdjustPrecisionArgs {
    #[arg(long)]
    pub sensitivity: f64,
    #[arg(long)]
    pub specificity: f64,
    /// Assumed deployment prevalence.
    #[arg(long)]
    pub prevalence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisArg {
    Union,
    Sum,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SizeStudyArgs {
    /// Assumptions file (TOML or JSON); flags given explicitly override nothing here, use --config for that.
    #[arg(long, value_name = "FILE")]
    pub assumptions: Option<PathBuf>,

    /// Sample size to evaluate; omit with --target-power to search.
    #[arg(long)]
    pub sample_size: Option<u64>,

    /// Search for the smallest sample size with at least this power.
    #[arg(long)]
    pub target_power: Option<f64>,

    #[arg(long)]
    pub flag_rate_a: Option<f64>,
    #[arg(long)]
    pub flag_rate_b: Option<f64>,

    /// Flag count observed in a reference sample; sets both flag rates.
    #[arg(long, conflicts_with_all = ["flag_rate_a", "flag_rate_b"])]
    pub flag_count: Option<f64>,

    /// Sample size the flag count was observed in (defaults to --sample-size).
    #[arg(long)]
    pub flag_count_sample: Option<u64>,

    /// Whether --flag-count is the union of both models' flags or their sum.
    #[arg(long, value_enum, default_value_t = BasisArg::Union)]
    pub flag_count_basis: BasisArg,

    /// Shared flags as a fraction of the larger flag rate.
    #[arg(long)]
    pub overlap_rate: Option<f64>,
    #[arg(long)]
    pub precision_a: Option<f64>,
    #[arg(long)]
    pub precision_b: Option<f64>,
    /// Precision among shared flags (default: mean of the two precisions).
    #[arg(long)]
    pub shared_precision: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub replicates: Option<usize>,

    /// Use the plain (conservative) exact test instead of the randomized one.
    #[arg(long)]
    #[serde(default)]
    pub conservative: bool,

    #[arg(long, default_value_t = 100)]
    pub min_size: u64,
    #[arg(long, default_value_t = 10_000_000)]
    pub max_size: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PairPrevalenceArgs {
    /// Number of records.
    #[arg(long)]
    pub n: u64,
    /// Fraction of records that have one duplicate partner.
    #[arg(long)]
    pub duplicate_fraction: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScleSampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,

    /// Threshold to derive predictions from scores when labels are absent.
    #[arg(long)]
    pub threshold: Option<f64>,

    #[arg(long, default_value_t = 0)]
    pub n_fp: usize,
    #[arg(long, default_value_t = 0)]
    pub n_fn: usize,
    #[arg(long, default_value_t = 0)]
    pub n_tp: usize,
    #[arg(long, default_value_t = 0)]
    pub n_tn: usize,

    /// Subgroup attribute for proportional allocation (repeatable).
    #[arg(long, value_name = "ATTRIBUTE")]
    #[serde(default)]
    pub substratify_by: Vec<String>,

    /// Equal-frequency bins of distance to the threshold.
    #[arg(long)]
    pub boundary_bins: Option<usize>,

    /// Sample the model-by-benchmark cells instead of the confusion cells.
    #[arg(long)]
    #[serde(default)]
    pub benchmark_mode: bool,

    /// Relative weight of the two disagreement cells in benchmark mode.
    #[arg(long, default_value_t = 1.0)]
    pub oversample: f64,

    /// Extra columns for the review sheet (subgroup names, stratum_id, benchmark_predicted).
    #[arg(long = "context", value_name = "FIELD")]
    #[serde(default)]
    pub context: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScleIngestArgs {
    /// Sample JSON written by `scle sample`.
    #[arg(long)]
    pub sample: PathBuf,
    /// Completed review sheet.
    #[arg(long)]
    pub sheet: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScleAggregateArgs {
    #[arg(long)]
    pub sample: PathBuf,
    /// Annotations JSON written by `scle ingest`.
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    #[arg(long, default_value_t = 2000)]
    pub resamples: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScleApplyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Output dataset file name inside the output directory.
    #[arg(long, default_value = "dataset_reviewed.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SubsetsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    /// Subgroup attribute.
    #[arg(long)]
    pub attribute: String,
    /// Metrics to break down (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "recall,precision,specificity")]
    pub metrics: Vec<String>,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    /// Level of the heterogeneity screen.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2000)]
    pub permutations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeArg {
    Bootstrap,
    KFold,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ResampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "recall")]
    pub metric: String,
    #[arg(long, value_enum, default_value_t = SchemeArg::Bootstrap)]
    pub scheme: SchemeArg,
    /// Resamples (bootstrap) or folds (k-fold).
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Population spec file (TOML or JSON); --n and --prevalence are used without it.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub prevalence: Option<f64>,
    /// Output dataset format.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ChecklistArgs {
    /// outputs.json written by `evaluate`; an empty evaluation when omitted.
    #[arg(long, value_name = "FILE")]
    pub outputs: Option<PathBuf>,
    /// TOML or JSON map of checklist attestations.
    #[arg(long, value_name = "FILE")]
    pub attestations: Option<PathBuf>,
}
