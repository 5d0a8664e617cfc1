// SPDX-License-Identifier: Apache-2.0

//! CSV and JSONL reading and writing of datasets.
//!
//! CSV layout: optional leading `#` comment lines carrying the metadata and
//! design as JSON, then a header with `case_id, reference, score, predicted,
//! benchmark_predicted, stratum_id`, subgroup columns prefixed `sg_` and
//! repeated-run columns prefixed `run_`.
//!
//! JSONL layout: an optional first line `{"rareval_header": {...}}` carrying
//! the metadata and design, then one case object per line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{parse_binary, Dataset, EvaluationCase, ReferenceLabel, StratumSpec};
use crate::error::{Error, Result};

const META_PREFIX: &str = "# rareval:metadata ";
const DESIGN_PREFIX: &str = "# rareval:design ";
const HEADER_KEY: &str = "rareval_header";
/// Marker key written into truth sidecars; files carrying it are refused.
pub const SIDECAR_KEY: &str = "rareval_truth_sidecar";

const FIXED_COLUMNS: [&str; 6] = [
    "case_id",
    "reference",
    "score",
    "predicted",
    "benchmark_predicted",
    "stratum_id",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Format::Csv),
            "jsonl" | "ndjson" => Some(Format::Jsonl),
            _ => None,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            other => Err(format!("unknown format `{other}` (expected csv or jsonl)")),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    #[serde(default)]
    design: Vec<StratumSpec>,
}

pub fn ingest(path: &Path, format: Format) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_str(&text, format)
}

pub fn ingest_str(text: &str, format: Format) -> Result<Dataset> {
    match format {
        Format::Csv => ingest_csv(text),
        Format::Jsonl => ingest_jsonl(text),
    }
}

pub fn emit(dataset: &Dataset, path: &Path, format: Format) -> Result<()> {
    let text = emit_to_string(dataset, format)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn emit_to_string(dataset: &Dataset, format: Format) -> Result<String> {
    match format {
        Format::Csv => emit_csv(dataset),
        Format::Jsonl => emit_jsonl(dataset),
    }
}

/// Reads a standalone design file: CSV with `stratum_id,
/// inclusion_probability, description` or a JSON array of strata.
pub fn read_design(path: &Path) -> Result<Vec<StratumSpec>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('[') {
        return Ok(serde_json::from_str(&text)?);
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut design = Vec::new();
    for (i, record) in reader.deserialize::<StratumSpec>().enumerate() {
        design.push(record.map_err(|e| Error::row(i + 1, "design", e.to_string()))?);
    }
    Ok(design)
}

fn refuse_sidecar(first_line: &str) -> Result<()> {
    if first_line.contains(SIDECAR_KEY) {
        return Err(Error::InvalidDataset(
            "this file is a synthetic truth sidecar and cannot be evaluated".into(),
        ));
    }
    Ok(())
}

fn ingest_csv(text: &str) -> Result<Dataset> {
    refuse_sidecar(text.lines().next().unwrap_or(""))?;
    let mut header = Header::default();
    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if !trimmed.starts_with('#') {
            break;
        }
        body_start += line.len();
        if let Some(json) = trimmed.strip_prefix(META_PREFIX) {
            header.metadata = serde_json::from_str(json)?;
        } else if let Some(json) = trimmed.strip_prefix(DESIGN_PREFIX) {
            header.design = serde_json::from_str(json)?;
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(&text.as_bytes()[body_start..]);
    let columns: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    for required in ["case_id", "reference"] {
        if !columns.iter().any(|c| c == required) {
            return Err(Error::row(0, required, "required column missing from header"));
        }
    }
    if !columns.iter().any(|c| c == "score" || c == "predicted") {
        return Err(Error::row(
            0,
            "score/predicted",
            "header needs a score or predicted column",
        ));
    }
    for c in &columns {
        if !FIXED_COLUMNS.contains(&c.as_str()) && !c.starts_with("sg_") && !c.starts_with("run_") {
            return Err(Error::row(
                0,
                c.clone(),
                "unknown column (subgroups need prefix sg_, runs run_)",
            ));
        }
    }

    let mut cases = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::row(row, "record", e.to_string()))?;
        let mut case = EvaluationCase::new(String::new(), ReferenceLabel::Excluded);
        let mut reference_seen = false;
        let mut runs = Vec::new();
        for (column, raw) in columns.iter().zip(record.iter()) {
            let value = raw.trim();
            match column.as_str() {
                "case_id" => case.case_id = value.to_string(),
                "reference" => {
                    case.reference = value.parse().map_err(|m| Error::row(row, "reference", m))?;
                    reference_seen = true;
                }
                "score" if !value.is_empty() => {
                    case.score = Some(parse_real(value).map_err(|m| Error::row(row, "score", m))?);
                }
                "predicted" if !value.is_empty() => {
                    case.predicted = Some(parse_binary(value).map_err(|m| Error::row(row, "predicted", m))?);
                }
                "benchmark_predicted" if !value.is_empty() => {
                    case.benchmark_predicted =
                        Some(parse_binary(value).map_err(|m| Error::row(row, "benchmark_predicted", m))?);
                }
                "stratum_id" if !value.is_empty() => case.stratum_id = Some(value.to_string()),
                name if !value.is_empty() => {
                    if let Some(attr) = name.strip_prefix("sg_") {
                        case.subgroups.insert(attr.to_string(), value.to_string());
                    } else if name.starts_with("run_") {
                        runs.push(parse_binary(value).map_err(|m| Error::row(row, name, m))?);
                    }
                }
                _ => {}
            }
        }
        if !reference_seen {
            return Err(Error::row(row, "reference", "missing value"));
        }
        if !runs.is_empty() {
            case.repeated_labels = Some(runs);
        }
        cases.push(case);
    }
    Dataset::new(cases, header.design, header.metadata)
}

fn parse_real(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: `{s}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("not a finite number: `{s}`"))
    }
}

fn emit_csv(dataset: &Dataset) -> Result<String> {
    let mut out = String::new();
    if !dataset.metadata().is_empty() {
        out.push_str(META_PREFIX);
        out.push_str(&serde_json::to_string(dataset.metadata())?);
        out.push('\n');
    }
    if !dataset.design().is_empty() {
        out.push_str(DESIGN_PREFIX);
        out.push_str(&serde_json::to_string(dataset.design())?);
        out.push('\n');
    }

    let subgroups = dataset.subgroup_names();
    let n_runs = dataset
        .cases()
        .iter()
        .filter_map(|c| c.repeated_labels.as_ref().map(Vec::len))
        .max()
        .unwrap_or(0);

    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(subgroups.iter().map(|s| format!("sg_{s}")));
    header.extend((1..=n_runs).map(|i| format!("run_{i}")));
    writer.write_record(&header)?;

    for case in dataset.cases() {
        let mut record = vec![
            case.case_id.clone(),
            case.reference.to_string(),
            case.score.map(|s| s.to_string()).unwrap_or_default(),
            case.predicted.map(bit).unwrap_or_default(),
            case.benchmark_predicted.map(bit).unwrap_or_default(),
            case.stratum_id.clone().unwrap_or_default(),
        ];
        for name in &subgroups {
            record.push(case.subgroups.get(name).cloned().unwrap_or_default());
        }
        let runs = case.repeated_labels.as_deref().unwrap_or(&[]);
        for i in 0..n_runs {
            record.push(runs.get(i).map(|&b| bit(b)).unwrap_or_default());
        }
        writer.write_record(&record)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Internal(format!("csv writer: {e}")))?;
    out.push_str(&String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))?);
    Ok(out)
}

fn bit(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn ingest_jsonl(text: &str) -> Result<Dataset> {
    let mut header = Header::default();
    let mut cases = Vec::new();
    let mut first = true;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if first {
            first = false;
            refuse_sidecar(line)?;
            let value: Value = serde_json::from_str(line).map_err(|e| Error::row(1, "json", e.to_string()))?;
            if let Some(h) = value.get(HEADER_KEY) {
                header = serde_json::from_value(h.clone())?;
                continue;
            }
        }
        let row = cases.len() + 1;
        let value: Value = serde_json::from_str(line).map_err(|e| Error::row(row, "json", e.to_string()))?;
        let object = value
            .as_object()
            .ok_or_else(|| Error::row(row, "json", "expected a JSON object"))?;
        cases.push(case_from_json(row, object)?);
    }
    Dataset::new(cases, header.design, header.metadata)
}

fn json_binary(row: usize, field: &str, value: &Value) -> Result<bool> {
    match value {
        Value::Bool(b) => Ok(*b),
        Value::Number(n) if n.as_u64() == Some(1) => Ok(true),
        Value::Number(n) if n.as_u64() == Some(0) => Ok(false),
        Value::String(s) => parse_binary(s).map_err(|m| Error::row(row, field, m)),
        other => Err(Error::row(row, field, format!("expected a binary label, got {other}"))),
    }
}

fn json_string(row: usize, field: &str, value: &Value) -> Result<String> {
    value
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::row(row, field, "expected a string"))
}

fn case_from_json(row: usize, object: &Map<String, Value>) -> Result<EvaluationCase> {
    let mut case = EvaluationCase::new(String::new(), ReferenceLabel::Excluded);
    let mut id_seen = false;
    let mut reference_seen = false;
    for (key, value) in object {
        if value.is_null() {
            continue;
        }
        match key.as_str() {
            "case_id" => {
                case.case_id = match value {
                    Value::String(s) => s.clone(),
                    Value::Number(n) => n.to_string(),
                    _ => return Err(Error::row(row, "case_id", "expected a string")),
                };
                id_seen = true;
            }
            "reference" => {
                case.reference = json_string(row, key, value)?
                    .parse()
                    .map_err(|m| Error::row(row, "reference", m))?;
                reference_seen = true;
            }
            "score" => {
                let s = value
                    .as_f64()
                    .ok_or_else(|| Error::row(row, "score", "expected a number"))?;
                case.score = Some(s);
            }
            "predicted" => case.predicted = Some(json_binary(row, key, value)?),
            "benchmark_predicted" => case.benchmark_predicted = Some(json_binary(row, key, value)?),
            "stratum_id" => case.stratum_id = Some(json_string(row, key, value)?),
            "subgroups" => {
                let map = value
                    .as_object()
                    .ok_or_else(|| Error::row(row, "subgroups", "expected an object"))?;
                for (name, category) in map {
                    case.subgroups
                        .insert(name.clone(), json_string(row, &format!("subgroups.{name}"), category)?);
                }
            }
            "repeated_labels" => {
                let runs = value
                    .as_array()
                    .ok_or_else(|| Error::row(row, "repeated_labels", "expected an array"))?;
                case.repeated_labels = Some(
                    runs.iter()
                        .map(|v| json_binary(row, "repeated_labels", v))
                        .collect::<Result<_>>()?,
                );
            }
            other => return Err(Error::row(row, other, "unknown field")),
        }
    }
    if !id_seen {
        return Err(Error::row(row, "case_id", "missing"));
    }
    if !reference_seen {
        return Err(Error::row(row, "reference", "missing"));
    }
    Ok(case)
}

fn emit_jsonl(dataset: &Dataset) -> Result<String> {
    let mut out = String::new();
    if !dataset.metadata().is_empty() || !dataset.design().is_empty() {
        let header = Header {
            metadata: dataset.metadata().clone(),
            design: dataset.design().to_vec(),
        };
        let mut wrapper = Map::new();
        wrapper.insert(HEADER_KEY.to_string(), serde_json::to_value(header)?);
        out.push_str(&serde_json::to_string(&wrapper)?);
        out.push('\n');
    }
    for case in dataset.cases() {
        out.push_str(&serde_json::to_string(case)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_row_csv() {
        let text = "case_id,reference,score\n1,positive,0.9\n2,NEGATIVE,0.1\n3,Ambiguous,0.5\n";
        let ds = ingest_str(text, Format::Csv).unwrap();
        let counts = ds.label_counts();
        assert_eq!(
            (ds.len(), counts.positive, counts.negative, counts.ambiguous),
            (3, 1, 1, 1)
        );
        assert_eq!(ds.cases()[2].case_id, "3");
    }

    #[test]
    fn row_without_score_or_prediction_is_named() {
        let text = "case_id,reference,score,predicted\na,positive,0.9,\nb,negative,,\n";
        let err = ingest_str(text, Format::Csv).unwrap_err();
        assert!(matches!(err, Error::Row { row: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_field_names_row_and_field() {
        let text = "case_id,reference,score\na,positive,high\n";
        match ingest_str(text, Format::Csv).unwrap_err() {
            Error::Row { row, field, .. } => assert_eq!((row, field.as_str()), (1, "score")),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_stratum_is_an_error() {
        let text = "# rareval:design [{\"stratum_id\":\"s1\",\"inclusion_probability\":0.5}]\n\
                    case_id,reference,predicted,stratum_id\na,positive,1,s1\nb,negative,0,s9\n";
        assert!(matches!(
            ingest_str(text, Format::Csv).unwrap_err(),
            Error::UnknownStratum { row: 2, .. }
        ));
    }

    #[test]
    fn sidecar_is_refused() {
        let text = format!("{{\"{SIDECAR_KEY}\": true}}\n");
        assert!(matches!(
            ingest_str(&text, Format::Jsonl),
            Err(Error::InvalidDataset(_))
        ));
    }

    #[test]
    fn jsonl_accepts_numeric_labels_and_rejects_unknown_keys() {
        let ok = "{\"case_id\":\"a\",\"reference\":\"positive\",\"predicted\":1}\n";
        assert_eq!(ingest_str(ok, Format::Jsonl).unwrap().cases()[0].predicted, Some(true));
        let bad = "{\"case_id\":\"a\",\"reference\":\"positive\",\"predicted\":1,\"colour\":\"red\"}\n";
        assert!(matches!(ingest_str(bad, Format::Jsonl), Err(Error::Row { row: 1, .. })));
    }

    fn arb_case(i: usize) -> impl Strategy<Value = EvaluationCase> {
        (
            prop_oneof![
                Just(ReferenceLabel::Positive),
                Just(ReferenceLabel::Negative),
                Just(ReferenceLabel::Ambiguous),
                Just(ReferenceLabel::Excluded)
            ],
            prop::option::of(-1e6f64..1e6),
            any::<bool>(),
            prop::option::of(any::<bool>()),
            prop::option::of(prop::sample::select(vec!["north", "south, \"quoted\""])),
            prop::option::of(prop::collection::vec(any::<bool>(), 1..4)),
            prop::bool::ANY,
        )
            .prop_map(move |(reference, score, predicted, bench, region, runs, stratum)| {
                let mut c = EvaluationCase::new(format!("case-{i}"), reference);
                c.score = score;
                if score.is_none() || predicted {
                    c.predicted = Some(predicted);
                }
                c.benchmark_predicted = bench;
                if let Some(r) = region {
                    c.subgroups.insert("region".into(), r.to_string());
                }
                c.repeated_labels = runs;
                c.stratum_id = Some(if stratum { "enriched" } else { "base" }.into());
                c
            })
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..25).prop_flat_map(|n| {
            (0..n).map(arb_case).collect::<Vec<_>>().prop_map(|cases| {
                let design = vec![
                    StratumSpec {
                        stratum_id: "base".into(),
                        inclusion_probability: 0.1,
                        description: "random, sample".into(),
                    },
                    StratumSpec::new("enriched", 1.0),
                ];
                let mut meta = BTreeMap::new();
                meta.insert("source".to_string(), "synthetic".to_string());
                Dataset::new(cases, design, meta).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn emit_then_ingest_round_trips(ds in arb_dataset()) {
            for format in [Format::Csv, Format::Jsonl] {
                let text = emit_to_string(&ds, format).unwrap();
                let back = ingest_str(&text, format).unwrap();
                prop_assert_eq!(&back, &ds);
            }
        }
    }
}
