// SPDX-License-Identifier: Apache-2.0

//! Review sheet CSV: emission and ingestion of reviewer annotations.

use std::collections::{BTreeMap, HashSet};

use crate::datamodel::{Dataset, ReferenceLabel};
use crate::error::{Error, Result};
use crate::metrics::Cell;

use super::{DiagnosticTag, ScleAnnotation, ScleSample, Triviality};

/// Reviewer-filled columns, in sheet order.
pub const TAG_COLUMNS: [&str; 8] = [
    "reviewer",
    "never_event",
    "unexpected_error",
    "input_data_issue",
    "test_set_issue",
    "triviality",
    "note",
    "verdict",
];

const CASE_COLUMNS: [&str; 7] = [
    "case_id",
    "cell",
    "benchmark_cell",
    "sampling_weight",
    "reference",
    "predicted",
    "score",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the review sheet for `sample` as CSV text.
///
/// The sheet starts with three comment lines giving the seed, the sample's
/// config hash and `generated_at`. Context fields are subgroup attributes of
/// the dataset, or `stratum_id` / `benchmark_predicted`.
pub fn emit_review_sheet(
    sample: &ScleSample,
    dataset: &Dataset,
    context_fields: &[String],
    generated_at: &str,
) -> Result<String> {
    let known = dataset.subgroup_names();
    for field in context_fields {
        let builtin = matches!(field.as_str(), "stratum_id" | "benchmark_predicted");
        if !builtin && !known.contains(field) {
            return Err(Error::invalid(format!("unknown context field `{field}`")));
        }
    }
    let index = dataset.index_of();
    let mut out = format!(
        "# seed: {}\n# config_hash: {}\n# generated_at: {}\n",
        sample.seed, sample.config_hash, generated_at
    );
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    let header: Vec<&str> = CASE_COLUMNS
        .iter()
        .copied()
        .chain(context_fields.iter().map(String::as_str))
        .chain(TAG_COLUMNS)
        .collect();
    writer.write_record(&header)?;
    for row in &sample.rows {
        let i = *index
            .get(row.case_id.as_str())
            .ok_or_else(|| Error::InvalidDataset(format!("sampled case `{}` is not in the dataset", row.case_id)))?;
        let case = &dataset.cases()[i];
        let mut record = vec![
            row.case_id.clone(),
            row.classification_cell.as_str().to_string(),
            opt(row.benchmark_cell),
            row.sampling_weight.to_string(),
            case.reference.as_str().to_string(),
            opt(case.predicted.map(u8::from)),
            opt(case.score),
        ];
        for field in context_fields {
            record.push(match field.as_str() {
                "stratum_id" => case.stratum_id.clone().unwrap_or_default(),
                "benchmark_predicted" => opt(case.benchmark_predicted.map(u8::from)),
                name => case.subgroups.get(name).cloned().unwrap_or_default(),
            });
        }
        record.extend(std::iter::repeat_n(String::new(), TAG_COLUMNS.len()));
        writer.write_record(&record)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Internal(format!("csv writer: {e}")))?;
    out.push_str(&String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))?);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestedSheet {
    /// Rows with at least one reviewer entry beyond the reviewer id.
    pub annotations: Vec<ScleAnnotation>,
    /// Sampled true positives whose sheet row has no triviality value.
    pub missing_triviality: Vec<String>,
    pub header: BTreeMap<String, String>,
}

fn parse_flag(value: &str) -> std::result::Result<bool, String> {
    match value.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "no" | "false" | "n" => Ok(false),
        "1" | "yes" | "true" | "y" | "x" => Ok(true),
        other => Err(format!(
            "unknown tag value `{other}` (use 1/0, yes/no, true/false or x)"
        )),
    }
}

/// Parses a review sheet produced by [`emit_review_sheet`].
///
/// Row numbers in errors count data rows from 1.
pub fn ingest_annotations(sheet: &str, sample: &ScleSample) -> Result<IngestedSheet> {
    let mut header = BTreeMap::new();
    let mut body_start = 0;
    for line in sheet.split_inclusive('\n') {
        let Some(comment) = line.strip_prefix('#') else {
            break;
        };
        body_start += line.len();
        if let Some((k, v)) = comment.split_once(':') {
            header.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    match header.get("config_hash") {
        None => return Err(Error::invalid("review sheet has no `# config_hash` header line")),
        Some(found) if *found != sample.config_hash => {
            return Err(Error::ConfigHashMismatch {
                expected: sample.config_hash.clone(),
                found: found.clone(),
            })
        }
        Some(_) => {}
    }

    let mut reader = csv::ReaderBuilder::new().from_reader(&sheet.as_bytes()[body_start..]);
    let columns: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| columns.iter().position(|c| c == name);
    let case_col = col("case_id").ok_or_else(|| Error::invalid("review sheet has no case_id column"))?;
    let tag_cols: Vec<(DiagnosticTag, usize)> = DiagnosticTag::ALL
        .iter()
        .map(|&t| {
            col(t.as_str())
                .map(|c| (t, c))
                .ok_or_else(|| Error::invalid(format!("review sheet has no `{}` column", t.as_str())))
        })
        .collect::<Result<_>>()?;
    let reviewer_col = col("reviewer");
    let triviality_col = col("triviality");
    let note_col = col("note");
    let verdict_col = col("verdict");

    let mut seen = HashSet::new();
    let mut first_row = BTreeMap::new();
    let mut out = IngestedSheet {
        annotations: Vec::new(),
        missing_triviality: Vec::new(),
        header,
    };
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |c: Option<usize>| c.and_then(|c| record.get(c)).unwrap_or("").trim().to_string();
        let case_id = field(Some(case_col));
        let sampled = sample
            .row(&case_id)
            .ok_or_else(|| Error::row(row, "case_id", format!("`{case_id}` is not in the sample")))?;
        if !seen.insert(case_id.clone()) {
            return Err(Error::DuplicateCaseId {
                case_id,
                first_row: first_row[&sampled.case_id],
                second_row: row,
            });
        }
        first_row.insert(case_id.clone(), row);

        let mut tags = Vec::new();
        for &(tag, c) in &tag_cols {
            if parse_flag(&field(Some(c))).map_err(|m| Error::row(row, tag.as_str(), m))? {
                tags.push(tag);
            }
        }
        let triviality = match field(triviality_col) {
            s if s.is_empty() => None,
            s => Some(s.parse::<Triviality>().map_err(|m| Error::row(row, "triviality", m))?),
        };
        let verdict = match field(verdict_col) {
            s if s.is_empty() => None,
            s => Some(s.parse::<ReferenceLabel>().map_err(|m| Error::row(row, "verdict", m))?),
        };
        let note = Some(field(note_col)).filter(|s| !s.is_empty());
        if sampled.classification_cell == Cell::Tp && triviality.is_none() {
            out.missing_triviality.push(case_id.clone());
        }
        if tags.is_empty() && triviality.is_none() && verdict.is_none() && note.is_none() {
            continue;
        }
        out.annotations.push(ScleAnnotation {
            case_id,
            reviewer: field(reviewer_col),
            tags,
            triviality,
            note,
            verdict,
        });
    }
    Ok(out)
}
