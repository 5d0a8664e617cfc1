// SPDX-License-Identifier: Apache-2.0

use rareval_core::metrics::CiOptions;
use rareval_core::scle::{
    aggregate, draw_sample, emit_review_sheet, ingest_annotations, DiagnosticTag, ScleAnnotation, ScleConfig,
    Triviality,
};
use rareval_core::synth::{Population, PopulationSpec, SubgroupSpec};
use rareval_core::{Dataset, ErrorKind, ReferenceLabel};

fn dataset() -> Dataset {
    let mut spec = PopulationSpec::new(2000, 0.2, 31);
    spec.subgroups = vec![SubgroupSpec {
        name: "site".into(),
        categories: vec!["a".into(), "b".into()],
        weights: None,
    }];
    Population::generate(&spec).unwrap().dataset().unwrap()
}

/// Fills the reviewer columns of an emitted sheet.
fn fill(sheet: &str, annotate: impl Fn(usize, &str, &str) -> Vec<(&'static str, String)>) -> String {
    let (comments, body): (Vec<&str>, Vec<&str>) = sheet.split_inclusive('\n').partition(|l| l.starts_with('#'));
    let body: String = body.concat();
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader.headers().unwrap().clone();
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(&headers).unwrap();
    for (i, record) in reader.records().enumerate() {
        let record = record.unwrap();
        let case_id = record
            .get(headers.iter().position(|h| h == "case_id").unwrap())
            .unwrap();
        let cell = record.get(headers.iter().position(|h| h == "cell").unwrap()).unwrap();
        let updates = annotate(i, case_id, cell);
        let row: Vec<String> = headers
            .iter()
            .zip(record.iter())
            .map(|(h, v)| {
                updates
                    .iter()
                    .find(|(k, _)| *k == h)
                    .map_or_else(|| v.to_string(), |(_, nv)| nv.clone())
            })
            .collect();
        writer.write_record(&row).unwrap();
    }
    comments.concat() + &String::from_utf8(writer.into_inner().unwrap()).unwrap()
}

#[test]
fn thirty_rows_round_trip() {
    let ds = dataset();
    let sample = draw_sample(&ds, &ScleConfig::new(10, 10, 10, 8)).unwrap();
    assert_eq!(sample.rows.len(), 30);
    let sheet = emit_review_sheet(&sample, &ds, &["site".to_string()], "").unwrap();
    let filled = fill(&sheet, |i, _, cell| {
        let mut u = vec![("reviewer", format!("r{}", i % 3))];
        if i % 4 == 0 {
            u.push(("never_event", "yes".into()));
        }
        if i % 5 == 0 {
            u.push(("test_set_issue", "1".into()));
            u.push(("verdict", "negative".into()));
        }
        if cell == "TP" {
            u.push(("triviality", if i % 2 == 0 { "trivial" } else { "non_trivial" }.into()));
        }
        u.push(("note", format!("note, with comma {i}")));
        u
    });
    let ingested = ingest_annotations(&filled, &sample).unwrap();
    assert_eq!(ingested.annotations.len(), 30);
    assert!(ingested.missing_triviality.is_empty());
    for (i, a) in ingested.annotations.iter().enumerate() {
        let row = &sample.rows[i];
        assert_eq!(a.case_id, row.case_id);
        assert_eq!(a.reviewer, format!("r{}", i % 3));
        assert_eq!(a.has(DiagnosticTag::NeverEvent), i % 4 == 0);
        assert_eq!(a.has(DiagnosticTag::TestSetIssue), i % 5 == 0);
        assert_eq!(a.verdict, (i % 5 == 0).then_some(ReferenceLabel::Negative));
        assert_eq!(a.note.as_deref(), Some(format!("note, with comma {i}").as_str()));
        if row.sampling_cell() == "TP" {
            let expected = if i % 2 == 0 {
                Triviality::Trivial
            } else {
                Triviality::NonTrivial
            };
            assert_eq!(a.triviality, Some(expected));
        }
    }
    let summary = aggregate(&ingested.annotations, &sample, &CiOptions::default()).unwrap();
    assert_eq!(summary.n_annotations, 30);
    assert!(!summary.no_findings);
}

#[test]
fn tampered_hash_is_rejected() {
    let ds = dataset();
    let sample = draw_sample(&ds, &ScleConfig::new(3, 3, 3, 1)).unwrap();
    let sheet = emit_review_sheet(&sample, &ds, &[], "").unwrap();
    let tampered = sheet.replace(&sample.config_hash, &"0".repeat(sample.config_hash.len()));
    let err = ingest_annotations(&tampered, &sample).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Input);
}

#[test]
fn empty_annotations_mean_no_findings() {
    let ds = dataset();
    let sample = draw_sample(&ds, &ScleConfig::new(3, 3, 3, 1)).unwrap();
    let none: Vec<ScleAnnotation> = Vec::new();
    let summary = aggregate(&none, &sample, &CiOptions::default()).unwrap();
    assert!(summary.no_findings);
}

#[test]
fn seed_changes_sample() {
    let ds = dataset();
    let a = draw_sample(&ds, &ScleConfig::new(10, 10, 10, 1)).unwrap();
    let b = draw_sample(&ds, &ScleConfig::new(10, 10, 10, 2)).unwrap();
    assert_ne!(a.rows, b.rows);
    assert_ne!(a.config_hash, b.config_hash);
}
