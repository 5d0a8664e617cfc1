// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rareval_core::datamodel::{emit_to_string, Format};
use rareval_core::synth::{Population, PopulationSpec};

fn rareval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rareval"))
        .args(args)
        .env_remove("RAREVAL_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn golden(name: &str, actual: &str) {
    let path: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(
        actual, expected,
        "golden {name} differs; rerun with UPDATE_GOLDEN=1 if intended"
    );
}

fn write_dataset(dir: &Path) -> String {
    let ds = Population::generate(&PopulationSpec::new(400, 0.1, 3))
        .unwrap()
        .dataset()
        .unwrap();
    let path = dir.join("cases.csv");
    fs::write(&path, emit_to_string(&ds, Format::Csv).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn help_goldens() {
    for (name, args) in [
        ("help_main.txt", vec!["--help"]),
        ("help_evaluate.txt", vec!["evaluate", "--help"]),
        ("help_size_study.txt", vec!["size-study", "--help"]),
        ("help_scle_sample.txt", vec!["scle", "sample", "--help"]),
    ] {
        let out = rareval(&args);
        assert!(out.status.success());
        golden(name, &String::from_utf8(out.stdout).unwrap());
    }
}

#[test]
fn adjust_precision_prints_projection() {
    let v = stdout_json(&rareval(&[
        "adjust-precision",
        "--sensitivity",
        "0.994413",
        "--specificity",
        "0.98",
        "--prevalence",
        "0.000679",
    ]));
    let p = v["projected_precision"].as_f64().unwrap();
    assert!((0.028..0.038).contains(&p), "{p}");
}

#[test]
fn pair_prevalence_prints_exact_value() {
    let v = stdout_json(&rareval(&[
        "pair-prevalence",
        "--n",
        "40000000",
        "--duplicate-fraction",
        "0.2",
    ]));
    assert_eq!(v["prevalence"].as_f64(), Some(5e-9));
}

#[test]
fn input_errors_exit_2_with_json() {
    let out = rareval(&[
        "adjust-precision",
        "--sensitivity",
        "1.5",
        "--specificity",
        "0.9",
        "--prevalence",
        "0.1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "input");

    assert_eq!(
        rareval(&["evaluate", "--input", "/nonexistent.csv"]).status.code(),
        Some(2)
    );
    assert_eq!(rareval(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn infeasible_search_exits_3() {
    let out = rareval(&[
        "size-study",
        "--target-power",
        "0.9",
        "--flag-rate-a",
        "0.001",
        "--flag-rate-b",
        "0.001",
        "--overlap-rate",
        "0",
        "--precision-a",
        "0.8",
        "--precision-b",
        "0.81",
        "--replicates",
        "200",
        "--max-size",
        "2000",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_overrides_flags_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[pair_prevalence]\nduplicate_fraction = 0.1\n").unwrap();
    let v = stdout_json(&rareval(&[
        "pair-prevalence",
        "--n",
        "1000",
        "--duplicate-fraction",
        "0.5",
        "--config",
        cfg.to_str().unwrap(),
    ]));
    assert_eq!(v["prevalence"].as_f64(), Some(1e-4));

    fs::write(&cfg, "[pair_prevalence]\nbogus = 1\n").unwrap();
    let out = rareval(&[
        "pair-prevalence",
        "--n",
        "1000",
        "--duplicate-fraction",
        "0.5",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(&cfg, "[no_such_section]\n").unwrap();
    let out = rareval(&[
        "pair-prevalence",
        "--n",
        "1000",
        "--duplicate-fraction",
        "0.5",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_writes_outputs_and_timestamps_unless_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path());
    let out = dir.path().join("out");
    stdout_json(&rareval(&[
        "evaluate",
        "--input",
        &input,
        "--k",
        "40",
        "--out-dir",
        out.to_str().unwrap(),
    ]));
    for f in ["report.json", "report.md", "outputs.json", "curve.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(report["generated_at"].is_string());
    assert_eq!(report["sections"]["precision_at_k"]["result"]["k"], 40);

    let out2 = dir.path().join("out2");
    stdout_json(&rareval(&[
        "evaluate",
        "--input",
        &input,
        "--cost-fp",
        "1",
        "--cost-fn",
        "20",
        "--prevalence",
        "0.02",
        "--reproducible",
        "--out-dir",
        out2.to_str().unwrap(),
    ]));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out2.join("report.json")).unwrap()).unwrap();
    assert!(report.get("generated_at").is_none());
    assert!(report["sections"]["curves"]["result"]["operating_point"].is_object());

    let out3 = dir.path().join("out3");
    let both = rareval(&[
        "evaluate",
        "--input",
        &input,
        "--k",
        "5",
        "--threshold",
        "0.5",
        "--out-dir",
        out3.to_str().unwrap(),
    ]);
    assert_eq!(both.status.code(), Some(2));
}

#[test]
fn checklist_from_saved_outputs_takes_attestations() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path());
    let out = dir.path().join("out");
    stdout_json(&rareval(&[
        "evaluate",
        "--input",
        &input,
        "--reproducible",
        "--out-dir",
        out.to_str().unwrap(),
    ]));
    let att = dir.path().join("att.toml");
    fs::write(
        &att,
        "[annotation_process]\nkind = \"confirmed\"\nnote = \"double annotation with adjudication\"\n",
    )
    .unwrap();
    let out2 = dir.path().join("out2");
    stdout_json(&rareval(&[
        "checklist",
        "--outputs",
        out.join("outputs.json").to_str().unwrap(),
        "--attestations",
        att.to_str().unwrap(),
        "--reproducible",
        "--out-dir",
        out2.to_str().unwrap(),
    ]));
    let before: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let after: serde_json::Value = serde_json::from_slice(&fs::read(out2.join("report.json")).unwrap()).unwrap();
    let status = |r: &serde_json::Value| r["checklist"][1]["status"].as_str().unwrap().to_string();
    assert_eq!(status(&before), "unsatisfied");
    assert_ne!(status(&after), "unsatisfied");
}

#[test]
fn scle_workflow_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path());
    let out = dir.path().join("scle");
    let o = out.to_str().unwrap();
    let drawn = stdout_json(&rareval(&[
        "scle",
        "sample",
        "--input",
        &input,
        "--n-fp",
        "5",
        "--n-fn",
        "5",
        "--n-tp",
        "5",
        "--seed",
        "4",
        "--reproducible",
        "--out-dir",
        o,
    ]));
    let sheet = fs::read_to_string(out.join("review_sheet.csv")).unwrap();
    let header = sheet.lines().find(|l| l.starts_with("case_id")).unwrap();
    let column = |name: &str| header.split(',').position(|h| h == name).unwrap();
    let (reviewer, note) = (column("reviewer"), column("note"));
    let filled: String = sheet
        .lines()
        .enumerate()
        .map(|(i, line)| {
            if line.starts_with('#') || line.starts_with("case_id") {
                format!("{line}\n")
            } else {
                let mut fields: Vec<String> = line.split(',').map(str::to_string).collect();
                fields[reviewer] = format!("rev{i}");
                fields[note] = "checked".to_string();
                format!("{}\n", fields.join(","))
            }
        })
        .collect();
    fs::write(out.join("filled.csv"), filled).unwrap();
    let sample = out.join("scle_sample.json");
    let v = stdout_json(&rareval(&[
        "scle",
        "ingest",
        "--sample",
        sample.to_str().unwrap(),
        "--sheet",
        out.join("filled.csv").to_str().unwrap(),
        "--out-dir",
        o,
    ]));
    assert!(drawn["sampled"].as_u64().unwrap() > 0);
    assert_eq!(v["annotations"], drawn["sampled"]);
    stdout_json(&rareval(&[
        "scle",
        "aggregate",
        "--sample",
        sample.to_str().unwrap(),
        "--annotations",
        out.join("annotations.json").to_str().unwrap(),
        "--out-dir",
        o,
    ]));
    assert!(out.join("scle_summary.md").exists());
}

#[test]
fn synth_then_subsets_and_resample() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(
        &spec,
        "n = 2000\nprevalence = 0.1\nseed = 1\n[runs]\nn_runs = 2\nflip_probability = 0.05\n[[subgroups]]\nname = \"site\"\ncategories = [\"a\", \"b\"]\n",
    )
    .unwrap();
    let o = dir.path().to_str().unwrap();
    stdout_json(&rareval(&["synth", "--spec", spec.to_str().unwrap(), "--out-dir", o]));
    let data = dir.path().join("dataset.csv");
    let d = data.to_str().unwrap();
    let v = stdout_json(&rareval(&["subsets", "--input", d, "--attribute", "site"]));
    assert_eq!(v["categories"].as_array().unwrap().len(), 2);
    let v = stdout_json(&rareval(&["stability", "--input", d]));
    assert_eq!(v["n_runs"], 2);
    let v = stdout_json(&rareval(&["resample", "--input", d, "--scheme", "k-fold", "--n", "5"]));
    assert_eq!(v["values"].as_array().unwrap().len(), 5);
    // the truth sidecar is not an evaluation input
    let truth = dir.path().join("truth.json");
    assert_eq!(
        rareval(&["stability", "--input", truth.to_str().unwrap(), "--format", "jsonl"])
            .status
            .code(),
        Some(2)
    );
}
