//! End-to-end tests of the `affect` binary: exit codes, report documents,
//! determinism.

use std::path::Path;
use std::process::{Command, Output};

use affect_core::coupling::{AuActivations, ExprDistribution, VaPair};
use affect_core::io::{write_records, Format};
use affect_core::record::{
    AuLabelSet, Demographics, ExprId, ExprPrediction, Labels, Predictions, SampleRecord,
};
use affect_core::relatedness::{CompoundTable, Expression, RelatednessTable};

fn affect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affect")).args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn perfect_records(n: usize) -> Vec<SampleRecord> {
    (0..n)
        .map(|i| {
            let expr = Expression::from_index(i % 7).unwrap();
            let mut values = [false; 17];
            values[i % 17] = true;
            let v = (i % 9) as f64 / 10.0 - 0.4;
            let mut r = SampleRecord::new(format!("r{i}"));
            r.demographics = Some(Demographics {
                gender: Some(if i % 2 == 0 { "a" } else { "b" }.to_string()),
                ..Default::default()
            });
            r.labels = Some(Labels {
                expr: Some(ExprId(expr)),
                compound: None,
                aus: Some(AuLabelSet::full(values)),
                va: Some(VaPair::new(v, -v).unwrap()),
            });
            r.predictions = Some(Predictions {
                expr: Some(ExprPrediction::ClassId(ExprId(expr))),
                aus: Some(AuActivations::from_binary(&values)),
                va: Some(VaPair::new(v, -v).unwrap()),
            });
            r
        })
        .collect()
}

fn write_jsonl_fixture(dir: &Path, name: &str, records: &[SampleRecord]) -> String {
    let path = dir.join(name);
    write_records(&path, Format::Jsonl, records).unwrap();
    path.display().to_string()
}

#[test]
fn evaluate_reports_perfect_scores() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_jsonl_fixture(dir.path(), "perfect.jsonl", &perfect_records(70));
    let out = dir.path().join("report.json");
    let result = affect(&["evaluate", "--input", &input, "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "{}", stderr(&result));
    assert!(stdout(&result).contains("macro F1 1.0000"));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["overall"]["expr"]["macro_f1"], 1.0);
    assert_eq!(report["overall"]["au"]["mean_f1"], 1.0);
    assert_eq!(report["overall"]["va"]["ccc"], 1.0);
}

#[test]
fn fairness_on_duplicated_subgroups_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    // identical record blocks under two gender labels
    let mut records = Vec::new();
    for g in ["a", "b"] {
        for mut r in perfect_records(40) {
            r.id = format!("{g}-{}", r.id);
            r.demographics =
                Some(Demographics { gender: Some(g.to_string()), ..Default::default() });
            records.push(r);
        }
    }
    let input = write_jsonl_fixture(dir.path(), "dup.jsonl", &records);
    let out = dir.path().join("fairness.json");
    let result = affect(&[
        "fairness",
        "--input",
        &input,
        "--attribute",
        "gender",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{}", stderr(&result));
    let text = stdout(&result);
    assert!(text.contains("eop  [gender] 0.0000  (fair)"), "{text}");
    assert!(text.contains("eod  [gender] 0.0000  (fair)"), "{text}");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let fairness = report["fairness"].as_array().unwrap();
    assert_eq!(fairness.len(), 3);
    assert_eq!(fairness[0]["metric"], "eop");
    assert_eq!(fairness[0]["score"], 0.0);
}

#[test]
fn cer_recovers_generated_compounds() {
    let relatedness = RelatednessTable::builtin();
    let table = CompoundTable::builtin(&relatedness);
    let mut records = Vec::new();
    for (i, compound) in table.compounds().iter().enumerate() {
        let mut probs = [0.0; 7];
        probs[compound.constituents.0.index()] = 0.5;
        probs[compound.constituents.1.index()] = 0.5;
        let codes: Vec<u8> = compound.aus.iter().map(|a| a.code()).collect();
        let mut r = SampleRecord::new(format!("c{i}"));
        r.labels = Some(Labels { compound: Some(compound.name.clone()), ..Default::default() });
        r.predictions = Some(Predictions {
            expr: Some(ExprPrediction::Distribution(ExprDistribution::new(probs).unwrap())),
            aus: Some(AuActivations::from_active_codes(&codes).unwrap()),
            va: Some(VaPair::new(if compound.d_va_eligible { 0.5 } else { -0.3 }, 0.1).unwrap()),
        });
        records.push(r);
    }
    let dir = tempfile::tempdir().unwrap();
    let input = write_jsonl_fixture(dir.path(), "compounds.jsonl", &records);
    let out = dir.path().join("cer.json");
    let result = affect(&["cer", "--input", &input, "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "{}", stderr(&result));
    assert!(stdout(&result).contains("accuracy 1.0000 over 11 labeled records"));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["cer"]["accuracy"], 1.0);
    assert_eq!(report["cer"]["scored"], 11);
}

#[test]
fn csv_input_is_supported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.csv");
    write_records(&path, Format::Csv, &perfect_records(30)).unwrap();
    let result = affect(&["evaluate", "--input", path.to_str().unwrap()]);
    assert!(result.status.success(), "{}", stderr(&result));
    assert!(stdout(&result).contains("macro F1 1.0000"));
}

#[test]
fn stride_and_cleaning_are_applied() {
    let mut records = perfect_records(20);
    for (i, r) in records.iter_mut().enumerate() {
        r.video = Some("v".to_string());
        r.frame_index = Some(i as u64);
    }
    // an inconsistent record: happiness with negative valence
    let mut bad = SampleRecord::new("bad");
    bad.video = Some("v".to_string());
    bad.frame_index = Some(20);
    bad.labels = Some(Labels {
        expr: Some(ExprId(Expression::Happiness)),
        va: Some(VaPair::new(-0.5, 0.0).unwrap()),
        ..Default::default()
    });
    records.push(bad);

    let dir = tempfile::tempdir().unwrap();
    let input = write_jsonl_fixture(dir.path(), "video.jsonl", &records);
    let out = dir.path().join("report.json");
    let result = affect(&[
        "evaluate",
        "--input",
        &input,
        "--stride",
        "5",
        "--clean-va",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{}", stderr(&result));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    // frames 0,5,10,15,20 kept; cleaning then removes frame 20 (happy with
    // negative valence) and frame 0 (neutral with VA radius 0.57)
    assert_eq!(report["config"]["removed_by_subsampling"], 16);
    assert_eq!(report["config"]["removed_by_cleaning"], 2);
    assert_eq!(report["record_count"], 3);
}

#[test]
fn missing_input_exits_with_io_code() {
    let result = affect(&["evaluate", "--input", "/nonexistent/records.jsonl"]);
    assert_eq!(result.status.code(), Some(3), "{}", stderr(&result));
}

#[test]
fn malformed_line_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(
        &path,
        concat!(
            r#"{"id":"ok","labels":{"expr":1}}"#,
            "\n",
            r#"{"id":"bad","predictions":{"expr":[0.5,0.1,0.1,0.1,0.1,0.05,0.01]}}"#,
            "\n"
        ),
    )
    .unwrap();
    let result = affect(&["evaluate", "--input", path.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(4));
    assert!(stderr(&result).contains("line 2"), "{}", stderr(&result));
}

#[test]
fn unknown_flag_value_exits_with_usage_code() {
    let result = affect(&["evaluate", "--input", "x.jsonl", "--format", "xml"]);
    assert_eq!(result.status.code(), Some(2));
    let result = affect(&["fairness", "--input", "x.jsonl", "--attribute", "height"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn train_toy_is_deterministic_and_writes_history() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "train-toy".to_string(),
            "--seed".into(),
            "3".into(),
            "--epochs".into(),
            "2".into(),
            "--train-per-task".into(),
            "96".into(),
            "--val-per-task".into(),
            "40".into(),
            "--feature-dim".into(),
            "8".into(),
            "--hidden".into(),
            "12".into(),
            "--batch-size".into(),
            "16".into(),
            "--out".into(),
            out.into(),
        ]
    };
    let out_a = dir.path().join("a.json");
    let out_b = dir.path().join("b.json");
    let run_a = affect(&args(out_a.to_str().unwrap()).iter().map(String::as_str).collect::<Vec<_>>());
    let run_b = affect(&args(out_b.to_str().unwrap()).iter().map(String::as_str).collect::<Vec<_>>());
    assert!(run_a.status.success(), "{}", stderr(&run_a));
    assert!(run_b.status.success(), "{}", stderr(&run_b));
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert_eq!(a, b, "training histories must be bit-identical");

    let history: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 2);
}

#[test]
fn ablate_writes_summary_and_variant_histories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ablation.json");
    let result = affect(&[
        "ablate",
        "--seed",
        "5",
        "--epochs",
        "1",
        "--train-per-task",
        "64",
        "--val-per-task",
        "32",
        "--feature-dim",
        "8",
        "--hidden",
        "10",
        "--batch-size",
        "16",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{}", stderr(&result));
    let text = stdout(&result);
    for name in ["typical-mtl", "with-sca", "with-dm", "with-both"] {
        assert!(text.contains(name), "{text}");
        assert!(dir.path().join(format!("ablation.{name}.json")).exists());
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 4);
}

#[test]
fn check_grads_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grads.json");
    let result = affect(&[
        "check-grads",
        "--seed",
        "11",
        "--instances",
        "5",
        "--objective-instances",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{}", stderr(&result));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert!(report["outcomes"].as_array().unwrap().len() >= 12);
}
