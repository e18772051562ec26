use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use compsplit::io::{write_dataset, SplitManifest};
use compsplit::sampler::LabeledRecord;
use compsplit::schema::{full_product, AspectDef, AttributeSchema};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_compsplit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn yelp_dataset(dir: &Path) -> std::path::PathBuf {
    let schema = AttributeSchema::new(vec![
        AspectDef::new("sentiment", ["negative", "positive"]),
        AspectDef::new("gender", ["female", "male"]),
        AspectDef::new("tense", ["past", "present"]),
    ])
    .unwrap();
    let schema = std::sync::Arc::new(schema);
    let records: Vec<LabeledRecord> = full_product(&schema)
        .iter()
        .flat_map(|c| {
            (0..5).map(move |i| LabeledRecord::new(c.clone(), format!("text {i} for {c}")))
        })
        .collect();
    let path = dir.join("yelp.jsonl");
    write_dataset(&path, &schema, &records).unwrap();
    path
}

#[test]
fn holdout_on_yelp_shape_writes_eight_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let data = yelp_dataset(dir.path());
    let out = dir.path().join("ho");
    let o = run(&[
        "split",
        "--dataset",
        data.to_str().unwrap(),
        "--protocol",
        "holdout",
        "--k",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_dir(&out).unwrap().count(), 8);
    let m: SplitManifest =
        serde_json::from_str(&fs::read_to_string(out.join("holdout_000.json")).unwrap()).unwrap();
    assert_eq!(m.comp_combinations.len(), 1);
    assert_eq!(m.comp_combinations[0].len(), 3);
}

#[test]
fn check_reports_clause_c_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("acd");
    let o = run(&[
        "split",
        "--shape",
        "2,2",
        "--protocol",
        "acd",
        "--t1",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let path = out.join("acd_000.json");
    let ok = run(&["check", path.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));

    // move every in-distribution combination using a0v0 into the comp set
    let mut m: SplitManifest = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let (moved, kept): (Vec<_>, Vec<_>) = m
        .id_combinations
        .into_iter()
        .partition(|c| c["a0"] == "a0v0");
    m.id_combinations = kept;
    m.comp_combinations.extend(moved);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, m.to_json()).unwrap();
    let o = run(&["check", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("clause (c)"), "{}", stdout(&o));
    assert!(stdout(&o).contains("a0=a0v0"));
}

#[test]
fn metrics_prints_table_row() {
    let dir = tempfile::tempdir().unwrap();
    let cell = |a: f64, p: f64| serde_json::json!({"accuracy": {"sentiment": a}, "perplexity": p});
    let scores = serde_json::json!({
        "original": {"0": {"id": cell(79.10, 54.17)}},
        "holdout": {"0": {"id": cell(78.89, 51.20), "comp": cell(75.09, 51.22)}},
        "acd": {"0": {"id": cell(77.83, 51.71), "comp": cell(69.96, 51.28)}},
    });
    let path = dir.path().join("scores.json");
    fs::write(&path, scores.to_string()).unwrap();
    let o = run(&["metrics", path.to_str().unwrap(), "--method", "CTRL"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("CTRL\t"));
    assert!(row.ends_with("76.17\t51.92\t7.46"), "{row}");
}

#[test]
fn usage_and_validation_exit_codes() {
    assert_eq!(
        run(&["split", "--protocol", "nonsense", "--shape", "2,2"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let o = run(&["split", "--protocol", "holdout", "--shape", "1,2"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["check", "/nonexistent/manifest.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/manifest.json"));
}

#[test]
fn divergence_and_dist3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    assert!(run(&[
        "split",
        "--shape",
        "2,2,2",
        "--protocol",
        "mindiv",
        "--t1",
        "10",
        "--eta",
        "0.9",
        "--out",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let o = run(&[
        "divergence",
        out.join("mindivergence_000.json").to_str().unwrap(),
    ]);
    let d: f64 = stdout(&o).trim().parse().unwrap();
    assert!(d.abs() < 1e-9);

    let texts = dir.path().join("texts.txt");
    fs::write(&texts, "a b c d\na a a a a\n").unwrap();
    let o = run(&["dist3", texts.to_str().unwrap()]);
    assert_eq!(stdout(&o).trim(), "0.600000");
}

#[test]
fn sample_pcomp_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = yelp_dataset(dir.path());
    let out = dir.path().join("ho");
    assert!(run(&[
        "split",
        "--dataset",
        data.to_str().unwrap(),
        "--protocol",
        "holdout",
        "--out",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let manifest = out.join("holdout_000.json");
    let args = [
        "sample-pcomp",
        "--dataset",
        data.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--batch-size",
        "3",
        "--seed",
        "4",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let m: SplitManifest = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    for line in stdout(&a).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let attrs: std::collections::BTreeMap<String, String> =
            serde_json::from_value(v["attributes"].clone()).unwrap();
        assert!(m.id_combinations.contains(&attrs));
    }
}

#[test]
fn meta_train_writes_report_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&[
        "meta-train",
        "--steps",
        "20",
        "--lambda",
        "0.5",
        "--second-order",
        "false",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("meta\t"));
    assert_eq!(
        fs::read_to_string(out.join("steps.jsonl"))
            .unwrap()
            .lines()
            .count(),
        40
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["second_order"], false);
}
