use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adfuse(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adfuse"))
        .arg("--root")
        .arg(root)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = adfuse(root, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixtures(root: &Path) {
    let printed = ok(
        root,
        &["fixtures", "generate", "--out", "data", "--n-train", "30", "--n-test", "10", "--text-dim", "8", "--seed", "2"],
    );
    assert!(printed.contains("40 subjects"), "{printed}");
}

#[test]
fn train_evaluate_predict() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fixtures(root);

    let dev = ok(root, &["train", "--manifest", "data/manifest.json", "--out", "model", "--c-grid", "0.01,1"]);
    assert!(dev.contains("best C"), "{dev}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("model/dev_report.json")).unwrap()).unwrap();
    assert_eq!(report["grid"].as_array().unwrap().len(), 2);

    let table = ok(
        root,
        &["evaluate", "--manifest", "data/manifest.json", "--model", "model/model.json", "--out", "eval"],
    );
    assert!(table.contains("linguistic-document") && table.contains("Accuracy"), "{table}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("eval/report.json")).unwrap()).unwrap();
    assert!(report["accuracy"].as_f64().unwrap() >= 0.9);

    let preds = ok(
        root,
        &["predict", "--manifest", "data/manifest.json", "--model", "model/model.json", "--out", "pred"],
    );
    let lines: Vec<&str> = preds.lines().collect();
    assert_eq!(lines.len(), 10);
    assert!(lines.iter().all(|l| l.starts_with('T') && l.split('\t').count() == 3), "{preds}");
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fixtures(root);
    let config = serde_json::json!({
        "manifest": "data/manifest.json",
        "system": "linguistic-document+acoustic:ivec_vox",
        "c_grid": [0.1],
        "out": "from-config",
    });
    fs::write(root.join("run.json"), config.to_string()).unwrap();

    ok(root, &["train", "--config", "run.json", "--out", "overridden"]);
    assert!(!root.join("from-config").exists());
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("overridden/model.json")).unwrap()).unwrap();
    assert_eq!(model["feature_width"], 8 + 400);

    fs::write(root.join("bad.json"), r#"{"manifest": "data/manifest.json", "colour": 1}"#).unwrap();
    let out = adfuse(root, &["train", "--config", "bad.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn normalize_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir(root.join("cha")).unwrap();
    fs::write(root.join("cha/one.cha"), "*PAR:\tthe &uh boy <is> [/] is falling .\n").unwrap();
    fs::write(root.join("cha/two.cha"), "*PAR:\twater xxx overflowing .\n").unwrap();
    let printed = ok(root, &["normalize", "--input", "cha", "--output", "norm"]);
    assert!(printed.lines().any(|l| l.starts_with("total") && l.contains(" 7 ")), "{printed}");
    assert!(root.join("norm/one.json").is_file() && root.join("norm/stats.json").is_file());

    fixtures(root);
    let printed = ok(root, &["stats", "--manifest", "data/manifest.json"]);
    for key in ["train-AD", "train-control", "test", "total"] {
        assert!(printed.contains(key), "{printed}");
    }
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fixtures(root);
    for args in [
        &["train", "--manifest", "data/manifest.json", "--system", "bogus"][..],
        &["train", "--manifest", "missing.json"],
        &["train"],
        &["evaluate", "--manifest", "data/manifest.json", "--model", "nope.json"],
        &["train", "--manifest", "data/manifest.json", "--c-grid", "1,x"],
    ] {
        let out = adfuse(root, args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"), "{args:?}");
    }
}
