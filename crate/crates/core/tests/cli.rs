use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
    "dataset": {"synthetic": {"coarse": 2, "children_per_coarse": 2, "dim": 4, "rows": 96}},
    "ratios": [-4, -3], "repetitions": 3, "ks": [1, 2],
    "train": {"schedule": {"epochs": 2}},
    "model": {"hidden": [6]},
    "active": {"budget": 10, "batch_size": 5, "ratio": -3}
}"#;

fn refine(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_refine"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn invalid_synthetic_density_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"{"dataset": {"synthetic": {"rows": 50, "label_density": 1.5}}}"#,
    );
    let out = refine(&["synth"], Some(&config), &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_field_and_zero_threads_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), r#"{"repetitons": 3}"#);
    assert_eq!(refine(&["benchmark"], Some(&config), tmp.path()).status.code(), Some(2));
    let config = write_config(tmp.path(), SMALL);
    let out = refine(&["benchmark", "--threads", "0"], Some(&config), tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_with_io_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = refine(&["synth"], Some(&tmp.path().join("absent.json")), tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn synth_writes_pool_and_test_split() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let out_dir = tmp.path().join("data");
    let out = refine(&["synth"], Some(&config), &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for dir in [out_dir.clone(), out_dir.join("test")] {
        for name in ["features.csv", "coarse.csv", "fine.csv", "hierarchy.json"] {
            assert!(dir.join(name).is_file(), "missing {}", dir.join(name).display());
        }
    }
    let pool = std::fs::read_to_string(out_dir.join("features.csv")).unwrap();
    assert_eq!(pool.lines().filter(|l| !l.is_empty()).count(), 96);
}

#[test]
fn benchmark_on_files_with_single_learner() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let data = tmp.path().join("data");
    assert!(refine(&["synth"], Some(&config), &data).status.success());

    let files = serde_json::json!({
        "dataset": {"files": {
            "train": {
                "features": data.join("features.csv"), "coarse": data.join("coarse.csv"),
                "fine": data.join("fine.csv"), "hierarchy": data.join("hierarchy.json")
            },
            "test": {
                "features": data.join("test/features.csv"), "coarse": data.join("test/coarse.csv"),
                "fine": data.join("test/fine.csv"), "hierarchy": data.join("test/hierarchy.json")
            }
        }},
        "ratios": [-4, -3], "repetitions": 3, "ks": [1, 2],
        "learners": ["fs"],
        "train": {"schedule": {"epochs": 2}},
        "model": {"hidden": [6]}
    });
    let config = write_config(tmp.path(), &files.to_string());
    let out_dir = tmp.path().join("bench");
    let out = refine(&["benchmark"], Some(&config), &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let summary = csv_rows(&out_dir.join("benchmark.csv"));
    assert_eq!(summary.len(), 2 * 2);
    assert!(summary.iter().all(|r| &r[1] == "fs"));

    // Summary means and sample deviations recomputed from the detail file.
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in csv_rows(&out_dir.join("benchmark_detail.csv")) {
        groups.entry((r[0].to_string(), r[3].to_string())).or_default().push(r[4].parse().unwrap());
    }
    for r in &summary {
        let values = &groups[&(r[0].to_string(), r[2].to_string())];
        assert_eq!(values.len(), 3);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let (m, s): (f64, f64) = (r[3].parse().unwrap(), r[4].parse().unwrap());
        assert!((m - mean).abs() < 1e-12 && (s - var.sqrt()).abs() < 1e-12);
    }
    // Recovery is only reported for the pseudo learner.
    assert_eq!(csv_rows(&out_dir.join("recover.csv")).len(), 0);
    assert!(out_dir.join("models/ratio-3_fs.rflp").is_file());
}

#[test]
fn active_and_eval_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let out_dir = tmp.path().join("act");
    let out = refine(&["active"], Some(&config), &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let auc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("auc.json")).unwrap()).unwrap();
    assert!(auc.is_object());
    for s in ["random", "uncertainty", "pseudo"] {
        let rows = csv_rows(&out_dir.join(format!("progression_{s}.csv")));
        // Rounds 0, 1 and 2 for each of the two k values.
        assert_eq!(rows.len(), 3 * 2, "{s}");
    }

    let bench = tmp.path().join("bench");
    assert!(refine(&["benchmark"], Some(&config), &bench).status.success());
    let model = bench.join("models/ratio-4_pseudo.rflp");
    let eval_dir = tmp.path().join("eval");
    let out = refine(&["eval", "--model", model.to_str().unwrap()], Some(&config), &eval_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(eval_dir.join("eval.json").is_file());

    let missing = refine(&["eval", "--model", "/nonexistent/model.rflp"], Some(&config), &eval_dir);
    assert_eq!(missing.status.code(), Some(3));
}
