use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name).display().to_string()
}

fn elspin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elspin")).args(args).output().unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn train_small(dir: &Path) -> PathBuf {
    let out = elspin(&[
        "train", "--data", &fixture("frozen_500.csv"), "--learners", "linear,tree", "--folds", "3", "--seed", "1", "--out",
        &path(dir, "m.espn"), "--metrics-csv", &path(dir, "metrics.csv"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("m.espn")
}

#[test]
fn unsupported_fold_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = elspin(&["train", "--data", &fixture("frozen_500.csv"), "--folds", "7", "--out", &path(dir.path(), "m.espn")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("folds"));
    assert!(!dir.path().join("m.espn").exists());
}

#[test]
fn missing_input_fails_with_message() {
    let out = elspin(&["describe", "--data", "/nonexistent/data.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn describe_ends_with_total_row() {
    let out = elspin(&["describe", "--data", &fixture("frozen_500.csv")]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("TOTAL\t500"), "{last}");
}

#[test]
fn sampled_file_reloads_with_requested_size() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = path(dir.path(), "s.csv");
    for method in ["random", "sobol-doptimal", "balanced"] {
        let out = elspin(&["sample", "--data", &fixture("frozen_500.csv"), "--method", method, "--n", "60", "--seed", "4", "--out", &out_path]);
        assert!(out.status.success(), "{method}: {}", String::from_utf8_lossy(&out.stderr));
        let text = std::fs::read_to_string(&out_path).unwrap();
        assert!(text.starts_with("# method:"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 61, "{method}");
    }
}

#[test]
fn imc_summary_and_report_sections() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = train_small(dir.path()).display().to_string();
    assert!(std::fs::read_to_string(path(dir.path(), "metrics.csv")).unwrap().starts_with("sampling,learner"));
    let out = elspin(&[
        "imc", "--bundle", &bundle, "--data", &fixture("frozen_500.csv"), "--polymer", "PVDF", "--target", "400", "--tol", "60", "--n", "1000",
        "--solubility", &fixture("solubility.csv"), "--incompatibility", &fixture("incompatible.csv"), "--out", &path(dir.path(), "imc.json"),
        "--draws", &path(dir.path(), "draws.csv"), "--top", &path(dir.path(), "top.csv"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path(dir.path(), "imc.json")).unwrap()).unwrap();
    assert!(v["acceptance_rate"].is_number());
    assert!(v.get("success_probability").is_some());
    assert_eq!(v["n_draws"], 1000);
    assert_eq!(std::fs::read_to_string(path(dir.path(), "draws.csv")).unwrap().lines().count(), 1001);

    for (format, name) in [("text", "r.txt"), ("html", "r.html")] {
        let out = elspin(&["report", "--bundle", &bundle, "--imc", &path(dir.path(), "imc.json"), "--format", format, "--out", &path(dir.path(), name)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = std::fs::read_to_string(path(dir.path(), name)).unwrap();
        for heading in ["Metrics", "Diagnostics", "Inverse Monte Carlo summary"] {
            assert!(text.contains(heading), "{format} report lacks {heading}");
        }
    }
}

#[test]
fn experimental_mode_omits_acceptance_rate() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = train_small(dir.path()).display().to_string();
    let out = elspin(&[
        "imc", "--bundle", &bundle, "--data", &fixture("frozen_500.csv"), "--mode", "experimental", "--polymer", "PVDF", "--target", "400",
        "--tol", "60", "--n", "500", "--out", &path(dir.path(), "imc.json"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path(dir.path(), "imc.json")).unwrap()).unwrap();
    assert!(v.get("acceptance_rate").is_none());
}
