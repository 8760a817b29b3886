use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use matl_cli::aggregate::{SummaryRow, SUMMARY_COLUMNS};
use matl_cli::config::ExperimentConfig;
use matl_cli::records::{read_metrics, read_updates, CsvSink};
use matl_cli::runner::Manifest;
use serde_json::json;

fn matl(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_matl"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("MATL_SEED_OFFSET");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tiny_config(name: &str, methods: &[&str], seeds: &[u64]) -> serde_json::Value {
    json!({
        "experiment": name,
        "env": {"family": "pointmass"},
        "methods": methods,
        "seeds": seeds,
        "train": {
            "iterations": 3,
            "inner_iterations": 1,
            "horizon": 20,
            "episodes_per_batch": 2,
            "agent": {"policy_hidden": [4], "baseline_hidden": [4]},
            "pretrain": {"max_iterations": 2},
            "eval_episodes": 1
        }
    })
}

fn write_config(dir: &Path, config: &serde_json::Value) -> PathBuf {
    let path = dir.join(format!("{}.json", config["experiment"].as_str().unwrap()));
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn run_ok(config: &Path, out: &Path, extra: &[&str], envs: &[(&str, &str)]) {
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = matl(&args, envs);
    assert!(o.status.success(), "run failed: {}", stderr(&o));
}

#[test]
fn misspelled_key_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config("typo", &["matl"], &[1]);
    config["alignment"] = json!({"lamda": 0.5});
    let path = write_config(dir.path(), &config);
    let o = matl(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alignment.lamda"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_exits_2() {
    let o = matl(&["run", "--config", "/nonexistent/x.json"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn diverging_dynamics_exit_3_and_keep_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config("blowup", &["independent"], &[1]);
    config["env"]["source"] = json!({"damping": 1.0e30});
    config["env"]["target"] = json!({"damping": 1.0e30});
    let path = write_config(dir.path(), &config);
    let o = matl(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join("blowup/manifest.json")).unwrap()).unwrap();
    assert!(manifest.cells[0].error.as_deref().unwrap().contains("non-finite"));
    assert!(dir.path().join("blowup/independent/1.csv").exists());
}

#[test]
fn minimal_run_writes_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &tiny_config("tiny", &["independent"], &[7]));
    run_ok(&path, dir.path(), &["--workers", "1"], &[]);
    let exp = dir.path().join("tiny");
    let rows = read_metrics(&exp.join("independent/7.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r.target_steps).collect::<Vec<_>>(), vec![40, 80, 120]);
    assert!(rows.iter().all(|r| r.env_return_S.is_none() && r.disc_accuracy.is_none()));
    assert_eq!(read_updates(&exp.join("independent/7.updates.csv")).unwrap().len(), 3);
    for f in ["summary.csv", "plot.svg", "manifest.json", "independent/7.policy.bin"] {
        assert!(exp.join(f).exists(), "{f} missing");
    }
}

#[test]
fn manifest_echo_reproduces_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &tiny_config("echo", &["independent"], &[1]));
    run_ok(&path, dir.path(), &["--deterministic"], &[]);
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join("echo/manifest.json")).unwrap()).unwrap();
    let echoed = ExperimentConfig::from_json(&manifest.config.to_string()).unwrap();
    assert_eq!(echoed.hash(), manifest.config_hash);
    assert_eq!(ExperimentConfig::load(&path).unwrap().hash(), manifest.config_hash);
    assert_eq!(manifest.workers, 1);
    assert_eq!(manifest.cells.len(), 1);
    assert!(manifest.cells[0].error.is_none());
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &tiny_config("det", &["independent", "matl", "matl_f"], &[1, 2]));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&path, &a, &["--deterministic"], &[]);
    run_ok(&path, &b, &["--deterministic"], &[]);
    let mut compared = 0;
    for method in ["independent", "matl", "matl_f"] {
        for file in ["1.csv", "2.csv", "1.updates.csv", "2.updates.csv"] {
            let rel = Path::new("det").join(method).join(file);
            assert_eq!(std::fs::read(a.join(&rel)).unwrap(), std::fs::read(b.join(&rel)).unwrap(), "{}", rel.display());
            compared += 1;
        }
    }
    assert_eq!(compared, 12);
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &tiny_config("par", &["independent", "matl"], &[1, 2]));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&path, &a, &["--workers", "1"], &[]);
    run_ok(&path, &b, &["--workers", "3"], &[]);
    for rel in ["par/independent/2.csv", "par/matl/1.csv", "par/summary.csv"] {
        assert_eq!(std::fs::read(a.join(rel)).unwrap(), std::fs::read(b.join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn seed_offset_shifts_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &tiny_config("shift", &["independent"], &[1, 2]));
    run_ok(&path, dir.path(), &[], &[("MATL_SEED_OFFSET", "100")]);
    let m = dir.path().join("shift/independent");
    assert!(m.join("101.csv").exists() && m.join("102.csv").exists());
    assert!(!m.join("1.csv").exists());
    let bad = matl(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[("MATL_SEED_OFFSET", "soon")]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn target_steps_match_across_variants() {
    let dir = tempfile::tempdir().unwrap();
    let methods = ["independent", "direct_transfer", "fine_tuning", "matl_u", "matl", "matl_f"];
    let path = write_config(dir.path(), &tiny_config("fair", &methods, &[3]));
    run_ok(&path, dir.path(), &[], &[]);
    let steps: Vec<Vec<usize>> = methods
        .iter()
        .map(|m| read_metrics(&dir.path().join("fair").join(m).join("3.csv")).unwrap().iter().map(|r| r.target_steps).collect())
        .collect();
    assert!(steps.iter().all(|s| s == &steps[0]), "{steps:?}");
}

#[test]
fn eval_scores_a_saved_policy() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &tiny_config("score", &["independent"], &[1]));
    run_ok(&path, dir.path(), &[], &[]);
    let policy = dir.path().join("score/independent/1.policy.bin");
    let args = ["eval", "--policy", policy.to_str().unwrap(), "--config", path.to_str().unwrap(), "--episodes", "2"];
    let first = matl(&args, &[]);
    assert!(first.status.success(), "{}", stderr(&first));
    let text = String::from_utf8_lossy(&first.stdout).into_owned();
    let value: f64 = text.rsplit(':').next().unwrap().trim().parse().unwrap();
    assert!(value.is_finite());
    assert_eq!(matl(&args, &[]).stdout, first.stdout);
    let zero = matl(&["eval", "--policy", policy.to_str().unwrap(), "--config", path.to_str().unwrap(), "--episodes", "0"], &[]);
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn gradcheck_subcommand_passes() {
    let o = matl(&["gradcheck", "--cases", "5"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(!text.contains("FAIL"));
    assert!(text.lines().count() >= 4);
}

fn summary_row(method: &str, iteration: usize, value: f64) -> SummaryRow {
    SummaryRow {
        method: method.into(),
        iteration,
        target_steps: 100 * (iteration + 1),
        seeds: 3,
        median: value,
        q25: value - 0.1,
        q75: value + 0.1,
        norm_median: value,
        norm_q25: value - 0.1,
        norm_q75: value + 0.1,
    }
}

fn write_summary(path: &Path, rows: &[SummaryRow]) {
    let mut sink = CsvSink::create(path, &SUMMARY_COLUMNS).unwrap();
    for r in rows {
        sink.write(r).unwrap();
    }
}

#[test]
fn plot_is_valid_svg_with_one_median_per_method_and_replots_identically() {
    let dir = tempfile::tempdir().unwrap();
    let methods = ["independent", "direct_transfer", "fine_tuning", "matl_u", "matl", "matl_f"];
    let rows: Vec<SummaryRow> = methods
        .iter()
        .enumerate()
        .flat_map(|(k, m)| (0..5).map(move |i| summary_row(m, i, (i as f64 + k as f64) / 10.0)))
        .collect();
    let summary = dir.path().join("summary.csv");
    write_summary(&summary, &rows);
    let (a, b) = (dir.path().join("a.svg"), dir.path().join("b.svg"));
    for out in [&a, &b] {
        let o = matl(&["plot", "--summary", summary.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.as_bytes(), std::fs::read(&b).unwrap().as_slice());
    let doc = roxmltree::Document::parse(&text).expect("well-formed SVG");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let medians: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("path") && n.attribute("class") == Some("median")).collect();
    assert_eq!(medians.len(), 6);
    let named: Vec<&str> = medians.iter().filter_map(|n| n.attribute("data-method")).collect();
    assert_eq!(named, methods);
    assert_eq!(doc.descendants().filter(|n| n.attribute("class") == Some("iqr")).count(), 6);
}

#[test]
fn plotting_an_empty_summary_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("summary.csv");
    write_summary(&summary, &[]);
    let o = matl(&["plot", "--summary", summary.to_str().unwrap(), "--out", dir.path().join("x.svg").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));
}

#[test]
fn aggregate_with_a_reference_reports_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config("full", &["independent"], &[1, 2]);
    let path = write_config(dir.path(), &config);
    run_ok(&path, dir.path(), &[], &[]);
    config["experiment"] = json!("none");
    config["env"]["target_reward"] = json!({"kind": "none"});
    let path = write_config(dir.path(), &config);
    run_ok(&path, dir.path(), &[], &[]);
    let full = dir.path().join("full");
    let none = dir.path().join("none");
    let o = matl(&["aggregate", "--dir", none.to_str().unwrap(), "--reference", full.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = matl_cli::aggregate::read_summary(&none.join("summary.csv")).unwrap();
    let reference = matl_cli::aggregate::best_final_median(&matl_cli::aggregate::load_curves(&full).unwrap());
    for r in &rows {
        assert!((r.norm_median - r.median / reference).abs() < 1e-12);
    }
}
