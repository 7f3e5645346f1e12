//! End-to-end behaviour of the `distortkd` binary on a tiny configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use distortkd::nn::Checkpoint;
use distortkd_cli::matrix::{read_summary_csv, SummaryTable, SUMMARY_CSV};
use distortkd_cli::{ModelId, Run, RunConfig, Variant};

const BIN: &str = env!("CARGO_BIN_EXE_distortkd");

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.json")
}

fn cli(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--quiet")
        .arg("--config")
        .arg(tiny())
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> serde_json::Value {
    let o = cli(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is json")
}

fn error_of(o: &Output) -> serde_json::Value {
    assert!(!o.status.success());
    let line = String::from_utf8_lossy(&o.stderr);
    let last = line.lines().last().expect("an error line");
    serde_json::from_str(last).expect("stderr ends with a json error")
}

fn prepare_teacher(out: &Path) {
    ok(out, &["gen-corpus"]);
    ok(out, &["pretrain-teacher"]);
}

#[test]
fn distillation_is_bit_reproducible_across_directories() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        prepare_teacher(dir);
        ok(dir, &["distill", "--variant", "S4"]);
    }
    let load = |d: &Path| Checkpoint::load(&d.join("students/S4/checkpoint.json")).unwrap();
    assert_eq!(load(a.path()).param_hash(), load(b.path()).param_hash());
    assert_eq!(
        fs::read(a.path().join("students/S4/train_log.jsonl")).unwrap(),
        fs::read(b.path().join("students/S4/train_log.jsonl")).unwrap()
    );
}

#[test]
fn eval_without_a_probe_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    prepare_teacher(dir.path());
    let err = error_of(&cli(dir.path(), &["eval", "--model", "T1"]));
    assert_eq!(err["error"]["kind"], "missing_dependency");
    assert_eq!(err["error"]["stage"], "probes/T1");
    assert!(err["error"]["message"].as_str().unwrap().contains("probe --model"));

    ok(dir.path(), &["probe", "--model", "T1"]);
    let report = ok(dir.path(), &["eval", "--model", "T1"]);
    assert_eq!(report["status"], "done");
    assert!(dir.path().join("teacher_reports/T1.json").exists());
}

#[test]
fn missing_upstream_stage_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-corpus"]);
    let err = error_of(&cli(dir.path(), &["distill", "--variant", "S1'"]));
    assert_eq!(err["error"]["kind"], "missing_dependency");
    assert_eq!(err["error"]["stage"], "teacher_adapted");
}

#[test]
fn stages_are_skipped_when_complete_and_never_overwritten_under_another_config() {
    let dir = tempfile::tempdir().unwrap();
    let first = ok(dir.path(), &["gen-corpus"]);
    assert_eq!(first["status"], "done");
    let again = ok(dir.path(), &["gen-corpus"]);
    assert_eq!(again["status"], "cached");

    let err = error_of(&cli(dir.path(), &["--seed", "9", "gen-corpus"]));
    assert_eq!(err["error"]["kind"], "overwrite_refused");
    assert_eq!(err["error"]["stage"], "corpus");

    // Downstream of a corpus built with another seed is stale, not missing.
    let err = error_of(&cli(dir.path(), &["--seed", "9", "pretrain-teacher"]));
    assert_eq!(err["error"]["kind"], "stale_dependency");
}

#[test]
fn tampered_outputs_are_detected() {
    let dir = tempfile::tempdir().unwrap();
    prepare_teacher(dir.path());
    let ck = dir.path().join("teacher/checkpoint.json");
    let mut text = fs::read_to_string(&ck).unwrap();
    text.push(' ');
    fs::write(&ck, text).unwrap();
    let err = error_of(&cli(dir.path(), &["adapt-teacher"]));
    assert_eq!(err["error"]["kind"], "corrupt_artifact");
}

#[test]
fn unknown_config_keys_and_models_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"corpus": {"train": 4}, "teachr": {}}"#).unwrap();
    let o = Command::new(BIN)
        .args(["--quiet", "--out"])
        .arg(dir.path())
        .arg("--config")
        .arg(&cfg)
        .arg("gen-corpus")
        .output()
        .unwrap();
    assert_eq!(error_of(&o)["error"]["kind"], "config");

    let err = error_of(&cli(dir.path(), &["probe", "--model", "S9"]));
    assert_eq!(err["error"]["kind"], "unknown_model");
}

#[test]
fn config_hash_ignores_the_output_directory() {
    let a = RunConfig::load(&tiny()).unwrap();
    let mut b = a.clone();
    b.output_dir = Some("/somewhere/else".into());
    assert_eq!(a.sha256(), b.sha256());
    b.distill.gamma = 0.5;
    assert_ne!(a.sha256(), b.sha256());
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            walk(&p, out);
        } else {
            out.push(p);
        }
    }
}

#[test]
fn tiny_matrix_writes_every_report_and_one_summary() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["reproduce-matrix"]);
    let cfg = RunConfig::load(&tiny()).unwrap();

    let mut files = Vec::new();
    walk(dir.path(), &mut files);
    let reports: Vec<&PathBuf> = files
        .iter()
        .filter(|p| p.parent().and_then(Path::file_name).is_some_and(|n| n == "reports"))
        .collect();
    assert_eq!(reports.len(), 2 * Variant::MATRIX.len());
    let summaries: Vec<&PathBuf> = files.iter().filter(|p| p.ends_with(SUMMARY_CSV)).collect();
    assert_eq!(summaries.len(), 1);

    // Every JSON, JSONL and CSV output carries the config hash and version.
    let hash = cfg.sha256();
    for f in &files {
        let name = f.file_name().unwrap().to_string_lossy();
        let text = || fs::read_to_string(f).unwrap();
        if name == "stage.json" || f.parent().unwrap().ends_with("stages") {
            let v: serde_json::Value = serde_json::from_str(&text()).unwrap();
            assert_eq!(v["config_sha256"], hash.as_str(), "{}", f.display());
        } else if name.ends_with(".json") {
            let v: serde_json::Value = serde_json::from_str(&text()).unwrap();
            assert_eq!(v["provenance"]["config_sha256"], hash.as_str(), "{}", f.display());
            assert!(v["provenance"]["version"].is_string());
        } else if name.ends_with(".jsonl") {
            let first = text().lines().next().unwrap().to_string();
            let v: serde_json::Value = serde_json::from_str(&first).unwrap();
            assert_eq!(v["provenance"]["config_sha256"], hash.as_str());
        } else if name.ends_with(".csv") {
            assert!(text().starts_with(&format!("# config_sha256={hash} version=")), "{}", f.display());
        }
    }

    let rows = read_summary_csv(&dir.path().join(SUMMARY_CSV)).unwrap();
    assert_eq!(rows.len(), 2 + Variant::MATRIX.len());
    assert_eq!(rows[0]["model"], "T1");
    for row in &rows {
        assert_eq!(row["n_replicates"], "2");
        for src in row["sources"].split(';') {
            assert!(dir.path().join(src).exists(), "{src}");
        }
    }
    let table = SummaryTable::load(dir.path()).unwrap();
    assert_eq!(table.replicates.len(), 2);
    assert_ne!(table.replicates[0].seed, table.replicates[1].seed);
    let s1 = table.row("S1").unwrap();
    let by_hand = table.reports("S1").iter().map(|r| r.invariance).sum::<f64>() / 2.0;
    assert!((s1.invariance - by_hand).abs() < 1e-15);

    // A second invocation reuses every stage and rewrites an identical table.
    let before = fs::read(dir.path().join(SUMMARY_CSV)).unwrap();
    ok(dir.path(), &["reproduce-matrix"]);
    assert_eq!(before, fs::read(dir.path().join(SUMMARY_CSV)).unwrap());
}

#[test]
fn library_and_binary_agree_on_stage_keys() {
    let dir = tempfile::tempdir().unwrap();
    prepare_teacher(dir.path());
    let cfg = RunConfig::load(&tiny()).unwrap();
    let run = Run::new(dir.path(), cfg, 0);
    assert_eq!(run.teacher_stage().require().unwrap().stage_key, run.teacher_stage().key);
    let id = ModelId::parse("T1").unwrap();
    assert!(run.probe_stage(&id).require().is_err());
}
