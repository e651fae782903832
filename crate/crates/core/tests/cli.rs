//! The command-line tool end to end: subcommands, output files, error lines
//! and exit codes.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{tiny_config, write_config};
use timekd::config::RunConfig;
use timekd::pipeline;
use timekd::synth::synth_dataset;

fn timekd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_timekd")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup(dir: &Path) -> (RunConfig, String) {
    let mut cfg = tiny_config(&dir.join("run"));
    cfg.precision = timekd::tensor::Precision::F32;
    let conf = dir.join("run.conf");
    write_config(&cfg, &conf);
    (cfg, conf.to_string_lossy().into_owned())
}

fn ok(args: &[&str]) -> String {
    let o = timekd(args);
    assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn full_run_writes_documented_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, conf) = setup(dir.path());
    let out = cfg.output_path();
    let ingest = ok(&["ingest", "--config", &conf]);
    assert!(ingest.contains("synthetic"), "{ingest}");
    ok(&["train-teacher", "--config", &conf]);
    ok(&["distill", "--config", &conf]);
    let ckpt = out.join(pipeline::STUDENT_FILE);
    ok(&["evaluate", "--config", &conf, "--checkpoint", ckpt.to_str().unwrap()]);
    ok(&["report", "--config", &conf]);

    for f in [
        "config.resolved",
        "teacher_log.csv",
        "student_log.csv",
        "metrics.csv",
        "summary.txt",
        "a_pe.csv",
        "a_tse.csv",
        "e_gt_relation.csv",
        "t_h_relation.csv",
        pipeline::TEACHER_FILE,
        pipeline::CLM_FILE,
        pipeline::CACHE_FILE,
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(out.join("student_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,train_loss,val_loss"));
    assert_eq!(log.lines().count(), 1 + cfg.student_epochs);
    let heat = std::fs::read_to_string(out.join("a_pe.csv")).unwrap();
    assert_eq!(heat.lines().count(), 1 + cfg.synth_n);

    let input = dir.path().join("input.csv");
    synth_dataset(4, 50, cfg.synth_n, 0.05).unwrap().write_csv(&input).unwrap();
    let fc = dir.path().join("fc.csv");
    ok(&[
        "forecast",
        "--config",
        &conf,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        fc.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&fc).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + cfg.horizon);
    assert_eq!(lines[0].split(',').count(), 1 + cfg.synth_n);
}

#[test]
fn stale_cache_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, conf) = setup(dir.path());
    ok(&["train-teacher", "--config", &conf]);
    cfg.delta += 1.0;
    write_config(&cfg, Path::new(&conf));
    let o = timekd(&["distill", "--config", &conf]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.starts_with("error kind=StaleCacheError msg=\""), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn bad_config_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "histroy_len = 5\n").unwrap();
    let o = timekd(&["ingest", "--config", conf.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(7));
    assert!(stderr(&o).starts_with("error kind=ConfigError"));

    let o = timekd(&["ingest", "--config", dir.path().join("missing.conf").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).starts_with("error kind=IoError"));

    let o = timekd(&["evaluate", "--config", conf.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error kind=UsageError"));
}

#[test]
fn joint_mode_has_no_separate_teacher_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, conf) = setup(dir.path());
    cfg.mode = timekd::config::TrainingMode::Joint;
    write_config(&cfg, Path::new(&conf));
    let o = timekd(&["train-teacher", "--config", &conf]);
    assert_eq!(o.status.code(), Some(7));
    ok(&["distill", "--config", &conf]);
    assert!(cfg.output_path().join(pipeline::STUDENT_FILE).exists());
}

#[test]
fn short_csv_reports_insufficient_data() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("short.csv");
    synth_dataset(0, 10, 2, 0.0).unwrap().write_csv(&csv).unwrap();
    let (mut cfg, conf) = setup(dir.path());
    cfg.data_path = csv.to_string_lossy().into_owned();
    write_config(&cfg, Path::new(&conf));
    let o = timekd(&["ingest", "--config", &conf]);
    assert_eq!(o.status.code(), Some(8), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error kind=InsufficientDataError"));
}
