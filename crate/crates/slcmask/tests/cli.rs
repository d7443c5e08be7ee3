//! End-to-end checks of the `slcmask` binary: exit codes, determinism and
//! the reference configuration files shipped with the repository.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use slcmask::commands::cmd_rf_with;
use slcmask::config::{parse_grid, render_grid};
use slcmask::{CliError, RunConfig};
use slcmask_core::metrics::default_ablation_grid;
use slcmask_core::slc::{FusedLayers, SlcConfig};

/// Small enough to train in a few seconds.
const TINY: &[&str] = &[
    "--desk",
    "--synth.count=5",
    "--pipeline.epochs=1",
    "--pipeline.warmup_iters=0",
    "--pipeline.lr_drop_epochs=",
];

fn slcmask(args: &[&str], extra: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_slcmask"));
    cmd.args(args).args(extra);
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn repo_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config").join(name)
}

fn synth(dir: &Path) {
    let out = slcmask(&[TINY, &["synth"]].concat(), &[dir]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut all = Vec::new();
    for sub in ["images", "annotations"] {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        all.extend(entries.into_iter().map(|p| (p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap())));
    }
    all.push((PathBuf::from("manifest.txt"), fs::read(dir.join("manifest.txt")).unwrap()));
    all
}

#[test]
fn reference_config_files_match_the_rendered_presets() {
    assert_eq!(fs::read_to_string(repo_file("defaults.conf")).unwrap(), RunConfig::default().render());
    assert_eq!(fs::read_to_string(repo_file("desk.conf")).unwrap(), RunConfig::desk().render());
    let text = fs::read_to_string(repo_file("ablation.grid")).unwrap();
    let grid = parse_grid(&text, &SlcConfig::default()).unwrap();
    assert_eq!(grid, default_ablation_grid());
    assert_eq!(parse_grid(&render_grid(&grid), &SlcConfig::default()).unwrap(), grid);
}

#[test]
fn config_precedence_is_overrides_then_file_then_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.conf");
    fs::write(&file, "slc.r2 = 5\npipeline.epochs = 7\n").unwrap();
    let out = slcmask(&["--pipeline.epochs=9", "config", "--config"], &[&file]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("slc.r2 = 5\n"));
    assert!(text.contains("pipeline.epochs = 9\n"));
    assert!(text.contains(&format!("slc.r1 = {}\n", SlcConfig::default().r1)));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&slcmask(&["--slc.nonsense=1", "config"], &[])), 2);
    assert_eq!(code(&slcmask(&["--slc.r1=abc", "config"], &[])), 2);
    assert_eq!(code(&slcmask(&["frobnicate"], &[])), 2);
    assert_eq!(code(&slcmask(&["rf", "0", "3"], &[])), 2);
    assert_eq!(code(&slcmask(&["rf", "2", "3", "--fused=2,3"], &[])), 2);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&slcmask(&["train"], &[&dir.path().join("missing"), &dir.path().join("out")])), 2);
}

#[test]
fn rf_prints_agreeing_fields_and_mismatch_exits_with_one() {
    let out = slcmask(&["rf", "2", "3"], &[]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["3", "13", "13"]), "{text}");

    let off_by_one = cmd_rf_with(2, 3, FusedLayers::ALL, |cfg| Ok(cfg.fused_layers.count() * 4 + 2));
    let err = off_by_one.unwrap_err();
    assert!(matches!(err, CliError::Mismatch(_)));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn synth_is_deterministic_across_worker_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path());
    let out = slcmask(&[TINY, &["--workers", "3", "synth"]].concat(), &[b.path()]);
    assert_eq!(code(&out), 0);
    assert_eq!(files(a.path()), files(b.path()));
}

#[test]
fn empty_corpus_is_reported_not_crashed() {
    let dir = tempfile::tempdir().unwrap();
    let out = slcmask(&["--desk", "--synth.count=0", "synth"], &[dir.path()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("scenes: 0"));
}

#[test]
fn train_eval_round_trip_and_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, run) = (dir.path().join("corpus"), dir.path().join("run"));
    synth(&corpus);
    let out = slcmask(&[TINY, &["train"]].concat(), &[&corpus, &run]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.ckpt", "model.params", "loss.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let checkpoint = run.join("model.ckpt");
    let out = slcmask(&[TINY, &["eval"]].concat(), &[&corpus, &checkpoint]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("report.csv").is_file() && run.join("report.txt").is_file());
    let first = fs::read(run.join("report.csv")).unwrap();
    assert_eq!(code(&slcmask(&[TINY, &["eval"]].concat(), &[&corpus, &checkpoint])), 0);
    assert_eq!(fs::read(run.join("report.csv")).unwrap(), first, "evaluation is deterministic");

    let bytes = fs::read(&checkpoint).unwrap();
    fs::write(&checkpoint, &bytes[..bytes.len() / 2]).unwrap();
    let out = slcmask(&[TINY, &["eval"]].concat(), &[&corpus, &checkpoint]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
