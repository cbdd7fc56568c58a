use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dect_core::manifest::file_sha256;
use dect_core::{MethodReport, RunManifest};

fn dect(run: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dect"))
        .args(["--seed", "3", "--workers", "1", "--run-dir"])
        .arg(run)
        .args(args)
        .output()
        .expect("spawn dect")
}

fn ok(run: &Path, args: &[&str]) -> String {
    let out = dect(run, args);
    assert!(out.status.success(), "dect {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn err(run: &Path, args: &[&str]) -> String {
    let out = dect(run, args);
    assert!(!out.status.success(), "dect {args:?} unexpectedly succeeded");
    let e = String::from_utf8(out.stderr).unwrap();
    assert_eq!(e.trim_end().lines().count(), 1, "diagnostic is not one line: {e}");
    e
}

const TINY: [&str; 7] = ["simulate", "--n-simple", "2", "--n-bags", "2", "--split", "1,1,1,0"];

/// Every file under `dir` except wall-clock timings, with its digest.
fn snapshot(dir: &Path) -> Vec<(PathBuf, String)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                if p.file_name().unwrap() != "timings" {
                    stack.push(p);
                }
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), file_sha256(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn parent_sha(m: &RunManifest, stage: &str) -> String {
    m.parents.iter().find(|p| p.stage == stage).unwrap_or_else(|| panic!("no parent {stage}")).sha256.clone()
}

#[test]
fn help_lists_every_command() {
    let out = Command::new(env!("CARGO_BIN_EXE_dect")).arg("--help").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for c in ["simulate", "labels", "train-image", "train-sino", "reconstruct", "evaluate", "export-slices"] {
        assert!(text.contains(c), "{c} missing from --help");
    }
    assert!(text.contains("DECT_OUTPUT_ROOT"));
}

#[test]
fn full_stage_sequence_chains_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    ok(&run, &TINY);
    ok(&run, &["labels", "--iterations", "8", "--mu-grid", "1,10"]);
    let train = ["--epochs", "1", "--batch-size", "4"];
    ok(&run, &[&["train-image"][..], &train].concat());
    ok(&run, &[&["train-sino"][..], &train].concat());
    let table = ok(&run, &["evaluate"]);
    assert!(table.contains("Ours") && table.contains("MBIR-TV"), "{table}");

    let sha = |stage: &str| file_sha256(&run.join(format!("manifests/{stage}.json"))).unwrap();
    let load = |stage: &str| RunManifest::load(&run.join(format!("manifests/{stage}.json"))).unwrap().0;
    assert!(load("simulate").parents.is_empty());
    assert_eq!(parent_sha(&load("labels"), "simulate"), sha("simulate"));
    assert_eq!(parent_sha(&load("train-image"), "labels"), sha("labels"));
    assert_eq!(parent_sha(&load("train-sino"), "train-image"), sha("train-image"));
    let ev = load("evaluate");
    assert_eq!(parent_sha(&ev, "train-sino"), sha("train-sino"));
    assert!(ev.metrics.contains_key("nmse.ours.80kVp"));
    for o in &ev.outputs {
        assert_eq!(file_sha256(&run.join(&o.path)).unwrap(), o.sha256, "{}", o.path);
    }

    let report: MethodReport = MethodReport::from_json(&fs::read_to_string(run.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report.cases.len(), 1);
    assert!(report.runtime_seconds.is_empty(), "timings belong in timings/");
    let again = ok(&run, &["evaluate", "--from-artifacts"]);
    assert!(again.contains("matches the live run exactly"), "{again}");

    // Re-running a stage rewrites identical bytes.
    let before = snapshot(&run);
    ok(&run, &["labels", "--iterations", "8", "--mu-grid", "1,10"]);
    ok(&run, &[&["train-image"][..], &train].concat());
    assert_eq!(before, snapshot(&run));

    // Standalone reconstruction of a measured file with the run's models.
    let input = run.join("cases/bag-001/measured.dtn");
    let out = tmp.path().join("out/recon.dtn");
    let input_s = input.to_str().unwrap();
    let out_s = out.to_str().unwrap();
    ok(&run, &["reconstruct", "--input", input_s, "--output", out_s, "--keep-intermediates"]);
    assert!(out.exists());
    for part in ["right-inverse", "image-denoised", "dense-sinogram", "dense-denoised", "fbp"] {
        assert!(tmp.path().join(format!("out/recon.{part}.dtn")).exists(), "{part}");
    }
    let (m, _) = RunManifest::load(&tmp.path().join("out/recon.dtn.manifest.json")).unwrap();
    let stages: Vec<&str> = m.parents.iter().map(|p| p.stage.as_str()).collect();
    assert!(stages.contains(&"simulate") && stages.contains(&"train-image") && stages.contains(&"train-sino"), "{stages:?}");

    let pgm_dir = tmp.path().join("pgm");
    ok(&run, &["export-slices", "--input", out_s, "--output", pgm_dir.to_str().unwrap(), "--window-min", "0", "--window-max", "0.05"]);
    let pgms: Vec<_> = fs::read_dir(&pgm_dir).unwrap().filter_map(|e| e.ok()).filter(|e| e.path().extension().is_some_and(|x| x == "pgm")).collect();
    assert_eq!(pgms.len(), 2 * 8);
    let bytes = fs::read(pgms[0].path()).unwrap();
    assert!(bytes.starts_with(b"P5\n128 128\n255\n"));
}

#[test]
fn reconstruct_names_the_missing_model_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    ok(&run, &TINY);
    let input = run.join("cases/simple-000/measured.dtn");
    let input_s = input.to_str().unwrap();
    let e = err(&run, &["reconstruct", "--input", input_s, "--method", "ours"]);
    assert!(e.contains("--image-model"), "{e}");
    let missing = tmp.path().join("nope.dcnn");
    let e = err(&run, &["reconstruct", "--input", input_s, "--method", "image-cnn", "--image-model", missing.to_str().unwrap()]);
    assert!(e.contains("--image-model") && e.contains("does not exist"), "{e}");
    let e = err(&run, &["reconstruct", "--input", tmp.path().join("x.dtn").to_str().unwrap(), "--method", "fbp"]);
    assert!(e.contains("--input"), "{e}");
    ok(&run, &["reconstruct", "--input", input_s, "--method", "fbp"]);
    assert!(run.join("recon/measured-fbp.dtn").exists());
}

#[test]
fn diagnostics_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let e = err(&run, &["labels"]);
    assert!(e.starts_with("dect labels: error:") && e.contains("simulate"), "{e}");
    let e = err(&run, &["--preset", "huge", "simulate"]);
    assert!(e.contains("huge"), "{e}");
    let e = err(&run, &["simulate", "--split", "1,1"]);
    assert!(e.contains("--split"), "{e}");
    ok(&run, &TINY);
    let e = err(&run, &["train-image", "--epochs", "1"]);
    assert!(e.contains("labels"), "{e}");
    let out = Command::new(env!("CARGO_BIN_EXE_dect")).args(["--seed", "4", "--run-dir"]).arg(&run).arg("labels").output().unwrap();
    assert!(!out.status.success());
    let e = String::from_utf8(out.stderr).unwrap();
    assert!(e.trim_end().lines().count() == 1 && e.contains("seed"), "{e}");
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dect"))
        .env("DECT_OUTPUT_ROOT", tmp.path())
        .args(["--seed", "5"])
        .args(&TINY)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("desk-s5/manifests/simulate.json").exists());
    assert!(tmp.path().join("desk-s5/corpus.json").exists());
}
