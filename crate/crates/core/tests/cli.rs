//! End-to-end runs of the `bnas` binary on tiny synthetic problems.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bnas::export::{export_dot, parse_genotype_json, Checkpoint};
use bnas::search::ReportRecord;

const TINY: &str = r#"{
  "seed": 3,
  "dataset": "synthetic:{\"classes\":2,\"size\":8,\"count\":60,\"test_count\":20,\"noise\":0.3}",
  "network": {"channels": 4, "cells": 2, "nodes": 2, "stem_multiplier": 1},
  "search": {"warmup_epochs": 1, "freeze_epochs": 0, "warmup_batch": 16, "search_batch": 16},
  "train": {"epochs": 2, "batch_size": 16},
  "perf_val": 10
}"#;

fn bnas(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_bnas"))
        .args(args)
        .env("BNAS_THREADS", "2")
        .env_remove("RUST_BACKTRACE")
        .output()
        .expect("spawn bnas");
    assert!(
        out.status.success(),
        "bnas {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_owned()
}

fn report(dir: &Path) -> Vec<ReportRecord> {
    ReportRecord::parse_report(&fs::read_to_string(dir.join("report.jsonl")).unwrap()).unwrap()
}

/// Wall-clock fields are the only thing allowed to differ between runs.
fn without_timing(text: &str) -> Vec<serde_json::Value> {
    text.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            strip(&mut v);
            v
        })
        .collect()
}

fn strip(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove("wall_ms");
            m.values_mut().for_each(strip);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip),
        _ => {}
    }
}

#[test]
fn search_is_deterministic_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    bnas(&["search", "--config", &cfg, "--out", s(&a)]);
    bnas(&["search", "--config", &cfg, "--out", s(&b)]);
    for f in ["search.genotype.json", "search.dot", "supernet.bnas", "supernet.dot"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(
        without_timing(&fs::read_to_string(a.join("report.jsonl")).unwrap()),
        without_timing(&fs::read_to_string(b.join("report.jsonl")).unwrap())
    );
    for f in ["config.json", "accuracy.svg", "s_trajectories.svg"] {
        assert!(a.join(f).exists(), "{f}");
    }
}

#[test]
fn one_bit_mode_reports_exploration_bonuses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("run");
    bnas(&["search", "--config", &cfg, "--mode", "one_bit", "--out", s(&out)]);
    let recs = report(&out);
    assert!(!recs.iter().any(|r| matches!(r, ReportRecord::Warmup { .. })));
    let mut rounds = 0;
    for r in &recs {
        if let ReportRecord::Round { edges, .. } = r {
            rounds += 1;
            assert!(edges.iter().all(|e| e.ucb_bonus.is_some() && e.smaller.iter().all(|&q| q)));
        }
    }
    assert_eq!(rounds, 7);
    let text = stdout(&bnas(&["inspect", s(&out.join("report.jsonl"))]));
    assert!(text.contains("rounds: 7") && text.contains("evaluations: 105"), "{text}");
}

#[test]
fn k0_override_sets_round_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("run");
    bnas(&["search", "--config", &cfg, "--k0", "3", "--out", s(&out)]);
    let rounds: Vec<usize> = report(&out)
        .iter()
        .filter_map(|r| match r {
            ReportRecord::Round { k, .. } => Some(*k),
            _ => None,
        })
        .collect();
    assert_eq!(rounds, [3, 2]);
    let text = stdout(&bnas(&["inspect", s(&out.join("report.jsonl"))]));
    assert!(text.contains("rounds: 2"), "{text}");
    assert!(text.contains("evaluations: 9"), "{text}");
}

/// Trainable parameter count read straight off the checkpoint tensor list:
/// every stored tensor except architecture codes, BN running statistics and
/// binarized amplitude vectors.
fn params_in(ck: &Checkpoint) -> usize {
    ck.tensors
        .iter()
        .filter(|t| !t.name.starts_with("arch.") && !t.name.contains("running_") && !t.name.ends_with(".amplitude"))
        .map(|t| t.numel())
        .sum()
}

#[test]
fn train_eval_export_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let run = dir.path().join("run");
    bnas(&["search", "--config", &cfg, "--out", s(&run)]);
    let genotype = run.join("search.genotype.json");

    // Search DOT equals the library rendering of the saved genotype.
    let g = parse_genotype_json(&fs::read_to_string(&genotype).unwrap()).unwrap();
    assert_eq!(fs::read_to_string(run.join("search.dot")).unwrap(), export_dot(&g));
    let dot = dir.path().join("g.dot");
    bnas(&["export", "--genotype", s(&genotype), "--dot", "--config", &cfg, "--out", s(&dot)]);
    assert_eq!(fs::read_to_string(&dot).unwrap(), export_dot(&g));

    let mut params = Vec::new();
    for cells in ["2", "4"] {
        let tr = dir.path().join(format!("train{cells}"));
        bnas(&[
            "train", "--genotype", s(&genotype), "--config", &cfg, "--cells", cells, "--out", s(&tr),
        ]);
        let metrics: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tr.join("metrics.json")).unwrap()).unwrap();
        let model = tr.join("model.bnas");
        let bytes = fs::read(&model).unwrap();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(metrics["parameters"].as_u64().unwrap() as usize, params_in(&ck));
        assert_eq!(metrics["epochs"], 2);
        params.push(params_in(&ck));

        let text = stdout(&bnas(&["inspect", s(&model)]));
        assert!(text.contains(&format!("(file size {})", bytes.len())), "{text}");
        assert!(text.contains(&format!("total {} ", bytes.len())), "{text}");
        assert!(text.contains(&format!("parameters: {}", params_in(&ck))), "{text}");

        // The bitpacked export evaluates to the same accuracy as the full checkpoint.
        let packed = tr.join("model.packed.bnas");
        bnas(&[
            "export", "--genotype", s(&genotype), "--checkpoint", s(&model), "--format", "bitpacked", "--config", &cfg,
            "--cells", cells, "--out", s(&packed),
        ]);
        assert!(fs::metadata(&packed).unwrap().len() < bytes.len() as u64);
        let eval = |ckpt: &Path| {
            stdout(&bnas(&[
                "eval", "--genotype", s(&genotype), "--checkpoint", s(ckpt), "--config", &cfg, "--cells", cells,
            ]))
        };
        let full = eval(&model);
        let expected = metrics["test_accuracy"].as_f64().unwrap();
        assert!(full.contains(&format!("{expected:.4}")), "{full} vs {expected}");
        assert_eq!(full, eval(&packed));
    }
    assert!(params[1] > params[0], "{params:?}");
}

#[test]
fn zero_epochs_still_writes_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let run = dir.path().join("run");
    bnas(&["search", "--config", &cfg, "--k0", "2", "--out", s(&run)]);
    let tr = dir.path().join("tr");
    bnas(&[
        "train", "--genotype", s(&run.join("search.genotype.json")), "--config", &cfg, "--epochs", "0", "--out", s(&tr),
    ]);
    assert!(tr.join("model.bnas").exists());
    assert_eq!(fs::read_to_string(tr.join("train.jsonl")).unwrap().lines().count(), 0);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.txt");
    fs::write(&junk, "hello").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bnas"))
        .args(["inspect", s(&junk)])
        .env_remove("RUST_BACKTRACE")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown file type"));

    let out = Command::new(env!("CARGO_BIN_EXE_bnas"))
        .args(["search", "--out", s(&dir.path().join("x"))])
        .env_remove("RUST_BACKTRACE")
        .output()
        .unwrap();
    assert!(!out.status.success(), "search without a seed must fail");
}
