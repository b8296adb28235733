mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::seq::SliceRandom;

use common::*;
use survkit_core::pipeline::{
    assign_folds, cross_validate, emit_plots, run_on_inputs, write_artifacts, Learner, PipelineConfig, PipelineInputs,
};
use survkit_core::temporal::{generate_longitudinal, LongitudinalSpec, SnapshotSequence};
use survkit_core::SurvError;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn small_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        cohort: "cohort.csv".into(),
        seed,
        horizons: vec![6.0, 12.0],
        ..Default::default()
    };
    cfg.models.xgboost.rounds = 40;
    cfg.models.gbm.rounds = 40;
    cfg.models.coxboost.rounds = 60;
    cfg.models.rsf.n_trees = 40;
    cfg.models.temporal.epochs = 20;
    cfg.shap_sample = 5;
    cfg.importance_repeats = 2;
    cfg
}

fn small_inputs(n: usize, seed: u64) -> PipelineInputs {
    let spec = LongitudinalSpec {
        base: spec(n, &[1.0, -0.8, 0.5, 0.0], false, seed),
        max_snapshots: 3,
        drift: 0.3,
        noise: 0.1,
    };
    let (cohort, _) = survkit_core::data::generate_synthetic(&spec.base).unwrap();
    let (seqs, _) = generate_longitudinal(&spec).unwrap();
    PipelineInputs {
        cohort,
        sequences: Some(seqs),
    }
}

#[test]
fn held_out_outcomes_never_reach_fold_models() {
    let cfg = small_config(3);
    let inputs = small_inputs(150, 21);
    let folds = assign_folds(&inputs.cohort.events(), cfg.cv_folds, cfg.seed).unwrap();
    let seqs = inputs.sequences.as_deref().unwrap();
    let base = cross_validate(&cfg, &inputs.cohort, Some(seqs), &folds).unwrap();

    let held: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == 0).collect();
    let mut perm = held.clone();
    perm.shuffle(&mut rng(5));
    let mut cohort = inputs.cohort.clone();
    let mut shuffled_seqs: Vec<SnapshotSequence> = seqs.to_vec();
    for (&dst, &src) in held.iter().zip(&perm) {
        let r = &inputs.cohort.records[src];
        cohort.records[dst].time = r.time;
        cohort.records[dst].event = r.event;
        let s = seqs.iter().find(|s| s.id == r.id).unwrap();
        let d = shuffled_seqs
            .iter_mut()
            .find(|s| s.id == cohort.records[dst].id)
            .unwrap();
        d.time = s.time;
        d.event = s.event;
    }
    assert_ne!(cohort.times(), inputs.cohort.times());
    let moved = cross_validate(&cfg, &cohort, Some(&shuffled_seqs), &folds).unwrap();

    assert_eq!(
        base.folds[0].preprocessing_fingerprint,
        moved.folds[0].preprocessing_fingerprint
    );
    assert_eq!(base.models.len(), 6);
    for ((l, a), (_, b)) in base.models.iter().zip(&moved.models) {
        let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
        assert_eq!(a.fingerprints[0], b.fingerprints[0], "{l:?} fold 0 model changed");
        // the shuffled subjects are training data for the other folds
        assert!(
            (1..cfg.cv_folds).any(|k| a.fingerprints[k] != b.fingerprints[k]),
            "{l:?} hash is insensitive"
        );
    }
}

#[test]
fn provenance_hash_tracks_config_content() {
    let a = small_config(1);
    assert_eq!(a.fingerprint(), a.clone().fingerprint());
    let text = serde_json::to_string_pretty(&a).unwrap();
    assert_eq!(PipelineConfig::from_json(&text).unwrap().fingerprint(), a.fingerprint());
    let changed = [
        PipelineConfig {
            alpha: 0.1,
            ..a.clone()
        },
        PipelineConfig { seed: 2, ..a.clone() },
        PipelineConfig {
            horizons: vec![6.0, 18.0],
            ..a.clone()
        },
        PipelineConfig {
            enabled: vec![Learner::Cox],
            ..a.clone()
        },
    ];
    for c in changed {
        assert_ne!(c.fingerprint(), a.fingerprint());
    }
}

#[test]
fn report_shape_and_artifacts() {
    let cfg = small_config(9);
    let inputs = small_inputs(160, 33);
    let out = run_on_inputs(&cfg, &inputs).unwrap();
    let r = &out.report;
    assert_eq!(r.schema_version, "1.0");
    let labels: Vec<&str> = r.models.iter().map(|m| m.label.as_str()).collect();
    assert_eq!(labels, ["XGBoost", "RSF", "CoxBoost", "GBM", "Cox", "Temporal"]);
    assert_eq!(r.models.iter().filter(|m| m.model.is_tabular()).count(), 5);
    for m in &r.models {
        assert!(m.failure.is_none(), "{}: {:?}", m.label, m.failure);
        assert_eq!(m.auc.len(), 2);
        assert_eq!(m.fold_fingerprints.len(), cfg.cv_folds);
    }
    let best = r
        .models
        .iter()
        .filter(|m| m.model.is_tabular())
        .map(|m| m.c_index.unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(r.chosen().c_index, Some(best));
    assert_eq!(r.stratification.n_high + r.stratification.n_low, 160);
    assert_eq!(r.provenance.config_sha256, cfg.fingerprint());

    let dir = tempfile::tempdir().unwrap();
    let files = write_artifacts(&out, dir.path()).unwrap();
    for name in [
        "report.json",
        "performance.csv",
        "oof_predictions.csv",
        "km.svg",
        "auc.svg",
        "calibration.svg",
        "dca.svg",
    ] {
        assert!(files.iter().any(|f| f.ends_with(name)), "{name} missing");
    }
    let perf = fs::read_to_string(dir.path().join("performance.csv")).unwrap();
    assert!(perf.starts_with("model,c_index,auc_6,brier_6,auc_12,brier_12\n"));
    let km = fs::read_to_string(dir.path().join("km.svg")).unwrap();
    assert_eq!(km.matches("class=\"km-step\"").count(), 2);
    assert!(km.contains("log-rank p = "));
    let dca = fs::read_to_string(dir.path().join("dca.svg")).unwrap();
    for class in ["model", "treat-all", "treat-none"] {
        assert!(dca.contains(&format!("class=\"{class}\"")), "{class}");
    }
    let again = tempfile::tempdir().unwrap();
    emit_plots(r, again.path()).unwrap();
    assert_eq!(fs::read(again.path().join("km.svg")).unwrap(), km.into_bytes());
}

#[test]
fn learner_failure_is_isolated() {
    let cfg = small_config(4);
    let mut inputs = small_inputs(120, 44);
    inputs.sequences.as_mut().unwrap().remove(0);
    let out = run_on_inputs(&cfg, &inputs).unwrap();
    let temporal = out.report.model(Learner::Temporal).unwrap();
    assert!(temporal.failure.is_some() && temporal.c_index.is_none());
    assert!(out.report.model(Learner::Cox).unwrap().c_index.is_some());
}

#[test]
fn empty_screening_names_the_step() {
    let cfg = PipelineConfig {
        alpha: 1e-12,
        ..small_config(1)
    };
    let (cohort, _) = synthetic(100, &[0.0, 0.0], false, 8);
    let err = run_on_inputs(
        &cfg,
        &PipelineInputs {
            cohort,
            sequences: None,
        },
    )
    .unwrap_err();
    match err {
        SurvError::Pipeline { step, .. } => assert!(step.contains("screening"), "{step}"),
        other => panic!("unexpected error {other}"),
    }
}

fn survkit(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_survkit")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn cli_simulate_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let spec_path = dir.path().join("spec.json");
    fs::write(
        &spec_path,
        serde_json::to_string(&spec(80, &[1.0, -1.0], false, 3)).unwrap(),
    )
    .unwrap();
    survkit(&[
        "simulate",
        "--config",
        spec_path.to_str().unwrap(),
        "--out",
        d,
        "--quiet",
    ]);
    let cohort = fs::read_to_string(dir.path().join("cohort.csv")).unwrap();
    let truth = fs::read_to_string(dir.path().join("truth.csv")).unwrap();
    assert_eq!(cohort.lines().count(), 81);
    assert_eq!(truth.lines().count(), 81);

    let mut scores = String::from("id,time,event,risk\n");
    for (c, t) in cohort.lines().skip(1).zip(truth.lines().skip(1)) {
        let f: Vec<&str> = c.split(',').collect();
        let risk = t.split(',').nth(1).unwrap();
        scores.push_str(&format!("{},{},{},{risk}\n", f[0], f[1], f[2]));
    }
    let scores_path = dir.path().join("scores.csv");
    fs::write(&scores_path, scores).unwrap();
    survkit(&[
        "evaluate",
        "--scores",
        scores_path.to_str().unwrap(),
        "--out",
        d,
        "--quiet",
    ]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["n"], 80);
    assert!(metrics["c_index"].as_f64().unwrap() > 0.6);
}

#[test]
fn cli_extract_features_from_phantoms() {
    let dir = tempfile::tempdir().unwrap();
    let phantoms = repo_root().join("data/phantoms");
    survkit(&[
        "extract-features",
        "--voxel-dir",
        phantoms.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(dir.path().join("radiomics_features.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("id,"));
    assert!(lines[0].contains("glcm_entropy") && lines[0].contains("shape_sphericity"));
}

#[test]
fn cli_run_and_explain_on_demo() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let config = repo_root().join("data/demo.json");
    let cfg = config.to_str().unwrap();
    survkit(&["run", "--config", cfg, "--seed", "7", "--out", d, "--quiet"]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let st = &report["stratification"];
    assert!(st["log_rank"]["p_value"].as_f64().unwrap() < 0.01);
    assert!(st["median_rfs_low"].as_f64().unwrap() > st["median_rfs_high"].as_f64().unwrap());
    assert_eq!(report["provenance"]["seed"], 7);

    survkit(&["explain", "--config", cfg, "--model", "cox", "--out", d, "--quiet"]);
    let explain: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("explain.json")).unwrap()).unwrap();
    assert!(!explain["kept"].as_array().unwrap().is_empty());
    assert!(dir.path().join("shap.csv").exists());

    let status = Command::new(env!("CARGO_BIN_EXE_survkit"))
        .args(["run", "--quiet"])
        .output()
        .unwrap()
        .status;
    assert!(!status.success());
}
