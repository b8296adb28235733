//! `survkit` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use survkit_core::data::{generate_synthetic, load_cohort, save_cohort, SyntheticSpec};
use survkit_core::metrics::{
    auc_curve, auc_summary, brier, c_index, calibration_table, censoring_survival, dca_curve, horizon_outcomes,
    AucPoint, CalibrationTable, DcaPoint,
};
use survkit_core::pipeline::{
    explain_learner, extract_voxel_dir, features_to_csv, load_inputs, run_on_inputs, write_artifacts, Learner,
    PipelineConfig,
};
use survkit_core::radiomics::DEFAULT_LEVELS;
use survkit_core::temporal::{generate_longitudinal, write_longitudinal, LongitudinalSpec};

#[derive(Parser)]
#[command(name = "survkit", version, about = "Multi-modal survival analysis toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Radiomic features from `<id>_image.txt` / `<id>_mask.txt` pairs.
    ExtractFeatures {
        #[arg(long)]
        voxel_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LEVELS)]
        levels: usize,
    },
    /// Synthetic cohort (and longitudinal snapshots) from a generator spec.
    Simulate,
    /// Full cross-validated pipeline.
    Run,
    /// Metrics for an external score file with columns id,time,event,risk
    /// and optional survival_<horizon> columns.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "12,24")]
        horizons: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Shapley and permutation importance for one learner refit on all data.
    Explain {
        #[arg(long, value_enum, default_value = "xgboost")]
        model: LearnerArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum LearnerArg {
    Xgboost,
    Rsf,
    Coxboost,
    Gbm,
    Cox,
}

impl From<LearnerArg> for Learner {
    fn from(l: LearnerArg) -> Self {
        match l {
            LearnerArg::Xgboost => Learner::Xgboost,
            LearnerArg::Rsf => Learner::Rsf,
            LearnerArg::Coxboost => Learner::Coxboost,
            LearnerArg::Gbm => Learner::Gbm,
            LearnerArg::Cox => Learner::Cox,
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let g = &cli.global;
    match &cli.command {
        Command::ExtractFeatures { voxel_dir, levels } => extract(g, voxel_dir, *levels),
        Command::Simulate => simulate(g),
        Command::Run => run(g),
        Command::Evaluate { scores, horizons, bins } => evaluate(g, scores, horizons, *bins),
        Command::Explain { model } => explain(g, (*model).into()),
    }
}

fn progress(g: &GlobalArgs, msg: &str) {
    if !g.quiet {
        eprintln!("{msg}");
    }
}

fn require_config(g: &GlobalArgs) -> Result<&Path> {
    g.config.as_deref().context("--config is required for this command")
}

fn out_dir(g: &GlobalArgs, fallback: &Path) -> Result<PathBuf> {
    let dir = g.out.clone().unwrap_or_else(|| fallback.to_path_buf());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_pipeline_config(g: &GlobalArgs) -> Result<(PipelineConfig, PathBuf)> {
    let path = require_config(g)?;
    let mut cfg = PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn extract(g: &GlobalArgs, voxel_dir: &Path, levels: usize) -> Result<()> {
    let rows = extract_voxel_dir(voxel_dir, levels)?;
    let dir = out_dir(g, Path::new("."))?;
    let path = dir.join("radiomics_features.csv");
    fs::write(&path, features_to_csv(&rows))?;
    progress(g, &format!("{} subjects -> {}", rows.len(), path.display()));
    Ok(())
}

fn simulate(g: &GlobalArgs) -> Result<()> {
    let path = require_config(g)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let dir = out_dir(g, Path::new("."))?;
    let (cohort, eta) = if value.get("max_snapshots").is_some() {
        let mut spec: LongitudinalSpec = serde_json::from_value(value)?;
        if let Some(seed) = g.seed {
            spec.base.seed = seed;
        }
        let (seqs, _) = generate_longitudinal(&spec)?;
        let names = spec.base.names();
        write_longitudinal(&names, &seqs, fs::File::create(dir.join("longitudinal.csv"))?)?;
        generate_synthetic(&spec.base)?
    } else {
        let mut spec: SyntheticSpec = serde_json::from_value(value)?;
        if let Some(seed) = g.seed {
            spec.seed = seed;
        }
        generate_synthetic(&spec)?
    };
    save_cohort(&cohort, dir.join("cohort.csv"))?;
    let mut truth = String::from("id,true_risk\n");
    for (r, e) in cohort.records.iter().zip(&eta) {
        truth.push_str(&format!("{},{e}\n", r.id));
    }
    fs::write(dir.join("truth.csv"), truth)?;
    let events = cohort.events().iter().filter(|&&e| e).count();
    progress(
        g,
        &format!(
            "{} subjects, {} events ({:.1}% censored) -> {}",
            cohort.len(),
            events,
            100.0 * (1.0 - events as f64 / cohort.len() as f64),
            dir.display()
        ),
    );
    Ok(())
}

fn run(g: &GlobalArgs) -> Result<()> {
    let (cfg, base) = load_pipeline_config(g)?;
    let inputs = load_inputs(&cfg, &base)?;
    progress(
        g,
        &format!(
            "cohort: {} subjects, {} features; {}-fold cross-validation",
            inputs.cohort.len(),
            inputs.cohort.n_features(),
            cfg.cv_folds
        ),
    );
    let output = run_on_inputs(&cfg, &inputs)?;
    let dir = out_dir(g, &base.join(&cfg.output_dir))?;
    let files = write_artifacts(&output, &dir)?;
    let r = &output.report;
    for m in &r.models {
        match (&m.failure, m.c_index) {
            (Some(f), _) => progress(g, &format!("{:>9}  failed: {f}", m.label)),
            (None, c) => {
                let auc: Vec<String> = m
                    .auc
                    .iter()
                    .map(|a| {
                        format!(
                            "AUC@{}={}",
                            a.horizon,
                            a.value.map_or("NA".into(), |v| format!("{v:.3}"))
                        )
                    })
                    .collect();
                progress(
                    g,
                    &format!(
                        "{:>9}  C={}  {}",
                        m.label,
                        c.map_or("NA".into(), |v| format!("{v:.3}")),
                        auc.join("  ")
                    ),
                );
            }
        }
    }
    let st = &r.stratification;
    progress(
        g,
        &format!(
            "chosen: {}; high/low = {}/{}, log-rank p = {:.3e}; {} files in {}",
            r.chosen_model.label(),
            st.n_high,
            st.n_low,
            st.log_rank.p_value,
            files.len(),
            dir.display()
        ),
    );
    Ok(())
}

fn explain(g: &GlobalArgs, learner: Learner) -> Result<()> {
    let (cfg, base) = load_pipeline_config(g)?;
    let inputs = load_inputs(&cfg, &base)?;
    let report = explain_learner(&cfg, &inputs.cohort, learner, Vec::new())?;
    let dir = out_dir(g, &base.join(&cfg.output_dir))?;
    fs::write(dir.join("explain.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    if let Some(imp) = &report.importance {
        fs::write(dir.join("importance.csv"), imp.to_csv_string())?;
    }
    if let Some(shap) = &report.shap {
        let mut s = String::from("feature,mean_abs_shap\n");
        for row in shap {
            s.push_str(&format!("{},{:.6}\n", row.feature, row.mean_abs_shap));
            progress(g, &format!("{:<32} {:.3}", row.feature, row.mean_abs_shap));
        }
        fs::write(dir.join("shap.csv"), s)?;
    }
    for note in &report.notes {
        progress(g, note);
    }
    Ok(())
}

#[derive(Serialize)]
struct HorizonMetrics {
    horizon: f64,
    auc: Option<f64>,
    brier: Option<f64>,
    calibration: Option<CalibrationTable>,
    dca: Option<Vec<DcaPoint>>,
}

#[derive(Serialize)]
struct EvaluateReport {
    n: usize,
    c_index: f64,
    auc_curve: Vec<AucPoint>,
    horizons: Vec<HorizonMetrics>,
}

fn evaluate(g: &GlobalArgs, scores: &Path, horizons: &[f64], bins: usize) -> Result<()> {
    let cohort = load_cohort(scores, None).with_context(|| format!("reading {}", scores.display()))?;
    let col = |name: &str| cohort.feature_index(name).map(|j| cohort.column(j));
    let Some(risk) = col("risk") else {
        bail!("score file needs a 'risk' column");
    };
    let time = cohort.times();
    let event = cohort.events();
    let c = c_index(&time, &event, &risk)?;
    let gs = censoring_survival(&time, &event)?;
    let (points, _) = auc_curve(&time, &event, &risk, &gs)?;
    let per_h = horizons
        .iter()
        .map(|&h| {
            let surv = col(&format!("survival_{h}"));
            let predicted: Option<Vec<f64>> = surv.as_ref().map(|s| s.iter().map(|v| 1.0 - v).collect());
            HorizonMetrics {
                horizon: h,
                auc: auc_summary(&points, h),
                brier: surv.as_ref().and_then(|s| brier(h, s, &time, &event, &gs).ok()),
                calibration: predicted
                    .as_ref()
                    .and_then(|p| calibration_table(p, &time, &event, h, bins).ok()),
                dca: predicted.as_ref().and_then(|p| {
                    let thresholds: Vec<f64> = (1..=10).map(|k| k as f64 * 0.05).collect();
                    dca_curve(&horizon_outcomes(&time, &event, h), p, &thresholds).ok()
                }),
            }
        })
        .collect();
    let report = EvaluateReport {
        n: cohort.len(),
        c_index: c.c_index,
        auc_curve: points,
        horizons: per_h,
    };
    let dir = out_dir(g, Path::new("."))?;
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    progress(g, &format!("C-index {:.4} over {} subjects", c.c_index, cohort.len()));
    Ok(())
}
