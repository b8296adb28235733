//! End-to-end workflow: ingest, normalize, screen, VIF filter, cross-validated
//! training of every learner, pooled out-of-fold evaluation, model choice,
//! median risk stratification and explanation of the chosen model.
//!
//! Normalization, screening and VIF filtering are refit inside every fold so
//! that held-out outcomes never reach a trained model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use crate::boosting::{fit_boosted, BoostMode, BoostParams, BoostedModel};
use crate::coxph::{
    breslow_baseline, fit_cox, univariate_screen, vif_filter, CoxModel, CoxOptions, ScreenResult, VifRemoval,
};
use crate::data::{load_cohort, zscore_normalize, Cohort, CohortSchema, SurvivalData};
use crate::error::{Result, SurvError};
use crate::explain::{
    mean_abs_shap, median_background, permutation_importance, rank_descending, ImportanceReport, MAX_EXACT_FEATURES,
};
use crate::metrics::{
    auc_curve, auc_summary, brier, c_index, calibration_table, censoring_survival, dca_curve, horizon_outcomes,
    AucPoint, CalibrationTable, DcaPoint,
};
use crate::model::RiskModel;
use crate::nonparametric::{kaplan_meier, log_rank, median_survival, LogRankResult, StepFunction};
use crate::plots;
use crate::radiomics::{extract_features, load_grid, load_mask, DEFAULT_LEVELS};
use crate::rsf::{fit_rsf, Forest, ForestParams};
use crate::temporal::{read_longitudinal, train_temporal, SnapshotSequence, TemporalModel, TemporalOptions};

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Learner {
    Xgboost,
    Rsf,
    Coxboost,
    Gbm,
    Cox,
    Temporal,
}

impl Learner {
    /// Report order; earlier entries win C-index ties.
    pub const ALL: [Learner; 6] = [
        Learner::Xgboost,
        Learner::Rsf,
        Learner::Coxboost,
        Learner::Gbm,
        Learner::Cox,
        Learner::Temporal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Learner::Xgboost => "XGBoost",
            Learner::Rsf => "RSF",
            Learner::Coxboost => "CoxBoost",
            Learner::Gbm => "GBM",
            Learner::Cox => "Cox",
            Learner::Temporal => "Temporal",
        }
    }

    /// Learners trained on the tabular feature matrix.
    pub fn is_tabular(self) -> bool {
        self != Learner::Temporal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub xgboost: BoostParams,
    pub coxboost: BoostParams,
    pub gbm: BoostParams,
    pub rsf: ForestParams,
    pub cox: CoxOptions,
    pub temporal: TemporalOptions,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            xgboost: BoostParams {
                mode: BoostMode::Xgboost,
                ..BoostParams::default()
            },
            coxboost: BoostParams {
                mode: BoostMode::Componentwise,
                ..BoostParams::default()
            },
            gbm: BoostParams {
                mode: BoostMode::Gbm,
                ..BoostParams::default()
            },
            rsf: ForestParams::default(),
            cox: CoxOptions::default(),
            temporal: TemporalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Paths are relative to the directory holding the config file.
    pub cohort: PathBuf,
    pub schema: Option<CohortSchema>,
    pub longitudinal: Option<PathBuf>,
    pub voxel_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub alpha: f64,
    pub vif_threshold: f64,
    pub cv_folds: usize,
    pub horizons: Vec<f64>,
    pub seed: u64,
    pub models: ModelParams,
    pub enabled: Vec<Learner>,
    pub dca_thresholds: Vec<f64>,
    pub calibration_bins: usize,
    pub shap_sample: usize,
    pub importance_repeats: usize,
    pub radiomics_levels: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cohort: PathBuf::new(),
            schema: None,
            longitudinal: None,
            voxel_dir: None,
            output_dir: PathBuf::from("out"),
            alpha: 0.05,
            vif_threshold: 5.0,
            cv_folds: 5,
            horizons: vec![12.0, 24.0],
            seed: 0,
            models: ModelParams::default(),
            enabled: Learner::ALL.to_vec(),
            dca_thresholds: (1..=10).map(|k| k as f64 * 0.05).collect(),
            calibration_bins: 10,
            shap_sample: 20,
            importance_repeats: 10,
            radiomics_levels: DEFAULT_LEVELS,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SurvError::Parameter(m.to_string()));
        if self.cohort.as_os_str().is_empty() {
            return bad("config needs a cohort path");
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2");
        }
        if self.horizons.is_empty()
            || self.horizons.iter().any(|h| !(*h > 0.0 && h.is_finite()))
            || self.horizons.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("horizons must be positive and strictly ascending");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.vif_threshold >= 1.0) {
            return bad("vif_threshold must be at least 1");
        }
        if self.dca_thresholds.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return bad("dca thresholds must lie in (0, 1)");
        }
        if self.calibration_bins < 2 {
            return bad("calibration_bins must be at least 2");
        }
        if self.importance_repeats < 1 {
            return bad("importance_repeats must be at least 1");
        }
        if !self.enabled.iter().any(|l| l.is_tabular()) {
            return bad("at least one tabular learner must be enabled");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    fn is_enabled(&self, l: Learner) -> bool {
        self.enabled.contains(&l)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn fingerprint_of<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("model serializes"))
}

fn step_err(step: &str, e: impl std::fmt::Display) -> SurvError {
    SurvError::Pipeline {
        step: step.to_string(),
        message: e.to_string(),
    }
}

/// Event-stratified fold labels: events and censored subjects are shuffled
/// separately and dealt round-robin.
pub fn assign_folds(events: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > events.len() {
        return Err(SurvError::Parameter(format!(
            "cannot split {} subjects into {k} folds",
            events.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ev: Vec<usize> = (0..events.len()).filter(|&i| events[i]).collect();
    let mut cens: Vec<usize> = (0..events.len()).filter(|&i| !events[i]).collect();
    ev.shuffle(&mut rng);
    cens.shuffle(&mut rng);
    let mut folds = vec![0; events.len()];
    for (p, i) in ev.into_iter().chain(cens).enumerate() {
        folds[i] = p % k;
    }
    Ok(folds)
}

/// Radiomic features per subject from `<id>_image.txt` / `<id>_mask.txt`
/// pairs, sorted by id.
pub fn extract_voxel_dir(dir: &Path, levels: usize) -> Result<Vec<(String, BTreeMap<String, f64>)>> {
    let mut ids: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix("_image.txt"))
                .map(str::to_string)
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(SurvError::Schema(format!("no *_image.txt files in {}", dir.display())));
    }
    ids.into_iter()
        .map(|id| {
            let grid = load_grid(&dir.join(format!("{id}_image.txt")))?;
            let mask = load_mask(&dir.join(format!("{id}_mask.txt")))?;
            Ok((id, extract_features(&grid, &mask, levels)?))
        })
        .collect()
}

pub fn features_to_csv(rows: &[(String, BTreeMap<String, f64>)]) -> String {
    let names: Vec<&String> = rows.first().map(|r| r.1.keys().collect()).unwrap_or_default();
    let mut out = String::from("id");
    for n in &names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (id, f) in rows {
        out.push_str(id);
        for n in &names {
            out.push_str(&format!(",{}", f[*n]));
        }
        out.push('\n');
    }
    out
}

/// Appends radiomic features to the cohort by subject id.
pub fn join_radiomics(cohort: &Cohort, rows: &[(String, BTreeMap<String, f64>)]) -> Result<Cohort> {
    let by_id: HashMap<&str, &BTreeMap<String, f64>> = rows.iter().map(|(i, f)| (i.as_str(), f)).collect();
    let names: Vec<String> = rows.first().map(|r| r.1.keys().cloned().collect()).unwrap_or_default();
    let mut feature_names = cohort.feature_names.clone();
    for n in &names {
        if feature_names.contains(n) {
            return Err(step_err("radiomics", format!("feature {n} already in cohort")));
        }
        feature_names.push(n.clone());
    }
    let records = cohort
        .records
        .iter()
        .map(|r| {
            let f = by_id
                .get(r.id.as_str())
                .ok_or_else(|| step_err("radiomics", format!("no voxel data for subject {}", r.id)))?;
            let mut rec = r.clone();
            rec.features.extend(names.iter().map(|n| f[n]));
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(feature_names, records)
}

#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub cohort: Cohort,
    pub sequences: Option<Vec<SnapshotSequence>>,
}

pub fn load_inputs(cfg: &PipelineConfig, base_dir: &Path) -> Result<PipelineInputs> {
    let mut cohort = load_cohort(base_dir.join(&cfg.cohort), cfg.schema.as_ref())?;
    if let Some(dir) = &cfg.voxel_dir {
        let rows = extract_voxel_dir(&base_dir.join(dir), cfg.radiomics_levels)?;
        cohort = join_radiomics(&cohort, &rows)?;
    }
    let sequences = match &cfg.longitudinal {
        Some(p) => Some(read_longitudinal(fs::File::open(base_dir.join(p))?)?.1),
        None => None,
    };
    Ok(PipelineInputs { cohort, sequences })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub kept: Vec<String>,
    pub vif_removed: Vec<VifRemoval>,
    /// Hash of the fitted normalization and selection.
    pub preprocessing_fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct OofPredictions {
    pub risk: Vec<f64>,
    /// `survival[h][i]` = predicted `S(horizon_h | x_i)`.
    pub survival: Vec<Vec<f64>>,
    /// Hash of each fold's fitted model.
    pub fingerprints: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub folds: Vec<FoldSummary>,
    pub models: Vec<(Learner, std::result::Result<OofPredictions, String>)>,
}

struct FoldData {
    summary: FoldSummary,
    train: SurvivalData,
    test: SurvivalData,
}

/// Normalization, screening and VIF filtering fitted on the training rows.
fn prepare_fold(
    cfg: &PipelineConfig,
    cohort: &Cohort,
    fold: usize,
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<FoldData> {
    let train_raw = cohort.subset(train_idx)?;
    let train = zscore_normalize(&train_raw).map_err(|e| step_err(&format!("normalization (fold {fold})"), e))?;
    let norm = train
        .normalization
        .clone()
        .expect("normalized cohort carries statistics");
    let test = norm.apply(&cohort.subset(test_idx)?)?;
    let screen = univariate_screen(&train, cfg.alpha, &cfg.models.cox)
        .map_err(|e| step_err(&format!("screening (fold {fold})"), e))?;
    if screen.retained.is_empty() {
        return Err(step_err(
            &format!("screening (fold {fold})"),
            format!("no feature reached p < {}", cfg.alpha),
        ));
    }
    let vif = vif_filter(&train, &screen.retained, cfg.vif_threshold)
        .map_err(|e| step_err(&format!("vif (fold {fold})"), e))?;
    let fp = fingerprint_of(&(&norm, &vif));
    Ok(FoldData {
        summary: FoldSummary {
            fold,
            n_train: train_idx.len(),
            n_test: test_idx.len(),
            kept: vif.kept.clone(),
            vif_removed: vif.removed,
            preprocessing_fingerprint: fp,
        },
        train: train.select_features(&vif.kept)?.data(),
        test: test.select_features(&vif.kept)?.data(),
    })
}

fn boost_params(cfg: &PipelineConfig, learner: Learner, seed: u64) -> BoostParams {
    let (base, mode) = match learner {
        Learner::Xgboost => (&cfg.models.xgboost, BoostMode::Xgboost),
        Learner::Coxboost => (&cfg.models.coxboost, BoostMode::Componentwise),
        _ => (&cfg.models.gbm, BoostMode::Gbm),
    };
    BoostParams {
        mode,
        seed,
        ..base.clone()
    }
}

fn forest_params(cfg: &PipelineConfig, d: usize, seed: u64) -> ForestParams {
    ForestParams {
        mtry: cfg.models.rsf.mtry.map(|m| m.clamp(1, d)),
        seed,
        ..cfg.models.rsf.clone()
    }
}

/// A boosted model with its Breslow baseline, giving survival curves.
#[derive(Debug, Clone, Serialize)]
struct BoostedSurvival {
    model: BoostedModel,
    baseline: StepFunction,
}

impl RiskModel for BoostedSurvival {
    fn n_features(&self) -> usize {
        self.model.n_features
    }

    fn risk(&self, x: &[f64]) -> Result<f64> {
        self.model.predict_risk(x)
    }

    fn survival_at(&self, x: &[f64], t: f64) -> Option<f64> {
        let f = self.model.predict_risk(x).ok()?;
        Some((-self.baseline.eval(t) * f.exp()).exp())
    }
}

fn rows(data: &SurvivalData) -> Vec<Vec<f64>> {
    (0..data.n()).map(|i| data.row(i)).collect()
}

/// Fits a tabular learner; the returned fingerprint hashes the fitted model.
fn fit_tabular(
    cfg: &PipelineConfig,
    learner: Learner,
    train: &SurvivalData,
    seed: u64,
) -> Result<(Box<dyn RiskModel>, String)> {
    Ok(match learner {
        Learner::Cox => {
            let m: CoxModel = fit_cox(train, &cfg.models.cox)?;
            let fp = fingerprint_of(&m);
            (Box::new(m), fp)
        }
        Learner::Rsf => {
            let m: Forest = fit_rsf(train, &forest_params(cfg, train.n_features(), seed))?;
            let fp = fingerprint_of(&m);
            (Box::new(m), fp)
        }
        Learner::Xgboost | Learner::Coxboost | Learner::Gbm => {
            let model = fit_boosted(train, &boost_params(cfg, learner, seed))?;
            let scores = model.predict_all(train)?;
            let baseline = breslow_baseline(&scores, &train.time, &train.event)?;
            let m = BoostedSurvival { model, baseline };
            let fp = fingerprint_of(&m);
            (Box::new(m), fp)
        }
        Learner::Temporal => unreachable!("temporal learner is not tabular"),
    })
}

fn predict_tabular(model: &dyn RiskModel, test: &SurvivalData, horizons: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let xs = rows(test);
    let risk = xs.iter().map(|x| model.risk(x)).collect::<Result<Vec<_>>>()?;
    let survival = horizons
        .iter()
        .map(|&h| {
            xs.iter()
                .map(|x| {
                    model
                        .survival_at(x, h)
                        .ok_or_else(|| SurvError::Undefined("model has no survival curve".into()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((risk, survival))
}

/// Z-scores snapshot features with statistics of the training sequences.
fn normalize_sequences(train: &[SnapshotSequence], all: &[&SnapshotSequence]) -> Vec<SnapshotSequence> {
    let p = train[0].snapshots[0].features.len();
    let flat: Vec<&Vec<f64>> = train
        .iter()
        .flat_map(|s| s.snapshots.iter().map(|x| &x.features))
        .collect();
    let n = flat.len() as f64;
    let stats: Vec<(f64, f64)> = (0..p)
        .map(|j| {
            let mean = flat.iter().map(|f| f[j]).sum::<f64>() / n;
            let var = flat.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
        })
        .collect();
    all.iter()
        .map(|s| {
            let mut s = (*s).clone();
            for snap in &mut s.snapshots {
                for (v, (m, sd)) in snap.features.iter_mut().zip(&stats) {
                    *v = (*v - m) / sd;
                }
            }
            s
        })
        .collect()
}

fn fit_predict_temporal(
    cfg: &PipelineConfig,
    seqs: &[&SnapshotSequence],
    train_idx: &[usize],
    test_idx: &[usize],
    seed: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, String)> {
    let raw_train: Vec<SnapshotSequence> = train_idx.iter().map(|&i| seqs[i].clone()).collect();
    let train = normalize_sequences(&raw_train, &train_idx.iter().map(|&i| seqs[i]).collect::<Vec<_>>());
    let test = normalize_sequences(&raw_train, &test_idx.iter().map(|&i| seqs[i]).collect::<Vec<_>>());
    let p = train[0].snapshots[0].features.len();
    let opts = TemporalOptions {
        seed,
        pe_dim: cfg.models.temporal.pe_dim.max(p + p % 2),
        ..cfg.models.temporal.clone()
    };
    let model: TemporalModel = train_temporal(&train, &opts)?;
    let train_scores = train
        .iter()
        .map(|s| model.temporal_risk(s))
        .collect::<Result<Vec<_>>>()?;
    let time: Vec<f64> = train.iter().map(|s| s.time).collect();
    let event: Vec<bool> = train.iter().map(|s| s.event).collect();
    let baseline = breslow_baseline(&train_scores, &time, &event)?;
    let risk = test
        .iter()
        .map(|s| model.temporal_risk(s))
        .collect::<Result<Vec<_>>>()?;
    let survival = cfg
        .horizons
        .iter()
        .map(|&h| risk.iter().map(|f| (-baseline.eval(h) * f.exp()).exp()).collect())
        .collect();
    Ok((risk, survival, fingerprint_of(&(&model, &baseline))))
}

type FoldPredictions = std::result::Result<(Vec<f64>, Vec<Vec<f64>>, String), String>;

/// Cross-validated out-of-fold predictions of every enabled learner for
/// the given fold labels.
pub fn cross_validate(
    cfg: &PipelineConfig,
    cohort: &Cohort,
    sequences: Option<&[SnapshotSequence]>,
    folds: &[usize],
) -> Result<CvOutcome> {
    let n = cohort.len();
    if folds.len() != n {
        return Err(SurvError::Shape("one fold label per subject required".into()));
    }
    let k = folds.iter().max().map_or(0, |m| m + 1);
    let learners: Vec<Learner> = Learner::ALL
        .into_iter()
        .filter(|&l| cfg.is_enabled(l) && (l.is_tabular() || sequences.is_some()))
        .collect();
    let aligned: Option<std::result::Result<Vec<&SnapshotSequence>, String>> = sequences.map(|seqs| {
        let by_id: HashMap<&str, &SnapshotSequence> = seqs.iter().map(|s| (s.id.as_str(), s)).collect();
        cohort
            .records
            .iter()
            .map(|r| {
                by_id
                    .get(r.id.as_str())
                    .copied()
                    .ok_or_else(|| format!("no longitudinal data for subject {}", r.id))
            })
            .collect()
    });

    let per_fold: Vec<(FoldSummary, Vec<usize>, Vec<FoldPredictions>)> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let train_idx: Vec<usize> = (0..n).filter(|&i| folds[i] != fold).collect();
            let test_idx: Vec<usize> = (0..n).filter(|&i| folds[i] == fold).collect();
            if test_idx.is_empty() {
                return Err(step_err("cross-validation", format!("fold {fold} is empty")));
            }
            let data = prepare_fold(cfg, cohort, fold, &train_idx, &test_idx)?;
            let seed = cfg.seed.wrapping_add(fold as u64);
            let preds = learners
                .iter()
                .map(|&l| {
                    let r = if l.is_tabular() {
                        fit_tabular(cfg, l, &data.train, seed).and_then(|(m, fp)| {
                            let (risk, surv) = predict_tabular(m.as_ref(), &data.test, &cfg.horizons)?;
                            Ok((risk, surv, fp))
                        })
                    } else {
                        match aligned.as_ref().expect("sequences present") {
                            Ok(seqs) => fit_predict_temporal(cfg, seqs, &train_idx, &test_idx, seed),
                            Err(m) => Err(SurvError::Schema(m.clone())),
                        }
                    };
                    r.map_err(|e| format!("fold {fold}: {e}"))
                })
                .collect();
            Ok((data.summary, test_idx, preds))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summaries = Vec::with_capacity(k);
    let mut outcomes: Vec<std::result::Result<OofPredictions, String>> = learners
        .iter()
        .map(|_| {
            Ok(OofPredictions {
                risk: vec![f64::NAN; n],
                survival: vec![vec![f64::NAN; n]; cfg.horizons.len()],
                fingerprints: Vec::with_capacity(k),
            })
        })
        .collect();
    for (summary, test_idx, preds) in per_fold {
        summaries.push(summary);
        for (slot, pred) in outcomes.iter_mut().zip(preds) {
            let Ok(acc) = slot else { continue };
            match pred {
                Ok((risk, surv, fp)) => {
                    for (pos, &i) in test_idx.iter().enumerate() {
                        acc.risk[i] = risk[pos];
                        for (h, s) in surv.iter().enumerate() {
                            acc.survival[h][i] = s[pos];
                        }
                    }
                    acc.fingerprints.push(fp);
                }
                Err(msg) => *slot = Err(msg),
            }
        }
    }
    Ok(CvOutcome {
        folds: summaries,
        models: learners.into_iter().zip(outcomes).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonValue {
    pub horizon: f64,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcaCurve {
    pub horizon: f64,
    pub points: Vec<DcaPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: Learner,
    pub label: String,
    /// Reason the learner failed, if it did.
    pub failure: Option<String>,
    pub c_index: Option<f64>,
    pub auc: Vec<HorizonValue>,
    pub brier: Vec<HorizonValue>,
    pub auc_curve: Vec<AucPoint>,
    pub calibration: Vec<CalibrationTable>,
    pub dca: Vec<DcaCurve>,
    pub fold_fingerprints: Vec<String>,
    /// Metrics that were undefined on the pooled predictions.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    pub cutoff: f64,
    pub high: Vec<String>,
    pub low: Vec<String>,
}

/// Median split: scores above the median are high risk, the rest low risk.
pub fn stratify_by_median(scores: &[f64], ids: &[String]) -> Result<Stratification> {
    if scores.len() != ids.len() {
        return Err(SurvError::Shape("one id per score required".into()));
    }
    if scores.len() < 2 {
        return Err(SurvError::Parameter("stratification needs at least 2 subjects".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SurvError::Numeric("non-finite risk score".into()));
    }
    if scores.iter().all(|&s| s == scores[0]) {
        return Err(SurvError::DegenerateStratification);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() / 2;
    let cutoff = if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        0.5 * (sorted[m - 1] + sorted[m])
    };
    let (mut high, mut low) = (Vec::new(), Vec::new());
    for (s, id) in scores.iter().zip(ids) {
        if *s > cutoff {
            high.push(id.clone());
        } else {
            low.push(id.clone());
        }
    }
    Ok(Stratification { cutoff, high, low })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratificationReport {
    pub model: Learner,
    pub cutoff: f64,
    pub n_high: usize,
    pub n_low: usize,
    pub median_rfs_high: Option<f64>,
    pub median_rfs_low: Option<f64>,
    pub log_rank: LogRankResult,
    pub km_high: StepFunction,
    pub km_low: StepFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapRow {
    pub feature: String,
    pub mean_abs_shap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    /// Screen on the full cohort.
    pub screen: ScreenResult,
    pub vif_removed: Vec<VifRemoval>,
    pub kept: Vec<String>,
    pub folds: Vec<FoldSummary>,
    pub importance: Option<ImportanceReport>,
    /// Descending mean absolute Shapley value.
    pub shap: Option<Vec<ShapRow>>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub n_subjects: usize,
    pub n_events: usize,
    pub n_input_features: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: String,
    pub provenance: Provenance,
    pub horizons: Vec<f64>,
    pub models: Vec<ModelReport>,
    pub chosen_model: Learner,
    pub stratification: StratificationReport,
    pub features: FeatureReport,
}

impl EvaluationReport {
    pub fn model(&self, l: Learner) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == l)
    }

    pub fn chosen(&self) -> &ModelReport {
        self.model(self.chosen_model).expect("chosen model is reported")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Out-of-fold predictions aligned with the cohort.
#[derive(Debug, Clone)]
pub struct OofTable {
    pub ids: Vec<String>,
    pub time: Vec<f64>,
    pub event: Vec<bool>,
    pub fold: Vec<usize>,
    pub risk: Vec<(Learner, Vec<f64>)>,
}

impl OofTable {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("id,time,event,fold");
        for (l, _) in &self.risk {
            out.push_str(&format!(",{}_risk", l.label().to_lowercase()));
        }
        out.push('\n');
        for i in 0..self.ids.len() {
            out.push_str(&format!(
                "{},{},{},{}",
                self.ids[i],
                self.time[i],
                u8::from(self.event[i]),
                self.fold[i]
            ));
            for (_, r) in &self.risk {
                out.push_str(&format!(",{}", r[i]));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: EvaluationReport,
    pub oof: OofTable,
}

/// Pooled metric suite for one learner's out-of-fold predictions.
fn evaluate_predictions(
    cfg: &PipelineConfig,
    learner: Learner,
    time: &[f64],
    event: &[bool],
    pred: &OofPredictions,
    g: &StepFunction,
) -> ModelReport {
    let mut notes = Vec::new();
    let c = match c_index(time, event, &pred.risk) {
        Ok(c) => Some(c.c_index),
        Err(e) => {
            notes.push(format!("c_index: {e}"));
            None
        }
    };
    let (points, _) = auc_curve(time, event, &pred.risk, g).unwrap_or_default();
    let auc = cfg
        .horizons
        .iter()
        .map(|&h| HorizonValue {
            horizon: h,
            value: auc_summary(&points, h),
        })
        .collect();
    let mut brier_v = Vec::new();
    let mut calibration = Vec::new();
    let mut dca = Vec::new();
    for (hi, &h) in cfg.horizons.iter().enumerate() {
        let surv = &pred.survival[hi];
        let value = match brier(h, surv, time, event, g) {
            Ok(b) => Some(b),
            Err(e) => {
                notes.push(format!("brier@{h}: {e}"));
                None
            }
        };
        brier_v.push(HorizonValue { horizon: h, value });
        let risk: Vec<f64> = surv.iter().map(|s| 1.0 - s).collect();
        match calibration_table(&risk, time, event, h, cfg.calibration_bins) {
            Ok(t) => calibration.push(t),
            Err(e) => notes.push(format!("calibration@{h}: {e}")),
        }
        match dca_curve(&horizon_outcomes(time, event, h), &risk, &cfg.dca_thresholds) {
            Ok(points) => dca.push(DcaCurve { horizon: h, points }),
            Err(e) => notes.push(format!("dca@{h}: {e}")),
        }
    }
    ModelReport {
        model: learner,
        label: learner.label().to_string(),
        failure: None,
        c_index: c,
        auc,
        brier: brier_v,
        auc_curve: points,
        calibration,
        dca,
        fold_fingerprints: pred.fingerprints.clone(),
        notes,
    }
}

fn failed_report(learner: Learner, message: String) -> ModelReport {
    ModelReport {
        model: learner,
        label: learner.label().to_string(),
        failure: Some(message),
        c_index: None,
        auc: Vec::new(),
        brier: Vec::new(),
        auc_curve: Vec::new(),
        calibration: Vec::new(),
        dca: Vec::new(),
        fold_fingerprints: Vec::new(),
        notes: Vec::new(),
    }
}

/// Refits the chosen learner on the whole cohort and explains it.
pub fn explain_learner(
    cfg: &PipelineConfig,
    cohort: &Cohort,
    chosen: Learner,
    folds: Vec<FoldSummary>,
) -> Result<FeatureReport> {
    let norm = zscore_normalize(cohort).map_err(|e| step_err("normalization", e))?;
    let screen = univariate_screen(&norm, cfg.alpha, &cfg.models.cox).map_err(|e| step_err("screening", e))?;
    if screen.retained.is_empty() {
        return Err(step_err("screening", format!("no feature reached p < {}", cfg.alpha)));
    }
    let vif = vif_filter(&norm, &screen.retained, cfg.vif_threshold).map_err(|e| step_err("vif", e))?;
    let data = norm.select_features(&vif.kept)?.data();
    let mut notes = Vec::new();
    let (importance, shap) = match fit_tabular(cfg, chosen, &data, cfg.seed) {
        Ok((model, _)) => {
            let importance =
                match permutation_importance(model.as_ref(), &data, &vif.kept, cfg.importance_repeats, cfg.seed) {
                    Ok(r) => Some(r),
                    Err(e) => {
                        notes.push(format!("permutation importance: {e}"));
                        None
                    }
                };
            let shap = if vif.kept.len() > MAX_EXACT_FEATURES {
                notes.push(format!(
                    "exact Shapley skipped: {} features exceed {MAX_EXACT_FEATURES}",
                    vif.kept.len()
                ));
                None
            } else {
                let mut idx: Vec<usize> = (0..data.n()).collect();
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
                idx.truncate(cfg.shap_sample.max(1));
                idx.sort_unstable();
                let sample: Vec<Vec<f64>> = idx.iter().map(|&i| data.row(i)).collect();
                match mean_abs_shap(model.as_ref(), &sample, &median_background(&data)) {
                    Ok(v) => Some(
                        rank_descending(&v)
                            .into_iter()
                            .map(|j| ShapRow {
                                feature: vif.kept[j].clone(),
                                mean_abs_shap: v[j],
                            })
                            .collect(),
                    ),
                    Err(e) => {
                        notes.push(format!("shapley: {e}"));
                        None
                    }
                }
            };
            (importance, shap)
        }
        Err(e) => {
            notes.push(format!("refit of {} failed: {e}", chosen.label()));
            (None, None)
        }
    };
    Ok(FeatureReport {
        screen,
        vif_removed: vif.removed,
        kept: vif.kept,
        folds,
        importance,
        shap,
        notes,
    })
}

/// Runs every step on already-loaded inputs.
pub fn run_on_inputs(cfg: &PipelineConfig, inputs: &PipelineInputs) -> Result<PipelineOutput> {
    cfg.validate()?;
    let cohort = &inputs.cohort;
    let time = cohort.times();
    let event = cohort.events();
    let ids = cohort.ids();
    let folds = assign_folds(&event, cfg.cv_folds, cfg.seed)?;
    let cv = cross_validate(cfg, cohort, inputs.sequences.as_deref(), &folds)?;
    let g = censoring_survival(&time, &event)?;

    let mut models = Vec::new();
    let mut oof_risk = Vec::new();
    for (l, outcome) in &cv.models {
        match outcome {
            Ok(pred) => {
                models.push(evaluate_predictions(cfg, *l, &time, &event, pred, &g));
                oof_risk.push((*l, pred.risk.clone()));
            }
            Err(msg) => models.push(failed_report(*l, msg.clone())),
        }
    }

    let mut chosen: Option<(Learner, f64)> = None;
    for m in models.iter().filter(|m| m.model.is_tabular()) {
        if let Some(c) = m.c_index {
            if chosen.is_none_or(|(_, best)| c > best) {
                chosen = Some((m.model, c));
            }
        }
    }
    let (chosen, _) = chosen.ok_or_else(|| step_err("model selection", "every learner failed"))?;

    let scores = &oof_risk
        .iter()
        .find(|(l, _)| *l == chosen)
        .expect("chosen has predictions")
        .1;
    let strat = stratify_by_median(scores, &ids).map_err(|e| step_err("stratification", e))?;
    let (mut hi, mut lo) = ((Vec::new(), Vec::new()), (Vec::new(), Vec::new()));
    for (i, s) in scores.iter().enumerate() {
        let g = if *s > strat.cutoff { &mut hi } else { &mut lo };
        g.0.push(time[i]);
        g.1.push(event[i]);
    }
    let km_high = kaplan_meier(&hi.0, &hi.1)?;
    let km_low = kaplan_meier(&lo.0, &lo.1)?;
    let lr = log_rank((&hi.0, &hi.1), (&lo.0, &lo.1)).map_err(|e| step_err("log-rank", e))?;
    let stratification = StratificationReport {
        model: chosen,
        cutoff: strat.cutoff,
        n_high: strat.high.len(),
        n_low: strat.low.len(),
        median_rfs_high: median_survival(&km_high),
        median_rfs_low: median_survival(&km_low),
        log_rank: lr,
        km_high,
        km_low,
    };

    let features = explain_learner(cfg, cohort, chosen, cv.folds)?;
    let report = EvaluationReport {
        schema_version: SCHEMA_VERSION.to_string(),
        provenance: Provenance {
            config_sha256: cfg.fingerprint(),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            n_subjects: cohort.len(),
            n_events: event.iter().filter(|&&e| e).count(),
            n_input_features: cohort.n_features(),
        },
        horizons: cfg.horizons.clone(),
        models,
        chosen_model: chosen,
        stratification,
        features,
    };
    Ok(PipelineOutput {
        report,
        oof: OofTable {
            ids,
            time,
            event,
            fold: folds,
            risk: oof_risk,
        },
    })
}

/// Loads the inputs named by the config (relative to `base_dir`) and runs.
pub fn run_pipeline(cfg: &PipelineConfig, base_dir: &Path) -> Result<PipelineOutput> {
    cfg.validate()?;
    let inputs = load_inputs(cfg, base_dir)?;
    run_on_inputs(cfg, &inputs)
}

/// Writes the four SVG plots for the chosen model.
pub fn emit_plots(report: &EvaluationReport, outdir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir)?;
    let st = &report.stratification;
    let chosen = report.chosen();
    let mut files = Vec::new();
    let mut write = |name: &str, body: String| -> Result<()> {
        let p = outdir.join(name);
        fs::write(&p, body)?;
        files.push(p);
        Ok(())
    };
    write(
        "km.svg",
        plots::km_svg(
            &[("high risk", &st.km_high), ("low risk", &st.km_low)],
            st.log_rank.p_value,
        ),
    )?;
    let curves: Vec<(&str, Vec<(f64, f64)>)> = report
        .models
        .iter()
        .filter(|m| m.failure.is_none())
        .map(|m| (m.label.as_str(), m.auc_curve.iter().map(|p| (p.t, p.auc)).collect()))
        .collect();
    write("auc.svg", plots::auc_svg(&curves))?;
    if let Some(t) = chosen.calibration.first() {
        write("calibration.svg", plots::calibration_svg(&chosen.label, t))?;
    }
    if let Some(d) = chosen.dca.first() {
        write("dca.svg", plots::dca_svg(&chosen.label, d.horizon, &d.points))?;
    }
    Ok(files)
}

/// Writes report.json, CSV tables and SVG plots into `outdir`.
pub fn write_artifacts(output: &PipelineOutput, outdir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir)?;
    let r = &output.report;
    let mut files = Vec::new();
    let mut write = |name: &str, body: String| -> Result<()> {
        let p = outdir.join(name);
        fs::write(&p, body)?;
        files.push(p);
        Ok(())
    };
    write("report.json", r.to_json())?;
    write("screen.csv", r.features.screen.to_csv_string())?;
    if let Some(imp) = &r.features.importance {
        write("importance.csv", imp.to_csv_string())?;
    }
    if let Some(shap) = &r.features.shap {
        let mut s = String::from("feature,mean_abs_shap\n");
        for row in shap {
            s.push_str(&format!("{},{:.6}\n", row.feature, row.mean_abs_shap));
        }
        write("shap.csv", s)?;
    }
    write("oof_predictions.csv", output.oof.to_csv_string())?;

    let mut perf = String::from("model,c_index");
    for h in &r.horizons {
        perf.push_str(&format!(",auc_{h},brier_{h}"));
    }
    perf.push('\n');
    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.4}"));
    let mut auc = String::from("model,t,auc,n_cases,n_controls\n");
    let mut dca = String::from("model,horizon,threshold,net_benefit,treat_all,treat_none\n");
    let mut cal = String::from("model,horizon,bin,mean_predicted,observed,count\n");
    for m in r.models.iter().filter(|m| m.failure.is_none()) {
        perf.push_str(&format!("{},{}", m.label, fmt(m.c_index)));
        for (a, b) in m.auc.iter().zip(&m.brier) {
            perf.push_str(&format!(",{},{}", fmt(a.value), fmt(b.value)));
        }
        perf.push('\n');
        for p in &m.auc_curve {
            auc.push_str(&format!(
                "{},{},{},{},{}\n",
                m.label, p.t, p.auc, p.n_cases, p.n_controls
            ));
        }
        for c in &m.dca {
            for p in &c.points {
                dca.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    m.label, c.horizon, p.threshold, p.net_benefit, p.treat_all_benefit, p.treat_none_benefit
                ));
            }
        }
        for t in &m.calibration {
            for (b, bin) in t.bins.iter().enumerate() {
                cal.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    m.label, t.t, b, bin.mean_predicted, bin.observed, bin.count
                ));
            }
        }
    }
    write("performance.csv", perf)?;
    write("auc_curves.csv", auc)?;
    write("dca.csv", dca)?;
    write("calibration.csv", cal)?;
    let mut km = String::from("group,time,survival\n");
    for (g, f) in [("high", &r.stratification.km_high), ("low", &r.stratification.km_low)] {
        km.push_str(&format!("{g},0,{}\n", f.initial_value()));
        for (t, v) in f.knots().iter().zip(f.values()) {
            km.push_str(&format!("{g},{t},{v}\n"));
        }
    }
    write("km_curves.csv", km)?;
    files.extend(emit_plots(r, outdir)?);
    Ok(files)
}
