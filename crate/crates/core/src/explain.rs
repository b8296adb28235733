//! Exact Shapley attributions and permutation importance for any [`RiskModel`].

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalData;
use crate::error::{Result, SurvError};
use crate::metrics::c_index;
use crate::model::RiskModel;

/// Largest feature count handled by subset enumeration.
pub const MAX_EXACT_FEATURES: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub phi: Vec<f64>,
    /// `f(background)`
    pub baseline: f64,
    /// `f(x)`
    pub value: f64,
}

impl AttributionVector {
    /// `sum(phi) - (value - baseline)`; zero up to rounding.
    pub fn efficiency_gap(&self) -> f64 {
        self.phi.iter().sum::<f64>() - (self.value - self.baseline)
    }
}

/// Shapley weight `s! (d-s-1)! / d!` for every coalition size `s < d`.
fn shapley_weights(d: usize) -> Vec<f64> {
    let mut w = vec![0.0; d];
    for (s, ws) in w.iter_mut().enumerate() {
        // product form avoids overflowing factorials
        let mut v = 1.0 / d as f64;
        for k in 1..=s {
            v *= k as f64 / (d - s - 1 + k) as f64;
        }
        *ws = v;
    }
    w
}

/// Exact Shapley values of `model` at `x` against `background` by
/// enumerating all `2^d` coalitions.
pub fn exact_shapley(model: &dyn RiskModel, x: &[f64], background: &[f64]) -> Result<AttributionVector> {
    let d = x.len();
    if background.len() != d || model.n_features() != d {
        return Err(SurvError::Shape(format!(
            "x has {d} features, background {}, model {}",
            background.len(),
            model.n_features()
        )));
    }
    if d > MAX_EXACT_FEATURES {
        return Err(SurvError::TooManyFeatures {
            d,
            max: MAX_EXACT_FEATURES,
        });
    }
    let values = (0..1usize << d)
        .into_par_iter()
        .map(|mask| {
            let z: Vec<f64> = (0..d)
                .map(|j| if mask >> j & 1 == 1 { x[j] } else { background[j] })
                .collect();
            model.risk(&z)
        })
        .collect::<Result<Vec<f64>>>()?;
    let weights = shapley_weights(d);
    let phi = (0..d)
        .map(|j| {
            let bit = 1usize << j;
            (0..1usize << d)
                .filter(|m| m & bit == 0)
                .map(|m| weights[m.count_ones() as usize] * (values[m | bit] - values[m]))
                .sum()
        })
        .collect();
    Ok(AttributionVector {
        phi,
        baseline: values[0],
        value: values[(1 << d) - 1],
    })
}

/// Feature-wise median of the rows.
pub fn median_background(data: &SurvivalData) -> Vec<f64> {
    (0..data.n_features())
        .map(|j| {
            let mut col: Vec<f64> = data.x.column(j).iter().copied().collect();
            col.sort_by(f64::total_cmp);
            let n = col.len();
            if n == 0 {
                0.0
            } else if n % 2 == 1 {
                col[n / 2]
            } else {
                0.5 * (col[n / 2 - 1] + col[n / 2])
            }
        })
        .collect()
}

/// Mean of `|phi_j|` over the sample rows, in feature order.
pub fn mean_abs_shap(model: &dyn RiskModel, sample: &[Vec<f64>], background: &[f64]) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(SurvError::Parameter("SHAP sample is empty".into()));
    }
    let mut acc = vec![0.0; background.len()];
    for x in sample {
        let a = exact_shapley(model, x, background)?;
        for (s, p) in acc.iter_mut().zip(&a.phi) {
            *s += p.abs();
        }
    }
    Ok(acc.into_iter().map(|s| s / sample.len() as f64).collect())
}

/// Indices sorted by descending value, ties by index.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub feature: String,
    pub mean_drop: f64,
    pub std_drop: f64,
    /// Repeats on which the metric was undefined.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub baseline_c_index: f64,
    /// Sorted by descending mean drop.
    pub rows: Vec<ImportanceRow>,
    pub repeats: usize,
    pub seed: u64,
}

impl ImportanceReport {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("feature,mean_drop,std_drop,skipped\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{}\n",
                r.feature, r.mean_drop, r.std_drop, r.skipped
            ));
        }
        out
    }
}

/// Drop in C-index when each column is shuffled, over seeded repeats.
pub fn permutation_importance(
    model: &dyn RiskModel,
    data: &SurvivalData,
    feature_names: &[String],
    repeats: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    if repeats == 0 {
        return Err(SurvError::Parameter("repeats must be at least 1".into()));
    }
    let d = data.n_features();
    if feature_names.len() != d || model.n_features() != d {
        return Err(SurvError::Shape(format!(
            "data has {d} features, names {}, model {}",
            feature_names.len(),
            model.n_features()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..data.n()).map(|i| data.row(i)).collect();
    let score = |rows: &[Vec<f64>]| -> Result<Vec<f64>> { rows.iter().map(|r| model.risk(r)).collect() };
    let baseline = c_index(&data.time, &data.event, &score(&rows)?)?.c_index;

    let mut out = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut drops = Vec::with_capacity(repeats);
            let mut skipped = 0;
            for r in 0..repeats {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((j * repeats + r) as u64);
                let mut col: Vec<f64> = rows.iter().map(|row| row[j]).collect();
                col.shuffle(&mut rng);
                let shuffled: Vec<Vec<f64>> = rows
                    .iter()
                    .zip(&col)
                    .map(|(row, &v)| {
                        let mut row = row.clone();
                        row[j] = v;
                        row
                    })
                    .collect();
                match c_index(&data.time, &data.event, &score(&shuffled)?) {
                    Ok(c) if c.c_index.is_finite() => drops.push(baseline - c.c_index),
                    _ => skipped += 1,
                }
            }
            let k = drops.len() as f64;
            let mean = if drops.is_empty() {
                0.0
            } else {
                drops.iter().sum::<f64>() / k
            };
            let std = if drops.len() > 1 {
                (drops.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            } else {
                0.0
            };
            Ok(ImportanceRow {
                feature: feature_names[j].clone(),
                mean_drop: mean,
                std_drop: std,
                skipped,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = out.iter().map(|r| r.mean_drop).collect();
    let order = rank_descending(&means);
    let mut slots: Vec<Option<ImportanceRow>> = out.drain(..).map(Some).collect();
    let rows = order.into_iter().map(|i| slots[i].take().unwrap()).collect();
    Ok(ImportanceReport {
        baseline_c_index: baseline,
        rows,
        repeats,
        seed,
    })
}
