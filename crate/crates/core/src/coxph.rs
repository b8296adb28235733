//! Cox proportional hazards: partial likelihood with analytic derivatives,
//! Newton–Raphson fitting, Wald screening and VIF collinearity filtering.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, SurvivalData};
use crate::error::{Result, SurvError};
use crate::nonparametric::StepFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ties {
    Breslow,
    #[default]
    Efron,
}

#[derive(Debug, Clone)]
pub struct CoxLikelihood {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Indices grouped by equal time, groups ordered by decreasing time.
pub(crate) fn time_groups_desc(time: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..time.len()).collect();
    order.sort_by(|&a, &b| time[b].total_cmp(&time[a]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if time[g[0]] == time[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Partial log-likelihood, gradient and Hessian at `beta`.
///
/// Risk sets are `{j : t_j >= t_i}`. Exponentials are shifted by the maximum
/// linear predictor, so the result stays finite for `|beta'x| <= 700`.
pub fn partial_loglik(beta: &[f64], data: &SurvivalData, ties: Ties) -> Result<CoxLikelihood> {
    let d = data.n_features();
    if beta.len() != d {
        return Err(SurvError::Shape(format!(
            "beta has {} entries, data has {d} features",
            beta.len()
        )));
    }
    if beta.iter().any(|b| !b.is_finite()) || data.x.iter().any(|v| !v.is_finite()) {
        return Err(SurvError::Numeric("non-finite beta or feature value".into()));
    }
    let b = DVector::from_column_slice(beta);
    let eta: DVector<f64> = &data.x * &b;
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();

    let mut value = 0.0;
    let mut grad = DVector::<f64>::zeros(d);
    let mut hess = DMatrix::<f64>::zeros(d, d);
    let mut s0 = 0.0;
    let mut s1 = DVector::<f64>::zeros(d);
    let mut s2 = DMatrix::<f64>::zeros(d, d);

    for group in time_groups_desc(&data.time) {
        for &i in &group {
            let xi = data.x.row(i).transpose();
            s0 += w[i];
            s1.axpy(w[i], &xi, 1.0);
            s2.ger(w[i], &xi, &xi, 1.0);
        }
        let deaths: Vec<usize> = group.iter().copied().filter(|&i| data.event[i]).collect();
        if deaths.is_empty() {
            continue;
        }
        let nd = deaths.len() as f64;
        let mut d0 = 0.0;
        let mut d1 = DVector::<f64>::zeros(d);
        let mut d2 = DMatrix::<f64>::zeros(d, d);
        for &i in &deaths {
            let xi = data.x.row(i).transpose();
            value += eta[i] - shift;
            grad += &xi;
            if ties == Ties::Efron {
                d0 += w[i];
                d1.axpy(w[i], &xi, 1.0);
                d2.ger(w[i], &xi, &xi, 1.0);
            }
        }
        for l in 0..deaths.len() {
            let frac = if ties == Ties::Efron { l as f64 / nd } else { 0.0 };
            let den = s0 - frac * d0;
            let a = (&s1 - &d1 * frac) / den;
            value -= den.ln();
            grad -= &a;
            hess -= (&s2 - &d2 * frac) / den - &a * a.transpose();
        }
    }
    if !value.is_finite() {
        return Err(SurvError::Numeric("partial likelihood overflowed".into()));
    }
    Ok(CoxLikelihood {
        value,
        gradient: grad,
        hessian: hess,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoxOptions {
    pub ties: Ties,
    pub max_iter: usize,
    pub tol: f64,
    pub ridge: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            ties: Ties::Efron,
            max_iter: 100,
            tol: 1e-9,
            ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub coefficients: Vec<f64>,
    /// Inverse of the (ridge-augmented) observed information at the estimate.
    pub covariance: Vec<Vec<f64>>,
    pub baseline_chf: StepFunction,
    pub converged: bool,
    pub iterations: usize,
    pub final_loglik: f64,
}

impl CoxModel {
    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coefficients.len() {
            return Err(SurvError::Shape(format!(
                "expected {} features, got {}",
                self.coefficients.len(),
                x.len()
            )));
        }
        Ok(self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum())
    }

    pub fn survival(&self, x: &[f64], t: f64) -> Result<f64> {
        let lp = self.linear_predictor(x)?;
        Ok((-self.baseline_chf.eval(t) * lp.exp()).exp())
    }

    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.coefficients.len())
            .map(|j| self.covariance[j][j].sqrt())
            .collect()
    }
}

/// Breslow estimate of the baseline cumulative hazard for arbitrary risk
/// scores `f`: `H0(t) = sum_{t_k <= t} d_k / sum_{j: t_j >= t_k} exp(f_j)`.
pub fn breslow_baseline(scores: &[f64], time: &[f64], event: &[bool]) -> Result<StepFunction> {
    if scores.len() != time.len() || time.len() != event.len() {
        return Err(SurvError::Shape("scores, times and events differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SurvError::Numeric("non-finite risk score".into()));
    }
    let shift = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s0 = 0.0;
    let mut increments = Vec::new();
    for group in time_groups_desc(time) {
        for &i in &group {
            s0 += (scores[i] - shift).exp();
        }
        let deaths = group.iter().filter(|&&i| event[i]).count();
        if deaths > 0 {
            increments.push((time[group[0]], deaths as f64 / s0));
        }
    }
    increments.reverse();
    let scale = (-shift).exp();
    let mut h = 0.0;
    let (knots, values): (Vec<f64>, Vec<f64>) = increments
        .into_iter()
        .map(|(t, inc)| {
            h += inc * scale;
            (t, h)
        })
        .unzip();
    StepFunction::new(knots, values, 0.0)
}

const DIVERGENCE_BOUND: f64 = 50.0;
const MAX_HALVINGS: usize = 40;

/// Newton–Raphson from zero with step halving on the (ridge-penalized)
/// partial log-likelihood.
pub fn fit_cox(data: &SurvivalData, options: &CoxOptions) -> Result<CoxModel> {
    let d = data.n_features();
    let n_events = data.n_events();
    if n_events == 0 {
        return Err(SurvError::Undefined("Cox fit needs at least one event".into()));
    }
    if d >= n_events && options.ridge <= 0.0 {
        return Err(SurvError::Parameter(format!(
            "{d} features with {n_events} events: add a ridge penalty"
        )));
    }
    let ridge = options.ridge.max(0.0);
    let penalized = |beta: &[f64]| -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let lik = partial_loglik(beta, data, options.ties)?;
        let b = DVector::from_column_slice(beta);
        let value = lik.value - 0.5 * ridge * b.norm_squared();
        let grad = lik.gradient - &b * ridge;
        let info = -lik.hessian + DMatrix::identity(d, d) * ridge;
        Ok((value, grad, info))
    };

    let mut beta = vec![0.0; d];
    let (mut value, mut grad, mut info) = penalized(&beta)?;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        iterations += 1;
        let Some(chol) = info.clone().cholesky() else {
            // information vanishing along the path means the likelihood keeps
            // rising towards a boundary (separation)
            if iterations > 1 {
                return Err(SurvError::NonConvergence { iterations, last: beta });
            }
            return Err(SurvError::Conditioning(
                "information matrix is not positive definite".into(),
            ));
        };
        let step = chol.solve(&grad);
        let step_max = step.amax();
        if !step_max.is_finite() {
            return Err(SurvError::Conditioning("Newton step is not finite".into()));
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            if cand.iter().any(|b| b.abs() > DIVERGENCE_BOUND) {
                return Err(SurvError::NonConvergence { iterations, last: cand });
            }
            let next = penalized(&cand)?;
            if next.0 >= value - 1e-12 * value.abs().max(1.0) {
                accepted = Some((cand, next));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, next)) = accepted else {
            // no ascent along the Newton direction: already at the optimum
            converged = step_max < options.tol.sqrt();
            break;
        };
        beta = cand;
        (value, grad, info) = next;
        if step_max < options.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SurvError::NonConvergence { iterations, last: beta });
    }
    let covariance = info
        .clone()
        .cholesky()
        .ok_or_else(|| SurvError::Conditioning("information matrix is singular".into()))?
        .inverse();
    let scores: Vec<f64> = (0..data.n())
        .map(|i| (0..d).map(|j| beta[j] * data.x[(i, j)]).sum())
        .collect();
    let baseline_chf = breslow_baseline(&scores, &data.time, &data.event)?;
    let final_loglik = partial_loglik(&beta, data, options.ties)?.value;
    Ok(CoxModel {
        coefficients: beta,
        covariance: (0..d).map(|i| (0..d).map(|j| covariance[(i, j)]).collect()).collect(),
        baseline_chf,
        converged,
        iterations,
        final_loglik,
    })
}

/// Standard normal upper tail probability.
pub(crate) fn normal_sf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

const Z_975: f64 = 1.959_963_984_540_054;

/// One row of the univariate screen. Hazard ratios are per original unit
/// when the cohort carries normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenRow {
    pub feature: String,
    pub hazard_ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub coefficient: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    /// Sorted by ascending p-value.
    pub rows: Vec<ScreenRow>,
    pub retained: Vec<String>,
    /// Features whose single-covariate fit failed, with the reason.
    pub failed: Vec<(String, String)>,
}

impl ScreenResult {
    /// CSV with columns feature, HR, CI low, CI high, p.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("feature,hr,ci_low,ci_high,p_value\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6e}\n",
                r.feature, r.hazard_ratio, r.ci_low, r.ci_high, r.p_value
            ));
        }
        s
    }
}

/// Single-feature Cox fits with Wald p-values; features with `p < alpha`
/// are retained (reported in cohort column order).
pub fn univariate_screen(cohort: &Cohort, alpha: f64, options: &CoxOptions) -> Result<ScreenResult> {
    let data = cohort.data();
    if data.n_events() == 0 {
        return Err(SurvError::Undefined("screening needs at least one event".into()));
    }
    let fits: Vec<(usize, Result<CoxModel>)> = (0..cohort.n_features())
        .into_par_iter()
        .map(|j| (j, fit_cox(&data.select_columns(&[j]), options)))
        .collect();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (j, fit) in fits {
        let name = &cohort.feature_names[j];
        match fit {
            Ok(m) => {
                let mut beta = m.coefficients[0];
                let mut se = m.covariance[0][0].sqrt();
                let p = 2.0 * normal_sf((beta / se).abs());
                if let Some(s) = cohort.normalization.as_ref().and_then(|n| n.stats_for(name)) {
                    beta /= s.sd;
                    se /= s.sd;
                }
                rows.push(ScreenRow {
                    feature: name.clone(),
                    hazard_ratio: beta.exp(),
                    ci_low: (beta - Z_975 * se).exp(),
                    ci_high: (beta + Z_975 * se).exp(),
                    p_value: p,
                    coefficient: beta,
                    std_error: se,
                });
            }
            Err(e) => failed.push((name.clone(), e.to_string())),
        }
    }
    let retained = cohort
        .feature_names
        .iter()
        .filter(|n| rows.iter().any(|r| &r.feature == *n && r.p_value < alpha))
        .cloned()
        .collect();
    rows.sort_by(|a, b| a.p_value.total_cmp(&b.p_value));
    Ok(ScreenResult { rows, retained, failed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifRemoval {
    pub feature: String,
    pub vif: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifResult {
    pub kept: Vec<String>,
    /// In removal order.
    pub removed: Vec<VifRemoval>,
}

/// Variance inflation factor of every column of `x` (+inf under exact
/// collinearity or zero variance).
pub fn variance_inflation(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, k) = x.shape();
    (0..k)
        .map(|j| {
            let y = x.column(j).into_owned();
            let mean = y.mean();
            let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
            if tss == 0.0 {
                return f64::INFINITY;
            }
            let mut design = DMatrix::<f64>::from_element(n, k, 1.0);
            let mut c = 1;
            for other in 0..k {
                if other != j {
                    design.set_column(c, &x.column(other));
                    c += 1;
                }
            }
            let svd = design.clone().svd(true, true);
            let coef = match svd.solve(&y, 1e-12) {
                Ok(c) => c,
                Err(_) => return f64::INFINITY,
            };
            let rss = (&y - &design * coef).norm_squared();
            let unexplained = rss / tss;
            if unexplained < 1e-10 {
                f64::INFINITY
            } else {
                1.0 / unexplained
            }
        })
        .collect()
}

/// Repeatedly drops the feature with the largest VIF (earliest column on
/// ties) until every remaining VIF is at most `threshold`.
pub fn vif_filter(cohort: &Cohort, retained: &[String], threshold: f64) -> Result<VifResult> {
    let mut kept: Vec<String> = retained.to_vec();
    let mut cols: Vec<usize> = kept
        .iter()
        .map(|n| {
            cohort
                .feature_index(n)
                .ok_or_else(|| SurvError::Schema(format!("unknown feature \"{n}\"")))
        })
        .collect::<Result<_>>()?;
    let data = cohort.data();
    let mut removed = Vec::new();
    while cols.len() >= 2 {
        let vifs = variance_inflation(&data.x.select_columns(&cols));
        let mut worst = 0;
        for (i, &v) in vifs.iter().enumerate() {
            if v > vifs[worst] {
                worst = i;
            }
        }
        if vifs[worst] <= threshold {
            break;
        }
        removed.push(VifRemoval {
            feature: kept.remove(worst),
            vif: vifs[worst],
        });
        cols.remove(worst);
    }
    Ok(VifResult { kept, removed })
}
