//! Unified prediction interface over fitted learners.

use crate::boosting::BoostedModel;
use crate::coxph::CoxModel;
use crate::error::{Result, SurvError};
use crate::rsf::Forest;

/// A fitted model mapping a feature vector to a scalar risk score, higher
/// meaning earlier expected events.
pub trait RiskModel: Sync {
    fn n_features(&self) -> usize;

    fn risk(&self, x: &[f64]) -> Result<f64>;

    /// `S(t | x)` when the model defines one.
    fn survival_at(&self, _x: &[f64], _t: f64) -> Option<f64> {
        None
    }
}

impl RiskModel for CoxModel {
    fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    fn risk(&self, x: &[f64]) -> Result<f64> {
        self.linear_predictor(x)
    }

    fn survival_at(&self, x: &[f64], t: f64) -> Option<f64> {
        self.survival(x, t).ok()
    }
}

impl RiskModel for BoostedModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn risk(&self, x: &[f64]) -> Result<f64> {
        self.predict_risk(x)
    }
}

impl RiskModel for Forest {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn risk(&self, x: &[f64]) -> Result<f64> {
        self.risk_score(x)
    }

    fn survival_at(&self, x: &[f64], t: f64) -> Option<f64> {
        (x.len() == self.n_features).then(|| (-self.chf_at(x, t)).exp())
    }
}

/// Wraps a plain function as a model.
pub struct FnModel<F> {
    pub n_features: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnModel<F> {
    pub fn new(n_features: usize, f: F) -> Self {
        Self { n_features, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> RiskModel for FnModel<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn risk(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(SurvError::Shape(format!(
                "expected {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok((self.f)(x))
    }
}

/// Risk scores for every row of a feature matrix.
pub fn predict_rows(model: &dyn RiskModel, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows.iter().map(|r| model.risk(r)).collect()
}
