//! Boosting on the negative Cox partial log-likelihood.
//!
//! Three modes share one loop:
//! - `componentwise`: each round adds the single-feature least-squares line
//!   that best fits the negative gradient;
//! - `gbm`: a depth-limited regression tree fit to the negative gradient with
//!   mean leaf values;
//! - `xgboost`: a Newton tree using the diagonal of the Hessian, leaf weight
//!   `-G / (H + lambda)` and gain-based splits.
//!
//! Fitting runs on a canonical ordering of the rows, so the model does not
//! depend on input order.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coxph::time_groups_desc;
use crate::data::SurvivalData;
use crate::error::{Result, SurvError};

/// Negative Breslow partial log-likelihood of the scores.
pub fn cox_loss(scores: &[f64], time: &[f64], event: &[bool]) -> Result<f64> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SurvError::Numeric("non-finite risk score".into()));
    }
    let shift = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s0 = 0.0;
    let mut loss = 0.0;
    for group in time_groups_desc(time) {
        for &i in &group {
            s0 += (scores[i] - shift).exp();
        }
        for &i in &group {
            if event[i] {
                loss -= scores[i] - shift - s0.ln();
            }
        }
    }
    Ok(loss)
}

/// Per-subject first and diagonal second derivatives of the negative
/// Breslow partial log-likelihood with respect to each score.
///
/// `g_i = -delta_i + exp(f_i) * sum_{k: delta_k, t_k <= t_i} 1/S0(t_k)` and
/// `h_i = exp(f_i) * sum 1/S0(t_k) - exp(2 f_i) * sum 1/S0(t_k)^2`, both from
/// sorted cumulative sums.
pub fn cox_gradients(scores: &[f64], time: &[f64], event: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = scores.len();
    if time.len() != n || event.len() != n {
        return Err(SurvError::Shape("scores, times and events differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SurvError::Numeric("non-finite risk score".into()));
    }
    let shift = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| (s - shift).exp()).collect();

    let mut groups = time_groups_desc(time);
    // S0 per group (descending time), then walk ascending for the cumulative sums
    let mut s0 = 0.0;
    let mut per_group = Vec::with_capacity(groups.len());
    for g in &groups {
        s0 += g.iter().map(|&i| w[i]).sum::<f64>();
        let deaths = g.iter().filter(|&&i| event[i]).count() as f64;
        per_group.push((deaths / s0, deaths / (s0 * s0)));
    }
    groups.reverse();
    per_group.reverse();
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let (mut c1, mut c2) = (0.0, 0.0);
    for (g, (r1, r2)) in groups.iter().zip(per_group) {
        c1 += r1;
        c2 += r2;
        for &i in g {
            grad[i] = w[i] * c1 - if event[i] { 1.0 } else { 0.0 };
            hess[i] = (w[i] * c1 - w[i] * w[i] * c2).max(0.0);
        }
    }
    Ok((grad, hess))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoostMode {
    Componentwise,
    Gbm,
    Xgboost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub tree_depth: usize,
    pub min_leaf: usize,
    pub l2_lambda: f64,
    pub mode: BoostMode,
    pub seed: u64,
    /// Fraction of rows drawn (without replacement) for each tree; 1.0 = all.
    pub subsample: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            rounds: 200,
            learning_rate: 0.1,
            tree_depth: 3,
            min_leaf: 5,
            l2_lambda: 1.0,
            mode: BoostMode::Xgboost,
            seed: 0,
            subsample: 1.0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(SurvError::Parameter("learning_rate must lie in (0, 1]".into()));
        }
        if self.tree_depth < 1 {
            return Err(SurvError::Parameter("tree_depth must be at least 1".into()));
        }
        if self.l2_lambda < 0.0 {
            return Err(SurvError::Parameter("l2_lambda must be nonnegative".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(SurvError::Parameter("subsample must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Binary regression tree; `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[feature] <= threshold { left } else { right },
                TreeNode::Leaf { value } => return value,
            }
        }
    }

    pub fn is_stump_leaf(&self) -> bool {
        self.nodes.len() == 1
    }

    fn scale(&mut self, factor: f64) {
        for node in &mut self.nodes {
            if let TreeNode::Leaf { value } = node {
                *value *= factor;
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], k: usize) -> usize {
            match nodes[k] {
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Target statistics for tree growth: each row contributes `a` to the
/// numerator and `b` to the denominator; a leaf predicts `A / (B + lambda)`
/// and a node scores `A^2 / (B + lambda)`.
pub(crate) struct TreeTargets<'a> {
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub lambda: f64,
}

impl TreeTargets<'_> {
    fn leaf_value(&self, a: f64, b: f64) -> f64 {
        let den = b + self.lambda;
        if den > 0.0 {
            a / den
        } else {
            0.0
        }
    }

    fn score(&self, a: f64, b: f64) -> Option<f64> {
        let den = b + self.lambda;
        (den > 0.0).then(|| a * a / den)
    }
}

const MIN_GAIN: f64 = 1e-12;

pub(crate) fn grow_tree(
    x: &nalgebra::DMatrix<f64>,
    rows: &[usize],
    targets: &TreeTargets<'_>,
    max_depth: usize,
    min_leaf: usize,
) -> RegressionTree {
    let mut nodes = Vec::new();
    grow_node(x, rows.to_vec(), targets, max_depth, min_leaf.max(1), 0, &mut nodes);
    RegressionTree { nodes }
}

fn grow_node(
    x: &nalgebra::DMatrix<f64>,
    rows: Vec<usize>,
    t: &TreeTargets<'_>,
    max_depth: usize,
    min_leaf: usize,
    depth: usize,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let id = nodes.len();
    let a_tot: f64 = rows.iter().map(|&i| t.a[i]).sum();
    let b_tot: f64 = rows.iter().map(|&i| t.b[i]).sum();
    nodes.push(TreeNode::Leaf {
        value: t.leaf_value(a_tot, b_tot),
    });
    if depth >= max_depth || rows.len() < 2 * min_leaf {
        return id;
    }
    let Some(parent) = t.score(a_tot, b_tot) else {
        return id;
    };

    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted = rows.clone();
    for j in 0..x.ncols() {
        sorted.sort_by(|&p, &q| x[(p, j)].total_cmp(&x[(q, j)]).then(p.cmp(&q)));
        let (mut a_left, mut b_left) = (0.0, 0.0);
        for k in 0..sorted.len() - 1 {
            let i = sorted[k];
            a_left += t.a[i];
            b_left += t.b[i];
            let (v, next) = (x[(i, j)], x[(sorted[k + 1], j)]);
            if v == next || k + 1 < min_leaf || sorted.len() - k - 1 < min_leaf {
                continue;
            }
            let (Some(sl), Some(sr)) = (t.score(a_left, b_left), t.score(a_tot - a_left, b_tot - b_left)) else {
                continue;
            };
            let gain = sl + sr - parent;
            if gain > MIN_GAIN && best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, j, 0.5 * (v + next)));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return id;
    };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        rows.into_iter().partition(|&i| x[(i, feature)] <= threshold);
    let left = grow_node(x, left_rows, t, max_depth, min_leaf, depth + 1, nodes);
    let right = grow_node(x, right_rows, t, max_depth, min_leaf, depth + 1, nodes);
    nodes[id] = TreeNode::Split {
        feature,
        threshold,
        left,
        right,
    };
    id
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseLearner {
    Linear { feature: usize, slope: f64, intercept: f64 },
    Tree(RegressionTree),
}

impl BaseLearner {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            BaseLearner::Linear {
                feature,
                slope,
                intercept,
            } => intercept + slope * x[*feature],
            BaseLearner::Tree(tree) => tree.predict(x),
        }
    }

    fn scale(&mut self, factor: f64) {
        match self {
            BaseLearner::Linear { slope, intercept, .. } => {
                *slope *= factor;
                *intercept *= factor;
            }
            BaseLearner::Tree(tree) => tree.scale(factor),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub mode: BoostMode,
    pub learning_rate: f64,
    pub n_features: usize,
    pub learners: Vec<BaseLearner>,
    pub initial_loss: f64,
    /// Training negative partial log-likelihood after each accepted round.
    pub training_loss_trace: Vec<f64>,
    /// Why training ended before `rounds`, if it did.
    pub early_stop: Option<String>,
}

impl BoostedModel {
    /// Sum of scaled learner outputs.
    pub fn predict_risk(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(SurvError::Shape(format!(
                "expected {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(self.raw_predict(x))
    }

    /// Risk score of every row.
    pub fn predict_all(&self, data: &SurvivalData) -> Result<Vec<f64>> {
        (0..data.n()).map(|i| self.predict_risk(&data.row(i))).collect()
    }

    pub(crate) fn raw_predict(&self, x: &[f64]) -> f64 {
        let mut f = 0.0;
        for l in &self.learners {
            f += self.learning_rate * l.predict(x);
        }
        f
    }

    /// Per-feature sum of linear slopes (componentwise mode).
    pub fn cumulative_slopes(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features];
        for l in &self.learners {
            if let BaseLearner::Linear { feature, slope, .. } = l {
                out[*feature] += self.learning_rate * slope;
            }
        }
        out
    }

    /// Features referenced by any learner.
    pub fn used_features(&self) -> Vec<usize> {
        let mut used = vec![false; self.n_features];
        for l in &self.learners {
            match l {
                BaseLearner::Linear { feature, .. } => used[*feature] = true,
                BaseLearner::Tree(t) => {
                    for node in &t.nodes {
                        if let TreeNode::Split { feature, .. } = node {
                            used[*feature] = true;
                        }
                    }
                }
            }
        }
        (0..self.n_features).filter(|&j| used[j]).collect()
    }
}

fn fit_linear_component(x: &nalgebra::DMatrix<f64>, residual: &[f64]) -> Option<BaseLearner> {
    let n = residual.len() as f64;
    let r_mean = residual.iter().sum::<f64>() / n;
    let mut best: Option<(f64, BaseLearner)> = None;
    for j in 0..x.ncols() {
        let col = x.column(j);
        let x_mean = col.iter().sum::<f64>() / n;
        let (mut sxx, mut sxr) = (0.0, 0.0);
        for (xi, ri) in col.iter().zip(residual) {
            sxx += (xi - x_mean) * (xi - x_mean);
            sxr += (xi - x_mean) * (ri - r_mean);
        }
        if sxx <= 0.0 {
            continue;
        }
        let slope = sxr / sxx;
        // reduction in squared residual relative to the mean-only fit
        let reduction = slope * sxr;
        if reduction > MIN_GAIN && best.as_ref().is_none_or(|(r, _)| reduction > *r) {
            best = Some((
                reduction,
                BaseLearner::Linear {
                    feature: j,
                    slope,
                    intercept: r_mean - slope * x_mean,
                },
            ));
        }
    }
    best.map(|(_, l)| l)
}

const MAX_HALVINGS: usize = 30;

/// Fits a boosted Cox model.
pub fn fit_boosted(data: &SurvivalData, params: &BoostParams) -> Result<BoostedModel> {
    params.validate()?;
    if data.n_events() == 0 {
        return Err(SurvError::Training {
            message: "boosting needs at least one event".into(),
            trace: Vec::new(),
        });
    }
    let data = data.subset(&data.canonical_order());
    let n = data.n();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| data.row(i)).collect();
    let mut scores = vec![0.0; n];
    let initial_loss = cox_loss(&scores, &data.time, &data.event)?;
    let mut loss = initial_loss;
    let mut model = BoostedModel {
        mode: params.mode,
        learning_rate: params.learning_rate,
        n_features: data.n_features(),
        learners: Vec::new(),
        initial_loss,
        training_loss_trace: Vec::new(),
        early_stop: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let all_rows: Vec<usize> = (0..n).collect();

    for round in 0..params.rounds {
        let (g, h) = cox_gradients(&scores, &data.time, &data.event)?;
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let tree_rows = if params.subsample < 1.0 {
            let k = ((n as f64 * params.subsample).round() as usize).clamp(1, n);
            let mut r = sample(&mut rng, n, k).into_vec();
            r.sort_unstable();
            r
        } else {
            all_rows.clone()
        };
        let learner = match params.mode {
            BoostMode::Componentwise => fit_linear_component(&data.x, &neg_g),
            BoostMode::Gbm => {
                let ones = vec![1.0; n];
                let targets = TreeTargets {
                    a: &neg_g,
                    b: &ones,
                    lambda: 0.0,
                };
                let tree = grow_tree(&data.x, &tree_rows, &targets, params.tree_depth, params.min_leaf);
                (!tree.is_stump_leaf()).then_some(BaseLearner::Tree(tree))
            }
            BoostMode::Xgboost => {
                let targets = TreeTargets {
                    a: &neg_g,
                    b: &h,
                    lambda: params.l2_lambda,
                };
                let tree = grow_tree(&data.x, &tree_rows, &targets, params.tree_depth, params.min_leaf);
                (!tree.is_stump_leaf()).then_some(BaseLearner::Tree(tree))
            }
        };
        let Some(mut learner) = learner else {
            model.early_stop = Some(format!("round {round}: no candidate improves the fit"));
            break;
        };

        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate: Vec<f64> = scores
                .iter()
                .zip(&rows)
                .map(|(f, x)| f + params.learning_rate * learner.predict(x))
                .collect();
            let cand_loss = cox_loss(&candidate, &data.time, &data.event)?;
            if cand_loss <= loss {
                accepted = Some((candidate, cand_loss));
                break;
            }
            learner.scale(0.5);
        }
        let Some((candidate, cand_loss)) = accepted else {
            model.early_stop = Some(format!("round {round}: loss did not decrease after step halving"));
            break;
        };
        scores = candidate;
        loss = cand_loss;
        model.learners.push(learner);
        model.training_loss_trace.push(loss);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_hand_case() {
        let (g, h) = cox_gradients(&[0.0, 0.0], &[1.0, 2.0], &[true, true]).unwrap();
        assert_eq!(g, vec![-0.5, 0.5]);
        // h1 = 1/2 - 1/4, h2 = (1/2 + 1) - (1/4 + 1)
        assert_eq!(h, vec![0.25, 0.25]);
    }

    #[test]
    fn gradient_rejects_non_finite() {
        assert!(cox_gradients(&[f64::INFINITY], &[1.0], &[true]).is_err());
    }

    #[test]
    fn predict_arithmetic() {
        let model = BoostedModel {
            mode: BoostMode::Componentwise,
            learning_rate: 0.1,
            n_features: 2,
            learners: vec![BaseLearner::Linear {
                feature: 0,
                slope: 2.0,
                intercept: 0.5,
            }],
            initial_loss: 0.0,
            training_loss_trace: vec![],
            early_stop: None,
        };
        let f = model.predict_risk(&[3.0, -1.0]).unwrap();
        assert!((f - (0.6 + 0.05)).abs() < 1e-15);
        assert!(model.predict_risk(&[3.0]).is_err());
    }

    #[test]
    fn zero_rounds_predicts_zero() {
        let data = SurvivalData::from_rows(
            &[vec![1.0], vec![2.0], vec![3.0]],
            vec![1.0, 2.0, 3.0],
            vec![true, true, false],
        )
        .unwrap();
        let m = fit_boosted(
            &data,
            &BoostParams {
                rounds: 0,
                ..BoostParams::default()
            },
        )
        .unwrap();
        assert_eq!(m.predict_risk(&[5.0]).unwrap(), 0.0);
    }

    #[test]
    fn no_events_is_a_training_error() {
        let data = SurvivalData::from_rows(&[vec![1.0], vec![2.0]], vec![1.0, 2.0], vec![false, false]).unwrap();
        assert!(matches!(
            fit_boosted(&data, &BoostParams::default()),
            Err(SurvError::Training { .. })
        ));
    }

    #[test]
    fn newton_leaf_is_hessian_weighted_mean_when_lambda_zero() {
        let g = [0.3, -0.7, 0.2];
        let h = [0.5, 0.25, 0.1];
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let x = nalgebra::DMatrix::from_element(3, 1, 1.0);
        let tree = grow_tree(
            &x,
            &[0, 1, 2],
            &TreeTargets {
                a: &neg_g,
                b: &h,
                lambda: 0.0,
            },
            2,
            1,
        );
        let hand: f64 = (0..3).map(|i| h[i] * (-g[i] / h[i])).sum::<f64>() / h.iter().sum::<f64>();
        assert!((tree.predict(&[1.0]) - hand).abs() < 1e-15);
    }

    #[test]
    fn params_validated() {
        let bad = BoostParams {
            learning_rate: 0.0,
            ..BoostParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
