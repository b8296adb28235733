//! Random survival forest: bootstrap trees grown with log-rank splits,
//! Nelson–Aalen terminal estimates and ensemble-averaged cumulative hazards.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalData;
use crate::error::{Result, SurvError};
use crate::metrics::{c_index, ConcordanceResult};
use crate::nonparametric::{nelson_aalen, StepFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub mtry: Option<usize>,
    /// Minimum number of events in each child of a split.
    pub min_node_events: usize,
    /// `None` grows until no valid split remains.
    pub max_depth: Option<usize>,
    pub seed: u64,
    /// Draw a bootstrap sample per tree; when off every tree sees all rows.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: None,
            min_node_events: 3,
            max_depth: None,
            seed: 0,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    fn resolved_mtry(&self, d: usize) -> Result<usize> {
        let m = self.mtry.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize);
        if m < 1 || m > d {
            return Err(SurvError::Parameter(format!("mtry {m} outside [1, {d}]")));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForestNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Terminal {
        chf: StepFunction,
        n_subjects: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTree {
    pub nodes: Vec<ForestNode>,
    /// Row indices drawn for this tree (with multiplicity).
    pub bootstrap_indices: Vec<usize>,
    /// Rows never drawn.
    pub oob_indices: Vec<usize>,
}

impl SurvivalTree {
    pub fn terminal_chf(&self, x: &[f64]) -> &StepFunction {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                ForestNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[*feature] <= *threshold { *left } else { *right },
                ForestNode::Terminal { chf, .. } => return chf,
            }
        }
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match &self.nodes[0] {
            ForestNode::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            ForestNode::Terminal { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<SurvivalTree>,
    pub n_features: usize,
    /// Largest training event time; risk scores evaluate the CHF here.
    pub horizon: f64,
    pub params: ForestParams,
}

/// Fenwick tree over f64 sums.
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0.0; n + 1] }
    }

    fn add(&mut self, i: usize, v: f64) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `0..=i`.
    fn prefix(&self, i: usize) -> f64 {
        let mut i = i + 1;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Node-level quantities shared by every candidate split of the node.
struct NodeRiskTable {
    /// Time rank of each node member (parallel to the member list).
    rank: Vec<usize>,
    /// Nelson–Aalen at each rank.
    cum_hazard: Vec<f64>,
    /// Prefix sums of `c(t)/Y(t)` and `c(t)/Y(t)^2`, where
    /// `c = d (Y - d) / (Y - 1)`.
    cum_a: Vec<f64>,
    cum_b: Vec<f64>,
}

impl NodeRiskTable {
    fn new(members: &[usize], time: &[f64], event: &[bool]) -> Self {
        let mut times: Vec<f64> = members.iter().map(|&i| time[i]).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let k = times.len();
        let rank: Vec<usize> = members
            .iter()
            .map(|&i| times.partition_point(|&t| t < time[i]))
            .collect();
        let mut count = vec![0.0; k];
        let mut deaths = vec![0.0; k];
        for (&i, &r) in members.iter().zip(&rank) {
            count[r] += 1.0;
            if event[i] {
                deaths[r] += 1.0;
            }
        }
        let mut at_risk = members.len() as f64;
        let (mut h, mut a, mut b) = (0.0, 0.0, 0.0);
        let mut cum_hazard = Vec::with_capacity(k);
        let mut cum_a = Vec::with_capacity(k);
        let mut cum_b = Vec::with_capacity(k);
        for r in 0..k {
            let (y, d) = (at_risk, deaths[r]);
            if d > 0.0 {
                h += d / y;
                if y > 1.0 {
                    let c = d * (y - d) / (y - 1.0);
                    a += c / y;
                    b += c / (y * y);
                }
            }
            cum_hazard.push(h);
            cum_a.push(a);
            cum_b.push(b);
            at_risk -= count[r];
        }
        Self {
            rank,
            cum_hazard,
            cum_a,
            cum_b,
        }
    }
}

/// Best log-rank split of `members` on one feature, scanning every midpoint
/// between consecutive distinct values. Returns `(statistic, threshold)`.
///
/// With `L` the left child, `O - E = sum_{s in L} (delta_s - NA(t_s))` and
/// `V = sum_t c(t) (Y_L/Y - Y_L^2/Y^2)`; both are updated in O(log n) as
/// subjects move left, using Fenwick trees over time ranks.
fn best_split_on_feature(
    members: &[usize],
    table: &NodeRiskTable,
    values: &[f64],
    event: &[bool],
    min_events: usize,
) -> Option<(f64, f64)> {
    let n = members.len();
    let total_events = members.iter().filter(|&&i| event[i]).count();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| values[p].total_cmp(&values[q]).then(p.cmp(&q)));
    let k = table.cum_a.len();
    let mut cnt = Fenwick::new(k);
    let mut sum_b = Fenwick::new(k);
    let mut n_left = 0.0;
    let (mut u, mut lin, mut quad) = (0.0, 0.0, 0.0);
    let mut left_events = 0;
    let mut best: Option<(f64, f64)> = None;
    for pos in 0..n - 1 {
        let p = order[pos];
        let r = table.rank[p];
        let b_r = table.cum_b[r];
        // sum_{t <= t_p} b(t) Y_L(t) over the current left set
        let below = sum_b.prefix(r) + b_r * (n_left - cnt.prefix(r));
        quad += b_r + 2.0 * below;
        lin += table.cum_a[r];
        let dead = event[members[p]];
        u += if dead { 1.0 } else { 0.0 } - table.cum_hazard[r];
        cnt.add(r, 1.0);
        sum_b.add(r, b_r);
        n_left += 1.0;
        if dead {
            left_events += 1;
        }
        let (v, next) = (values[p], values[order[pos + 1]]);
        if v == next || left_events < min_events || total_events - left_events < min_events {
            continue;
        }
        let var = lin - quad;
        if var <= 1e-12 {
            continue;
        }
        let stat = u * u / var;
        if stat > 0.0 && best.is_none_or(|(s, _)| stat > s) {
            best = Some((stat, 0.5 * (v + next)));
        }
    }
    best
}

struct TreeBuilder<'a> {
    data: &'a SurvivalData,
    mtry: usize,
    min_events: usize,
    max_depth: Option<usize>,
    rng: ChaCha8Rng,
    nodes: Vec<ForestNode>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, members: Vec<usize>, depth: usize) -> Result<usize> {
        let id = self.nodes.len();
        self.nodes.push(ForestNode::Terminal {
            chf: StepFunction::constant(0.0),
            n_subjects: members.len(),
        });
        let events = members.iter().filter(|&&i| self.data.event[i]).count();
        let can_split =
            self.max_depth.is_none_or(|m| depth < m) && events >= 2 * self.min_events.max(1) && members.len() >= 2;
        let split = if can_split { self.find_split(&members) } else { None };
        match split {
            Some((feature, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = members
                    .into_iter()
                    .partition(|&i| self.data.x[(i, feature)] <= threshold);
                let left = self.build(l, depth + 1)?;
                let right = self.build(r, depth + 1)?;
                self.nodes[id] = ForestNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
            None => {
                let times: Vec<f64> = members.iter().map(|&i| self.data.time[i]).collect();
                let events: Vec<bool> = members.iter().map(|&i| self.data.event[i]).collect();
                self.nodes[id] = ForestNode::Terminal {
                    chf: nelson_aalen(&times, &events)?,
                    n_subjects: members.len(),
                };
            }
        }
        Ok(id)
    }

    fn find_split(&mut self, members: &[usize]) -> Option<(usize, f64)> {
        let d = self.data.n_features();
        let mut features = sample(&mut self.rng, d, self.mtry).into_vec();
        features.sort_unstable();
        let table = NodeRiskTable::new(members, &self.data.time, &self.data.event);
        let mut best: Option<(f64, usize, f64)> = None;
        for j in features {
            let values: Vec<f64> = members.iter().map(|&i| self.data.x[(i, j)]).collect();
            if let Some((stat, thr)) =
                best_split_on_feature(members, &table, &values, &self.data.event, self.min_events)
            {
                if best.is_none_or(|(s, _, _)| stat > s) {
                    best = Some((stat, j, thr));
                }
            }
        }
        best.map(|(_, j, t)| (j, t))
    }
}

fn fit_tree(data: &SurvivalData, params: &ForestParams, mtry: usize, index: usize) -> Result<SurvivalTree> {
    let n = data.n();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(index as u64));
    let bootstrap: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut drawn = vec![false; n];
    for &i in &bootstrap {
        drawn[i] = true;
    }
    let oob = (0..n).filter(|&i| !drawn[i]).collect();
    let mut builder = TreeBuilder {
        data,
        mtry,
        min_events: params.min_node_events,
        max_depth: params.max_depth,
        rng,
        nodes: Vec::new(),
    };
    builder.build(bootstrap.clone(), 0)?;
    Ok(SurvivalTree {
        nodes: builder.nodes,
        bootstrap_indices: bootstrap,
        oob_indices: oob,
    })
}

/// Grows `n_trees` trees; tree `b` is seeded with `seed + b`, so the result
/// does not depend on scheduling.
pub fn fit_rsf(data: &SurvivalData, params: &ForestParams) -> Result<Forest> {
    if params.n_trees < 1 {
        return Err(SurvError::Parameter("forest needs at least one tree".into()));
    }
    if data.n() == 0 {
        return Err(SurvError::EmptyCohort);
    }
    if data.n_events() == 0 {
        return Err(SurvError::Training {
            message: "random survival forest needs at least one event".into(),
            trace: Vec::new(),
        });
    }
    let mtry = params.resolved_mtry(data.n_features())?;
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|b| fit_tree(data, params, mtry, b))
        .collect::<Result<Vec<_>>>()?;
    let horizon = (0..data.n())
        .filter(|&i| data.event[i])
        .map(|i| data.time[i])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Forest {
        trees,
        n_features: data.n_features(),
        horizon,
        params: params.clone(),
    })
}

impl Forest {
    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(SurvError::Shape(format!(
                "expected {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(())
    }

    /// Ensemble cumulative hazard: pointwise mean of per-tree terminal CHFs.
    pub fn predict_chf(&self, x: &[f64]) -> Result<StepFunction> {
        self.check(x)?;
        let chfs: Vec<&StepFunction> = self.trees.iter().map(|t| t.terminal_chf(x)).collect();
        StepFunction::mean(&chfs)
    }

    pub fn predict_survival(&self, x: &[f64]) -> Result<StepFunction> {
        Ok(self.predict_chf(x)?.map(|h| (-h).exp()))
    }

    /// Ensemble CHF evaluated at the training horizon.
    pub fn risk_score(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.chf_at(x, self.horizon))
    }

    /// `predict_chf(x).eval(t)` without materializing the union of knots.
    pub fn chf_at(&self, x: &[f64], t: f64) -> f64 {
        let mut acc = 0.0;
        for tree in &self.trees {
            acc += tree.terminal_chf(x).eval(t);
        }
        acc / self.trees.len() as f64
    }

    /// Out-of-bag risk score per training row (`None` if never out of bag).
    pub fn oob_risk_scores(&self, data: &SurvivalData) -> Vec<Option<f64>> {
        let mut sum = vec![0.0; data.n()];
        let mut count = vec![0usize; data.n()];
        for tree in &self.trees {
            for &i in &tree.oob_indices {
                sum[i] += tree.terminal_chf(&data.row(i)).eval(self.horizon);
                count[i] += 1;
            }
        }
        sum.iter()
            .zip(&count)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect()
    }

    /// Harrell's C over rows that were out of bag for at least one tree.
    pub fn oob_c_index(&self, data: &SurvivalData) -> Result<ConcordanceResult> {
        let scores = self.oob_risk_scores(data);
        let keep: Vec<usize> = (0..data.n()).filter(|&i| scores[i].is_some()).collect();
        let t: Vec<f64> = keep.iter().map(|&i| data.time[i]).collect();
        let e: Vec<bool> = keep.iter().map(|&i| data.event[i]).collect();
        let s: Vec<f64> = keep.iter().map(|&i| scores[i].unwrap()).collect();
        c_index(&t, &e, &s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonparametric::log_rank;

    #[test]
    fn incremental_statistic_matches_direct_log_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..30 {
            let n = rng.random_range(6..40);
            let time: Vec<f64> = (0..n).map(|_| (rng.random_range(1..15)) as f64).collect();
            let event: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
            let members: Vec<usize> = (0..n).collect();
            let table = NodeRiskTable::new(&members, &time, &event);
            let Some((stat, thr)) = best_split_on_feature(&members, &table, &values, &event, 1) else {
                continue;
            };
            // brute force over the same candidate thresholds
            let mut distinct = values.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let mut brute_best = (0.0, f64::NAN);
            for w in distinct.windows(2) {
                let c = 0.5 * (w[0] + w[1]);
                let (l, r): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| values[i] <= c);
                let ev = |s: &[usize]| s.iter().filter(|&&i| event[i]).count();
                if ev(&l) < 1 || ev(&r) < 1 {
                    continue;
                }
                let lt: Vec<f64> = l.iter().map(|&i| time[i]).collect();
                let le: Vec<bool> = l.iter().map(|&i| event[i]).collect();
                let rt: Vec<f64> = r.iter().map(|&i| time[i]).collect();
                let re: Vec<bool> = r.iter().map(|&i| event[i]).collect();
                let chi = log_rank((&lt, &le), (&rt, &re)).unwrap().chi_square;
                if chi > brute_best.0 + 1e-9 {
                    brute_best = (chi, c);
                }
            }
            assert!(
                (stat - brute_best.0).abs() < 1e-8 * brute_best.0.max(1.0),
                "{stat} vs {brute_best:?}"
            );
            assert_eq!(thr, brute_best.1);
        }
    }

    #[test]
    fn mean_of_two_single_step_chfs() {
        let h1 = StepFunction::new(vec![1.0], vec![1.0], 0.0).unwrap();
        let h2 = StepFunction::new(vec![1.0], vec![3.0], 0.0).unwrap();
        let m = StepFunction::mean(&[&h1, &h2]).unwrap();
        assert_eq!(m.eval(0.5), 0.0);
        assert_eq!(m.eval(1.0), 2.0);
    }

    #[test]
    fn all_censored_is_an_error() {
        let data = SurvivalData::from_rows(&[vec![1.0], vec![2.0]], vec![1.0, 2.0], vec![false, false]).unwrap();
        assert!(fit_rsf(&data, &ForestParams::default()).is_err());
    }

    #[test]
    fn invalid_mtry_rejected() {
        let data = SurvivalData::from_rows(&[vec![1.0], vec![2.0]], vec![1.0, 2.0], vec![true, true]).unwrap();
        let p = ForestParams {
            mtry: Some(2),
            ..ForestParams::default()
        };
        assert!(matches!(fit_rsf(&data, &p), Err(SurvError::Parameter(_))));
    }
}
