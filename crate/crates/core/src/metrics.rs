//! Discrimination, calibration and clinical-utility metrics for survival
//! predictions: Harrell's C, incident/dynamic AUC(t), IPCW Brier score,
//! calibration tables and decision-curve net benefit.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SurvError};
use crate::nonparametric::{kaplan_meier, StepFunction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceResult {
    pub concordant: u64,
    pub discordant: u64,
    pub tied_score: u64,
    pub c_index: f64,
}

impl ConcordanceResult {
    fn from_counts(concordant: u64, discordant: u64, tied_score: u64) -> Result<Self> {
        let total = concordant + discordant + tied_score;
        if total == 0 {
            return Err(SurvError::Undefined("no comparable pairs".into()));
        }
        Ok(Self {
            concordant,
            discordant,
            tied_score,
            c_index: (concordant as f64 + 0.5 * tied_score as f64) / total as f64,
        })
    }
}

fn check_lengths(times: &[f64], events: &[bool], scores: &[f64]) -> Result<()> {
    if times.len() != events.len() || times.len() != scores.len() {
        return Err(SurvError::Shape(format!(
            "{} times, {} events, {} scores",
            times.len(),
            events.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SurvError::Numeric("risk scores must be finite".into()));
    }
    Ok(())
}

/// Pairwise O(n²) reference: pair (i, j) is comparable iff `t_i < t_j` and
/// subject i had the event.
pub fn c_index_brute(times: &[f64], events: &[bool], scores: &[f64]) -> Result<ConcordanceResult> {
    check_lengths(times, events, scores)?;
    let (mut c, mut d, mut t) = (0u64, 0u64, 0u64);
    for i in 0..times.len() {
        if !events[i] {
            continue;
        }
        for j in 0..times.len() {
            if times[i] < times[j] {
                if scores[i] > scores[j] {
                    c += 1;
                } else if scores[i] < scores[j] {
                    d += 1;
                } else {
                    t += 1;
                }
            }
        }
    }
    ConcordanceResult::from_counts(c, d, t)
}

struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted positions `< i`.
    fn prefix(&self, i: usize) -> u64 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's C in O(n log n): sweep subjects by decreasing time, keeping a
/// Fenwick tree over score ranks of subjects with strictly larger time.
pub fn c_index(times: &[f64], events: &[bool], scores: &[f64]) -> Result<ConcordanceResult> {
    check_lengths(times, events, scores)?;
    let n = times.len();
    let mut sorted_scores: Vec<f64> = scores.to_vec();
    sorted_scores.sort_by(f64::total_cmp);
    sorted_scores.dedup();
    let rank = |s: f64| sorted_scores.partition_point(|&v| v < s);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut fen = Fenwick::new(sorted_scores.len());
    let mut inserted = 0u64;
    let (mut c, mut d, mut t) = (0u64, 0u64, 0u64);
    let mut i = 0;
    while i < n {
        let tt = times[order[i]];
        let mut j = i;
        while j < n && times[order[j]] == tt {
            j += 1;
        }
        for &k in &order[i..j] {
            if events[k] {
                let r = rank(scores[k]);
                let below = fen.prefix(r);
                let upto = fen.prefix(r + 1);
                c += below;
                t += upto - below;
                d += inserted - upto;
            }
        }
        for &k in &order[i..j] {
            fen.add(rank(scores[k]));
            inserted += 1;
        }
        i = j;
    }
    ConcordanceResult::from_counts(c, d, t)
}

/// Kaplan–Meier estimate of the censoring distribution `G`.
pub fn censoring_survival(times: &[f64], events: &[bool]) -> Result<StepFunction> {
    let flipped: Vec<bool> = events.iter().map(|e| !e).collect();
    kaplan_meier(times, &flipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucPoint {
    pub t: f64,
    pub auc: f64,
    pub n_cases: usize,
    pub n_controls: usize,
    /// Inverse-probability-of-censoring weight `1/G(t)` carried by each control.
    pub control_weight: f64,
}

/// Incident/dynamic AUC at an observed event time `t`.
///
/// Cases have the event exactly at `t`; controls are still event-free after
/// `t`. All controls share the weight `1/G(t)`, which cancels in the ratio.
pub fn auc_t(
    times: &[f64],
    events: &[bool],
    scores: &[f64],
    t: f64,
    censor_survival: &StepFunction,
) -> Result<AucPoint> {
    check_lengths(times, events, scores)?;
    let cases: Vec<usize> = (0..times.len()).filter(|&i| events[i] && times[i] == t).collect();
    let controls: Vec<usize> = (0..times.len()).filter(|&j| times[j] > t).collect();
    if cases.is_empty() || controls.is_empty() {
        return Err(SurvError::Undefined(format!(
            "AUC({t}) has {} cases and {} controls",
            cases.len(),
            controls.len()
        )));
    }
    let g = censor_survival.eval(t);
    if g <= 0.0 {
        return Err(SurvError::Undefined(format!("G({t}) = 0")));
    }
    let w = 1.0 / g;
    let mut num = 0.0;
    let mut den = 0.0;
    for &i in &cases {
        for &j in &controls {
            let credit = if scores[i] > scores[j] {
                1.0
            } else if scores[i] == scores[j] {
                0.5
            } else {
                0.0
            };
            num += w * credit;
            den += w;
        }
    }
    Ok(AucPoint {
        t,
        auc: num / den,
        n_cases: cases.len(),
        n_controls: controls.len(),
        control_weight: w,
    })
}

/// AUC(t) at every distinct event time; times where it is undefined are
/// returned in the second vector.
pub fn auc_curve(
    times: &[f64],
    events: &[bool],
    scores: &[f64],
    censor_survival: &StepFunction,
) -> Result<(Vec<AucPoint>, Vec<f64>)> {
    check_lengths(times, events, scores)?;
    let mut event_times: Vec<f64> = (0..times.len()).filter(|&i| events[i]).map(|i| times[i]).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for t in event_times {
        match auc_t(times, events, scores, t, censor_survival) {
            Ok(p) => points.push(p),
            Err(SurvError::Undefined(_)) => skipped.push(t),
            Err(e) => return Err(e),
        }
    }
    Ok((points, skipped))
}

/// Case-count-weighted mean of AUC(t) over evaluable event times in `(0, horizon]`.
pub fn auc_summary(points: &[AucPoint], horizon: f64) -> Option<f64> {
    let (num, den) = points
        .iter()
        .filter(|p| p.t <= horizon)
        .fold((0.0, 0usize), |(num, den), p| {
            (num + p.n_cases as f64 * p.auc, den + p.n_cases)
        });
    (den > 0).then(|| num / den as f64)
}

/// Graf IPCW Brier score at time `t`.
pub fn brier(
    t: f64,
    survival_predictions: &[f64],
    times: &[f64],
    events: &[bool],
    censor_survival: &StepFunction,
) -> Result<f64> {
    check_lengths(times, events, survival_predictions)?;
    if times.is_empty() {
        return Err(SurvError::EmptyCohort);
    }
    let g_t = censor_survival.eval(t);
    if g_t <= 0.0 {
        return Err(SurvError::Undefined(format!("G({t}) = 0")));
    }
    let mut total = 0.0;
    for i in 0..times.len() {
        let s = survival_predictions[i];
        if times[i] <= t && events[i] {
            let g = censor_survival.eval_left(times[i]);
            if g <= 0.0 {
                return Err(SurvError::Undefined(format!("G({}-) = 0", times[i])));
            }
            total += s * s / g;
        } else if times[i] > t {
            total += (1.0 - s) * (1.0 - s) / g_t;
        }
    }
    Ok(total / times.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub mean_predicted: f64,
    pub observed: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub t: f64,
    pub bins: Vec<CalibrationBin>,
    /// True when tied predictions forced fewer bins than requested.
    pub merged: bool,
}

/// Quantile-binned calibration of predicted risk `P(T <= t)` against
/// `1 - KM(t)` within each bin. Tied predictions never straddle a bin edge.
pub fn calibration_table(
    predicted_risk: &[f64],
    times: &[f64],
    events: &[bool],
    t: f64,
    n_bins: usize,
) -> Result<CalibrationTable> {
    check_lengths(times, events, predicted_risk)?;
    if n_bins < 2 {
        return Err(SurvError::Parameter("calibration needs at least 2 bins".into()));
    }
    let n = times.len();
    if n == 0 {
        return Err(SurvError::EmptyCohort);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| predicted_risk[a].total_cmp(&predicted_risk[b]));

    let mut edges = vec![0usize];
    for k in 1..n_bins {
        let mut b = (k * n + n_bins / 2) / n_bins;
        while b < n && b > 0 && predicted_risk[order[b - 1]] == predicted_risk[order[b]] {
            b += 1;
        }
        if b > *edges.last().unwrap() && b < n {
            edges.push(b);
        }
    }
    edges.push(n);

    let mut bins = Vec::new();
    for w in edges.windows(2) {
        let members = &order[w[0]..w[1]];
        let bt: Vec<f64> = members.iter().map(|&i| times[i]).collect();
        let be: Vec<bool> = members.iter().map(|&i| events[i]).collect();
        let km = kaplan_meier(&bt, &be)?;
        bins.push(CalibrationBin {
            mean_predicted: members.iter().map(|&i| predicted_risk[i]).sum::<f64>() / members.len() as f64,
            observed: 1.0 - km.eval(t),
            count: members.len(),
        });
    }
    Ok(CalibrationTable {
        t,
        merged: bins.len() < n_bins,
        bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcaPoint {
    pub threshold: f64,
    pub net_benefit: f64,
    pub treat_all_benefit: f64,
    pub treat_none_benefit: f64,
}

/// Outcome at horizon `t`: `Some(true)` event by `t`, `Some(false)` event-free
/// past `t`, `None` censored at or before `t` (excluded from net benefit).
pub fn horizon_outcomes(times: &[f64], events: &[bool], t: f64) -> Vec<Option<bool>> {
    times
        .iter()
        .zip(events)
        .map(|(&ti, &e)| {
            if ti <= t && e {
                Some(true)
            } else if ti > t {
                Some(false)
            } else {
                None
            }
        })
        .collect()
}

/// Net benefit at threshold `p`; a subject is called positive when its
/// predicted probability is at least `p`.
pub fn net_benefit(event_by_t: &[bool], predicted_prob: &[f64], p: f64) -> Result<DcaPoint> {
    if event_by_t.len() != predicted_prob.len() {
        return Err(SurvError::Shape("outcome and prediction lengths differ".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(SurvError::Parameter(format!("threshold {p} outside (0, 1)")));
    }
    if event_by_t.is_empty() {
        return Err(SurvError::Undefined("net benefit over zero subjects".into()));
    }
    let n = event_by_t.len() as f64;
    let odds = p / (1.0 - p);
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&y, &q) in event_by_t.iter().zip(predicted_prob) {
        if q >= p {
            if y {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let prevalence = event_by_t.iter().filter(|&&y| y).count() as f64 / n;
    Ok(DcaPoint {
        threshold: p,
        net_benefit: tp as f64 / n - (fp as f64 / n) * odds,
        treat_all_benefit: prevalence - (1.0 - prevalence) * odds,
        treat_none_benefit: 0.0,
    })
}

/// Decision curve over `thresholds` after excluding subjects censored before
/// the horizon.
pub fn dca_curve(outcomes: &[Option<bool>], predicted_prob: &[f64], thresholds: &[f64]) -> Result<Vec<DcaPoint>> {
    let (y, q): (Vec<bool>, Vec<f64>) = outcomes
        .iter()
        .zip(predicted_prob)
        .filter_map(|(o, &q)| o.map(|y| (y, q)))
        .unzip();
    thresholds.iter().map(|&p| net_benefit(&y, &q, p)).collect()
}
