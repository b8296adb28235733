//! Kaplan–Meier and Nelson–Aalen estimators, and the two-sample log-rank test.
//!
//! Tie convention throughout: at a time `t` events are processed before
//! censorings, so a subject censored at `t` is still in the risk set at `t`.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Result, SurvError};

/// Right-continuous piecewise-constant function of time.
///
/// `eval(t)` returns the value at the last knot `<= t`, or `initial_value`
/// before the first knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
    initial_value: f64,
}

impl StepFunction {
    pub fn new(knots: Vec<f64>, values: Vec<f64>, initial_value: f64) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(SurvError::Shape(format!(
                "{} knots but {} values",
                knots.len(),
                values.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(SurvError::Parameter(
                "step function knots must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            knots,
            values,
            initial_value,
        })
    }

    /// A function with no knots.
    pub fn constant(value: f64) -> Self {
        Self {
            knots: Vec::new(),
            values: Vec::new(),
            initial_value: value,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial_value(&self) -> f64 {
        self.initial_value
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn eval(&self, t: f64) -> f64 {
        // number of knots <= t
        let k = self.knots.partition_point(|&x| x <= t);
        if k == 0 {
            self.initial_value
        } else {
            self.values[k - 1]
        }
    }

    /// Left limit `f(t-)`: value at the last knot strictly before `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let k = self.knots.partition_point(|&x| x < t);
        if k == 0 {
            self.initial_value
        } else {
            self.values[k - 1]
        }
    }

    /// Applies `f` to every value (including the initial one).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> StepFunction {
        StepFunction {
            knots: self.knots.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            initial_value: f(self.initial_value),
        }
    }

    /// Pointwise arithmetic mean over the union of the knots.
    ///
    /// Summation runs in slice order, so `mean(fs).eval(t)` is bitwise equal to
    /// `fs.iter().map(|f| f.eval(t)).sum() / fs.len()`.
    pub fn mean(fs: &[&StepFunction]) -> Result<StepFunction> {
        if fs.is_empty() {
            return Err(SurvError::Parameter("mean of zero step functions".into()));
        }
        let mut knots: Vec<f64> = fs.iter().flat_map(|f| f.knots.iter().copied()).collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let n = fs.len() as f64;
        let mean_at = |t: Option<f64>| {
            let mut acc = 0.0;
            for f in fs {
                acc += match t {
                    Some(t) => f.eval(t),
                    None => f.initial_value,
                };
            }
            acc / n
        };
        let values = knots.iter().map(|&t| mean_at(Some(t))).collect();
        Ok(StepFunction {
            knots,
            values,
            initial_value: mean_at(None),
        })
    }

    pub fn is_nonincreasing(&self) -> bool {
        let mut prev = self.initial_value;
        self.values.iter().all(|&v| {
            let ok = v <= prev;
            prev = v;
            ok
        })
    }

    pub fn is_nondecreasing(&self) -> bool {
        let mut prev = self.initial_value;
        self.values.iter().all(|&v| {
            let ok = v >= prev;
            prev = v;
            ok
        })
    }

    /// Writes `time,value` rows. The initial value is emitted at time 0.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,value")?;
        writeln!(w, "0,{}", self.initial_value)?;
        for (t, v) in self.knots.iter().zip(&self.values) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }
}

/// Per distinct time: number at risk, number of events, number censored.
#[derive(Debug, Clone)]
pub(crate) struct RiskTable {
    pub times: Vec<f64>,
    pub at_risk: Vec<f64>,
    pub events: Vec<f64>,
}

pub(crate) fn risk_table(times: &[f64], events: &[bool]) -> RiskTable {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let n = times.len();
    let mut out = RiskTable {
        times: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let mut d = 0usize;
        let mut j = i;
        while j < n && times[order[j]] == t {
            if events[order[j]] {
                d += 1;
            }
            j += 1;
        }
        out.times.push(t);
        out.at_risk.push((n - i) as f64);
        out.events.push(d as f64);
        i = j;
    }
    out
}

fn check_inputs(times: &[f64], events: &[bool]) -> Result<()> {
    if times.is_empty() {
        return Err(SurvError::EmptyCohort);
    }
    if times.len() != events.len() {
        return Err(SurvError::Shape(format!(
            "{} times but {} event flags",
            times.len(),
            events.len()
        )));
    }
    if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(SurvError::Parameter(format!(
            "survival times must be finite and positive, got {t}"
        )));
    }
    Ok(())
}

/// Kaplan–Meier curve together with Greenwood variance and log-log CI bands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KaplanMeier {
    pub survival: StepFunction,
    pub variance: StepFunction,
    pub lower: StepFunction,
    pub upper: StepFunction,
}

impl KaplanMeier {
    /// Smallest time at which the survival estimate drops to 0.5 or below.
    pub fn median(&self) -> Option<f64> {
        median_survival(&self.survival)
    }
}

pub fn median_survival(survival: &StepFunction) -> Option<f64> {
    survival
        .knots()
        .iter()
        .zip(survival.values())
        .find(|(_, &s)| s <= 0.5)
        .map(|(&t, _)| t)
}

/// Product-limit estimate with Greenwood variance and 95% log-log bands.
pub fn kaplan_meier_full(times: &[f64], events: &[bool]) -> Result<KaplanMeier> {
    check_inputs(times, events)?;
    let table = risk_table(times, events);
    let z = 1.959_963_984_540_054;
    let mut knots = Vec::new();
    let (mut s_vals, mut v_vals, mut lo_vals, mut hi_vals) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut s = 1.0;
    let mut greenwood = 0.0;
    for k in 0..table.times.len() {
        let (n, d) = (table.at_risk[k], table.events[k]);
        if d == 0.0 {
            continue;
        }
        s *= 1.0 - d / n;
        if n > d {
            greenwood += d / (n * (n - d));
        }
        knots.push(table.times[k]);
        s_vals.push(s);
        v_vals.push(s * s * greenwood);
        let (lo, hi) = if s > 0.0 && s < 1.0 {
            // log(-log S) transform keeps the band in (0, 1)
            let se = (greenwood / (s.ln() * s.ln())).sqrt();
            let a = (-s.ln()).ln();
            ((-(a + z * se).exp()).exp(), (-(a - z * se).exp()).exp())
        } else {
            (s, s)
        };
        lo_vals.push(lo);
        hi_vals.push(hi);
    }
    Ok(KaplanMeier {
        survival: StepFunction::new(knots.clone(), s_vals, 1.0)?,
        variance: StepFunction::new(knots.clone(), v_vals, 0.0)?,
        lower: StepFunction::new(knots.clone(), lo_vals, 1.0)?,
        upper: StepFunction::new(knots, hi_vals, 1.0)?,
    })
}

pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<StepFunction> {
    Ok(kaplan_meier_full(times, events)?.survival)
}

/// Nelson–Aalen cumulative hazard, knots at distinct event times.
pub fn nelson_aalen(times: &[f64], events: &[bool]) -> Result<StepFunction> {
    check_inputs(times, events)?;
    let table = risk_table(times, events);
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut h = 0.0;
    for k in 0..table.times.len() {
        let d = table.events[k];
        if d == 0.0 {
            continue;
        }
        h += d / table.at_risk[k];
        knots.push(table.times[k]);
        values.push(h);
    }
    StepFunction::new(knots, values, 0.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRankResult {
    pub chi_square: f64,
    pub p_value: f64,
    pub observed: [f64; 2],
    pub expected: [f64; 2],
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_1df_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        statrs::function::erf::erfc((x / 2.0).sqrt())
    }
}

/// Two-sample log-rank test with hypergeometric variance.
pub fn log_rank(group_a: (&[f64], &[bool]), group_b: (&[f64], &[bool])) -> Result<LogRankResult> {
    check_inputs(group_a.0, group_a.1)?;
    check_inputs(group_b.0, group_b.1)?;
    let times: Vec<f64> = group_a.0.iter().chain(group_b.0).copied().collect();
    let events: Vec<bool> = group_a.1.iter().chain(group_b.1).copied().collect();
    let in_a: Vec<bool> = (0..times.len()).map(|i| i < group_a.0.len()).collect();
    if !events.iter().any(|&e| e) {
        return Err(SurvError::Undefined(
            "log-rank statistic needs at least one event".into(),
        ));
    }

    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let n_total = times.len();
    let mut n_a = group_a.0.len() as f64;
    let mut n_b = group_b.0.len() as f64;
    let (mut obs_a, mut obs_b, mut exp_a, mut exp_b, mut var) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < n_total {
        let t = times[order[i]];
        let (mut d_a, mut d_b, mut leave_a, mut leave_b) = (0.0, 0.0, 0.0, 0.0);
        let mut j = i;
        while j < n_total && times[order[j]] == t {
            let idx = order[j];
            if in_a[idx] {
                leave_a += 1.0;
                if events[idx] {
                    d_a += 1.0;
                }
            } else {
                leave_b += 1.0;
                if events[idx] {
                    d_b += 1.0;
                }
            }
            j += 1;
        }
        let d = d_a + d_b;
        let n = n_a + n_b;
        if d > 0.0 {
            obs_a += d_a;
            obs_b += d_b;
            exp_a += d * n_a / n;
            exp_b += d * n_b / n;
            if n > 1.0 {
                var += n_a * n_b * d * (n - d) / (n * n * (n - 1.0));
            }
        }
        n_a -= leave_a;
        n_b -= leave_b;
        i = j;
    }
    let diff = obs_a - exp_a;
    let chi_square = if var > 0.0 { diff * diff / var } else { 0.0 };
    Ok(LogRankResult {
        chi_square,
        p_value: chi2_1df_sf(chi_square),
        observed: [obs_a, obs_b],
        expected: [exp_a, exp_b],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_function_eval_and_left_limit() {
        let f = StepFunction::new(vec![1.0, 2.0], vec![0.5, 0.25], 1.0).unwrap();
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(1.0), 0.5);
        assert_eq!(f.eval_left(1.0), 1.0);
        assert_eq!(f.eval(10.0), 0.25);
        assert!(StepFunction::new(vec![1.0, 1.0], vec![0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn km_hand_cases() {
        let s = kaplan_meier(&[1.0, 2.0, 3.0], &[true, true, true]).unwrap();
        assert!((s.eval(1.0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.eval(2.0) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.eval(3.0), 0.0);

        // censored at 1, so the risk set at 2 holds one subject
        let s = kaplan_meier(&[1.0, 2.0], &[false, true]).unwrap();
        assert_eq!(s.eval(2.0), 0.0);
        assert_eq!(s.eval(1.5), 1.0);
        // a third subject still at risk at 2 gives a risk set of two
        let s = kaplan_meier(&[1.0, 2.0, 3.0], &[false, true, false]).unwrap();
        assert!((s.eval(2.0) - 0.5).abs() < 1e-12);

        let s = kaplan_meier(&[1.0, 2.0, 5.0], &[false; 3]).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.eval(100.0), 1.0);
    }

    #[test]
    fn km_ties_events_before_censoring() {
        // event and censoring both at t = 2: censored subject still at risk
        let s = kaplan_meier(&[2.0, 2.0, 3.0], &[true, false, true]).unwrap();
        assert!((s.eval(2.0) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn na_hand_case() {
        let h = nelson_aalen(&[1.0, 2.0], &[true, true]).unwrap();
        assert!((h.eval(1.0) - 0.5).abs() < 1e-12);
        assert!((h.eval(2.0) - 1.5).abs() < 1e-12);
        let h = nelson_aalen(&[1.0, 2.0], &[false, false]).unwrap();
        assert_eq!(h.eval(3.0), 0.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(kaplan_meier(&[], &[]).is_err());
        assert!(nelson_aalen(&[], &[]).is_err());
    }

    #[test]
    fn log_rank_identical_and_separated_groups() {
        let t = [1.0, 2.0, 3.0];
        let e = [true, true, false];
        let r = log_rank((&t, &e), (&t, &e)).unwrap();
        assert_eq!(r.chi_square, 0.0);
        assert_eq!(r.p_value, 1.0);

        // by hand: O_A - E_A = 3 - 1.15 = 1.85, V = 0.25 + 0.24 + 0.1875
        let a = [1.0, 2.0, 3.0];
        let b = [10.0, 11.0, 12.0];
        let ev = [true; 3];
        let r = log_rank((&a, &ev), (&b, &ev)).unwrap();
        let expected = 1.85f64.powi(2) / 0.6775;
        assert!((r.chi_square - expected).abs() < 1e-12);
        assert!(r.p_value < 0.05);
        let swapped = log_rank((&b, &ev), (&a, &ev)).unwrap();
        assert!((swapped.chi_square - r.chi_square).abs() < 1e-12);
    }

    #[test]
    fn log_rank_without_events_is_undefined() {
        let t = [1.0, 2.0];
        let e = [false, false];
        assert!(matches!(log_rank((&t, &e), (&t, &e)), Err(SurvError::Undefined(_))));
    }

    #[test]
    fn greenwood_bands_bracket_estimate() {
        let times: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let events: Vec<bool> = (0..20).map(|i| i % 3 != 0).collect();
        let km = kaplan_meier_full(&times, &events).unwrap();
        for &t in km.survival.knots() {
            let s = km.survival.eval(t);
            assert!(km.lower.eval(t) <= s + 1e-15 && s <= km.upper.eval(t) + 1e-15);
            assert!(km.variance.eval(t) >= 0.0);
        }
    }
}
