//! Cohort representation, CSV ingestion, z-score normalization and the
//! synthetic Weibull–Cox cohort generator.

use nalgebra::DMatrix;
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, SurvError};

/// One subject: observed time (months), event flag and feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub id: String,
    pub time: f64,
    pub event: bool,
    pub features: Vec<f64>,
}

/// Per-column statistics recorded by [`zscore_normalize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub stats: Vec<ColumnStats>,
    /// Constant columns removed during normalization.
    pub dropped: Vec<String>,
}

impl Normalization {
    pub fn stats_for(&self, name: &str) -> Option<&ColumnStats> {
        self.stats.iter().find(|s| s.name == name)
    }

    /// Applies stored statistics to another cohort (e.g. a held-out split).
    pub fn apply(&self, cohort: &Cohort) -> Result<Cohort> {
        let cols: Vec<usize> = self
            .stats
            .iter()
            .map(|s| {
                cohort
                    .feature_index(&s.name)
                    .ok_or_else(|| SurvError::Schema(format!("column \"{}\" missing from cohort", s.name)))
            })
            .collect::<Result<_>>()?;
        let records = cohort
            .records
            .iter()
            .map(|r| SurvivalRecord {
                id: r.id.clone(),
                time: r.time,
                event: r.event,
                features: cols
                    .iter()
                    .zip(&self.stats)
                    .map(|(&j, s)| (r.features[j] - s.mean) / s.sd)
                    .collect(),
            })
            .collect();
        let mut out = Cohort::new(self.stats.iter().map(|s| s.name.clone()).collect(), records)?;
        out.normalization = Some(self.clone());
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub feature_names: Vec<String>,
    pub records: Vec<SurvivalRecord>,
    pub normalization: Option<Normalization>,
}

/// Numeric view of a cohort used by the learners.
#[derive(Debug, Clone)]
pub struct SurvivalData {
    pub x: DMatrix<f64>,
    pub time: Vec<f64>,
    pub event: Vec<bool>,
}

impl SurvivalData {
    pub fn new(x: DMatrix<f64>, time: Vec<f64>, event: Vec<bool>) -> Result<Self> {
        if x.nrows() != time.len() || time.len() != event.len() {
            return Err(SurvError::Shape(format!(
                "{} rows, {} times, {} event flags",
                x.nrows(),
                time.len(),
                event.len()
            )));
        }
        Ok(Self { x, time, event })
    }

    pub fn from_rows(rows: &[Vec<f64>], time: Vec<f64>, event: Vec<bool>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(SurvError::Shape("ragged feature rows".into()));
        }
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(x, time, event)
    }

    pub fn n(&self) -> usize {
        self.time.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn subset(&self, idx: &[usize]) -> SurvivalData {
        SurvivalData {
            x: self.x.select_rows(idx),
            time: idx.iter().map(|&i| self.time[i]).collect(),
            event: idx.iter().map(|&i| self.event[i]).collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> SurvivalData {
        SurvivalData {
            x: self.x.select_columns(cols),
            time: self.time.clone(),
            event: self.event.clone(),
        }
    }

    /// Row order sorted by (time, event, features), compared totally.
    ///
    /// Learners that must not depend on input order fit on this ordering.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n()).collect();
        idx.sort_by(|&a, &b| {
            self.time[a]
                .total_cmp(&self.time[b])
                .then(self.event[a].cmp(&self.event[b]))
                .then_with(|| {
                    for j in 0..self.n_features() {
                        let c = self.x[(a, j)].total_cmp(&self.x[(b, j)]);
                        if c.is_ne() {
                            return c;
                        }
                    }
                    std::cmp::Ordering::Equal
                })
        });
        idx
    }
}

impl Cohort {
    pub fn new(feature_names: Vec<String>, records: Vec<SurvivalRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(SurvError::EmptyCohort);
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(SurvError::Schema(format!("duplicate feature name \"{name}\"")));
            }
        }
        for (i, r) in records.iter().enumerate() {
            if !(r.time.is_finite() && r.time > 0.0) {
                return Err(SurvError::Parse {
                    row: i + 1,
                    column: "time".into(),
                    message: format!("time must be positive, got {}", r.time),
                });
            }
            if r.features.len() != feature_names.len() {
                return Err(SurvError::Shape(format!(
                    "record {} has {} features, cohort has {}",
                    r.id,
                    r.features.len(),
                    feature_names.len()
                )));
            }
        }
        Ok(Self {
            feature_names,
            records,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.features[j]).collect()
    }

    pub fn data(&self) -> SurvivalData {
        let x = DMatrix::from_fn(self.len(), self.n_features(), |i, j| self.records[i].features[j]);
        SurvivalData {
            x,
            time: self.times(),
            event: self.events(),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Cohort> {
        let mut out = Cohort::new(
            self.feature_names.clone(),
            idx.iter().map(|&i| self.records[i].clone()).collect(),
        )?;
        out.normalization = self.normalization.clone();
        Ok(out)
    }

    /// Keeps only the named features, in the given order.
    pub fn select_features(&self, names: &[String]) -> Result<Cohort> {
        let cols: Vec<usize> = names
            .iter()
            .map(|n| {
                self.feature_index(n)
                    .ok_or_else(|| SurvError::Schema(format!("unknown feature \"{n}\"")))
            })
            .collect::<Result<_>>()?;
        let records = self
            .records
            .iter()
            .map(|r| SurvivalRecord {
                id: r.id.clone(),
                time: r.time,
                event: r.event,
                features: cols.iter().map(|&j| r.features[j]).collect(),
            })
            .collect();
        let mut out = Cohort::new(names.to_vec(), records)?;
        out.normalization = self.normalization.as_ref().map(|n| Normalization {
            stats: n.stats.iter().filter(|s| names.contains(&s.name)).cloned().collect(),
            dropped: n.dropped.clone(),
        });
        Ok(out)
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSchema {
    #[serde(default)]
    pub id: Option<String>,
    pub time: String,
    pub event: String,
    pub features: Vec<String>,
}

impl CohortSchema {
    /// `id`/`time`/`event` columns by name, every other column a feature.
    pub fn infer(headers: &[String]) -> Result<Self> {
        for required in ["time", "event"] {
            if !headers.iter().any(|h| h == required) {
                return Err(SurvError::Schema(format!("missing column \"{required}\"")));
            }
        }
        let features = headers
            .iter()
            .filter(|h| !matches!(h.as_str(), "id" | "time" | "event"))
            .cloned()
            .collect();
        Ok(Self {
            id: headers.iter().any(|h| h == "id").then(|| "id".to_string()),
            time: "time".into(),
            event: "event".into(),
            features,
        })
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let s = raw.trim();
    if s.is_empty() {
        return Err(SurvError::Parse {
            row,
            column: column.into(),
            message: "missing value".into(),
        });
    }
    let v: f64 = s.parse().map_err(|_| SurvError::Parse {
        row,
        column: column.into(),
        message: format!("not a number: \"{s}\""),
    })?;
    if !v.is_finite() {
        return Err(SurvError::Parse {
            row,
            column: column.into(),
            message: format!("non-finite value \"{s}\""),
        });
    }
    Ok(v)
}

/// Reads a cohort from comma-separated text with a header row.
///
/// Rows are numbered from 1 (the first data row) in error messages.
pub fn read_cohort<R: Read>(reader: R, schema: Option<&CohortSchema>) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(SurvError::EmptyCohort);
    }
    let schema = match schema {
        Some(s) => s.clone(),
        None => CohortSchema::infer(&headers)?,
    };
    if schema.features.is_empty() {
        return Err(SurvError::Schema("schema names no feature columns".into()));
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SurvError::Schema(format!("missing column \"{name}\"")))
    };
    let id_col = schema.id.as_deref().map(col).transpose()?;
    let time_col = col(&schema.time)?;
    let event_col = col(&schema.event)?;
    let feature_cols: Vec<usize> = schema.features.iter().map(|f| col(f)).collect::<Result<_>>()?;

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let get = |c: usize| rec.get(c).unwrap_or("");
        let time = parse_cell(get(time_col), row, &schema.time)?;
        if time <= 0.0 {
            return Err(SurvError::Parse {
                row,
                column: schema.time.clone(),
                message: format!("time must be positive, got {time}"),
            });
        }
        let ev = parse_cell(get(event_col), row, &schema.event)?;
        let event = if ev == 1.0 {
            true
        } else if ev == 0.0 {
            false
        } else {
            return Err(SurvError::Parse {
                row,
                column: schema.event.clone(),
                message: format!("event must be 0 or 1, got {}", get(event_col).trim()),
            });
        };
        let features = feature_cols
            .iter()
            .zip(&schema.features)
            .map(|(&c, name)| parse_cell(get(c), row, name))
            .collect::<Result<Vec<_>>>()?;
        let id = match id_col {
            Some(c) => get(c).trim().to_string(),
            None => format!("row{row}"),
        };
        records.push(SurvivalRecord {
            id,
            time,
            event,
            features,
        });
    }
    if records.is_empty() {
        return Err(SurvError::EmptyCohort);
    }
    Cohort::new(schema.features.clone(), records)
}

pub fn load_cohort(path: impl AsRef<Path>, schema: Option<&CohortSchema>) -> Result<Cohort> {
    let file = std::fs::File::open(path.as_ref())?;
    read_cohort(file, schema)
}

/// Writes `id,time,event,<features...>`; floats use shortest round-trip formatting.
pub fn write_cohort<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "time".into(), "event".into()];
    header.extend(cohort.feature_names.iter().cloned());
    w.write_record(&header)?;
    for r in &cohort.records {
        let mut row = vec![r.id.clone(), r.time.to_string(), u8::from(r.event).to_string()];
        row.extend(r.features.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_cohort(cohort, std::io::BufWriter::new(file))
}

pub(crate) fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Standardizes each non-constant column to mean 0 and sample sd 1 (n−1
/// denominator). Columns with fewer than two distinct values are dropped and
/// listed in `normalization.dropped`.
pub fn zscore_normalize(cohort: &Cohort) -> Result<Cohort> {
    let mut stats = Vec::new();
    let mut dropped = Vec::new();
    for (j, name) in cohort.feature_names.iter().enumerate() {
        let col = cohort.column(j);
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            dropped.push(name.clone());
            continue;
        }
        let (mean, sd) = mean_sd(&col);
        stats.push(ColumnStats {
            name: name.clone(),
            mean,
            sd,
        });
    }
    if stats.is_empty() {
        return Err(SurvError::NoInformativeFeatures);
    }
    Normalization { stats, dropped }.apply(cohort)
}

/// Parameters of the synthetic Weibull–Cox generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub true_coefficients: Vec<f64>,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    pub censoring_rate_target: f64,
    #[serde(default)]
    pub nonlinear: bool,
    pub seed: u64,
    /// Optional column names; defaults to `x1..xd`.
    #[serde(default)]
    pub feature_names: Option<Vec<String>>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(SurvError::Parameter("synthetic cohort needs n >= 2".into()));
        }
        if self.true_coefficients.is_empty() {
            return Err(SurvError::Parameter("need at least one coefficient".into()));
        }
        if !(self.weibull_shape > 0.0 && self.weibull_scale > 0.0) {
            return Err(SurvError::Parameter("Weibull shape and scale must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.censoring_rate_target) {
            return Err(SurvError::Parameter("censoring_rate_target must lie in [0, 1)".into()));
        }
        if let Some(names) = &self.feature_names {
            if names.len() != self.true_coefficients.len() {
                return Err(SurvError::Shape(
                    "feature_names length differs from true_coefficients".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.feature_names
            .clone()
            .unwrap_or_else(|| (1..=self.true_coefficients.len()).map(|j| format!("x{j}")).collect())
    }
}

/// Fixed nonlinear contribution used when `nonlinear` is set: an interaction
/// between the first two features plus a centred quadratic in the first.
pub fn nonlinear_term(x: &[f64]) -> f64 {
    let quad = 0.5 * (x[0] * x[0] - 1.0);
    if x.len() >= 2 {
        x[0] * x[1] + quad
    } else {
        quad
    }
}

/// Linear predictor of the generator for one feature vector.
pub fn true_linear_predictor(spec: &SyntheticSpec, x: &[f64]) -> f64 {
    let lin: f64 = spec.true_coefficients.iter().zip(x).map(|(b, v)| b * v).sum();
    if spec.nonlinear {
        lin + nonlinear_term(x)
    } else {
        lin
    }
}

/// True survival probability `S(t | eta)` of the generator.
pub fn true_survival(spec: &SyntheticSpec, eta: f64, t: f64) -> f64 {
    (-(t / spec.weibull_scale).powf(spec.weibull_shape) * eta.exp()).exp()
}

const CALIBRATION_TOLERANCE: f64 = 0.05;
const BISECTION_STEPS: usize = 100;

/// Draws a Weibull–Cox cohort with independent exponential censoring.
///
/// Event times come from inverse-transform sampling of
/// `S(t|x) = exp(-(t/scale)^shape * exp(eta))`, so the hazard is exactly
/// `h0(t) exp(eta)`. The exponential censoring rate is calibrated by bisection
/// on the realized censored fraction. Returns the cohort and each subject's
/// true `eta`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Cohort, Vec<f64>)> {
    spec.validate()?;
    let d = spec.true_coefficients.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut xs = Vec::with_capacity(spec.n);
    let mut eta = Vec::with_capacity(spec.n);
    let mut event_times = Vec::with_capacity(spec.n);
    let mut censor_base = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let e = true_linear_predictor(spec, &x);
        let u: f64 = rng.sample(Open01);
        let v: f64 = rng.sample(Open01);
        let t = spec.weibull_scale * (-u.ln() / e.exp()).powf(1.0 / spec.weibull_shape);
        xs.push(x);
        eta.push(e);
        event_times.push(t);
        censor_base.push(-v.ln());
    }

    // censored iff censor_base / rate < event time
    let censored_fraction = |rate: f64| {
        censor_base
            .iter()
            .zip(&event_times)
            .filter(|(&c, &t)| c < rate * t)
            .count() as f64
            / spec.n as f64
    };
    let target = spec.censoring_rate_target;
    let rate = if target == 0.0 {
        0.0
    } else {
        let mut sorted = event_times.clone();
        sorted.sort_by(f64::total_cmp);
        let mut lo = 0.0;
        let mut hi = 1.0 / sorted[sorted.len() / 2];
        let mut expansions = 0;
        while censored_fraction(hi) < target && expansions < BISECTION_STEPS {
            lo = hi;
            hi *= 2.0;
            expansions += 1;
        }
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if censored_fraction(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (f_lo, f_hi) = (censored_fraction(lo), censored_fraction(hi));
        let (rate, achieved) = if (f_lo - target).abs() <= (f_hi - target).abs() {
            (lo, f_lo)
        } else {
            (hi, f_hi)
        };
        if (achieved - target).abs() > CALIBRATION_TOLERANCE {
            return Err(SurvError::Calibration { target, achieved });
        }
        rate
    };

    let records = (0..spec.n)
        .map(|i| {
            let censor_time = if rate > 0.0 {
                censor_base[i] / rate
            } else {
                f64::INFINITY
            };
            let t = event_times[i];
            SurvivalRecord {
                id: format!("s{:04}", i + 1),
                time: t.min(censor_time),
                event: t <= censor_time,
                features: xs[i].clone(),
            }
        })
        .collect();
    Ok((Cohort::new(spec.names(), records)?, eta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(beta: Vec<f64>, n: usize, cens: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n,
            true_coefficients: beta,
            weibull_shape: 1.5,
            weibull_scale: 20.0,
            censoring_rate_target: cens,
            nonlinear: false,
            seed,
            feature_names: None,
        }
    }

    #[test]
    fn loads_single_row() {
        let c = read_cohort(
            "id,t,e,x\np1,12.0,1,0.5\n".as_bytes(),
            Some(&CohortSchema {
                id: Some("id".into()),
                time: "t".into(),
                event: "e".into(),
                features: vec!["x".into()],
            }),
        )
        .unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.records[0].time, 12.0);
        assert!(c.records[0].event);
        assert_eq!(c.records[0].features, vec![0.5]);
    }

    #[test]
    fn bad_event_value_names_row_and_column() {
        let schema = CohortSchema {
            id: Some("id".into()),
            time: "t".into(),
            event: "e".into(),
            features: vec!["x".into()],
        };
        let err = read_cohort("id,t,e,x\np1,12.0,2,0.5\n".as_bytes(), Some(&schema)).unwrap_err();
        match err {
            SurvError::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "e");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors() {
        let bad_time = "id,time,event,x\na,0,1,1\n";
        assert!(matches!(
            read_cohort(bad_time.as_bytes(), None),
            Err(SurvError::Parse { .. })
        ));
        let missing = "id,time,event,x\na,1,1,\n";
        assert!(matches!(
            read_cohort(missing.as_bytes(), None),
            Err(SurvError::Parse { .. })
        ));
        let text = "id,time,event,x\na,1,1,abc\n";
        assert!(matches!(
            read_cohort(text.as_bytes(), None),
            Err(SurvError::Parse { .. })
        ));
        assert!(matches!(read_cohort("".as_bytes(), None), Err(SurvError::EmptyCohort)));
        assert!(matches!(
            read_cohort("id,time,event,x\n".as_bytes(), None),
            Err(SurvError::EmptyCohort)
        ));
        assert!(matches!(
            read_cohort("id,time,x\na,1,1\n".as_bytes(), None),
            Err(SurvError::Schema(_))
        ));
    }

    #[test]
    fn zscore_hand_case() {
        let records = (0..3)
            .map(|i| SurvivalRecord {
                id: i.to_string(),
                time: 1.0 + i as f64,
                event: true,
                features: vec![1.0 + i as f64, 5.0],
            })
            .collect();
        let c = Cohort::new(vec!["a".into(), "k".into()], records).unwrap();
        let z = zscore_normalize(&c).unwrap();
        assert_eq!(z.feature_names, vec!["a".to_string()]);
        assert_eq!(z.column(0), vec![-1.0, 0.0, 1.0]);
        let norm = z.normalization.as_ref().unwrap();
        assert_eq!(norm.stats[0].mean, 2.0);
        assert_eq!(norm.stats[0].sd, 1.0);
        assert_eq!(norm.dropped, vec!["k".to_string()]);
    }

    #[test]
    fn zscore_all_constant_fails() {
        let records = (0..3)
            .map(|i| SurvivalRecord {
                id: i.to_string(),
                time: 1.0,
                event: true,
                features: vec![5.0],
            })
            .collect();
        let c = Cohort::new(vec!["k".into()], records).unwrap();
        assert!(matches!(zscore_normalize(&c), Err(SurvError::NoInformativeFeatures)));
    }

    #[test]
    fn generator_is_deterministic() {
        let s = spec(vec![1.0, -1.0], 200, 0.3, 11);
        let (a, ea) = generate_synthetic(&s).unwrap();
        let (b, eb) = generate_synthetic(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(ea, eb);
        let mut wa = Vec::new();
        let mut wb = Vec::new();
        write_cohort(&a, &mut wa).unwrap();
        write_cohort(&b, &mut wb).unwrap();
        assert_eq!(wa, wb);
    }

    #[test]
    fn censoring_is_calibrated() {
        for target in [0.0, 0.3, 0.6] {
            let (c, _) = generate_synthetic(&spec(vec![0.5], 1000, target, 3)).unwrap();
            let frac = c.records.iter().filter(|r| !r.event).count() as f64 / 1000.0;
            assert!((frac - target).abs() <= 0.05, "target {target} got {frac}");
        }
    }

    #[test]
    fn unreachable_censoring_target_errors() {
        // two subjects can only realize 0, 1/2 or 1 censored
        let err = generate_synthetic(&spec(vec![0.5], 2, 0.25, 1)).unwrap_err();
        assert!(matches!(err, SurvError::Calibration { .. }));
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(generate_synthetic(&spec(vec![1.0], 1, 0.1, 0)).is_err());
        let mut s = spec(vec![1.0], 10, 0.1, 0);
        s.weibull_shape = 0.0;
        assert!(generate_synthetic(&s).is_err());
    }

    #[test]
    fn spec_json_keys_match_field_names() {
        let json = r#"{"n": 10, "true_coefficients": [1.0], "weibull_shape": 1.5,
            "weibull_scale": 20.0, "censoring_rate_target": 0.2, "nonlinear": false, "seed": 5}"#;
        let s: SyntheticSpec = serde_json::from_str(json).unwrap();
        assert_eq!(s.n, 10);
        assert_eq!(s.names(), vec!["x1".to_string()]);
    }
}
