//! Time-aware risk encoder: sinusoidal positional encoding, single-head
//! self-attention over follow-up snapshots and a tanh MLP head, trained on
//! the Cox partial likelihood of the per-subject scores.
//!
//! Row-vector convention: `Q = X Wq`, so `q_c = sum_r x_r Wq[r][c]`. Matrices
//! are stored row-major in flat vectors.

use nalgebra::DMatrix;
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::boosting::{cox_gradients, cox_loss};
use crate::data::{generate_synthetic, SyntheticSpec};
use crate::error::{Result, SurvError};

/// Sinusoidal encoding, `T x d`, rows indexed from position 0.
pub fn sinusoidal_pe(t: usize, d: usize) -> Result<DMatrix<f64>> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(SurvError::Parameter(format!("encoding width must be even, got {d}")));
    }
    if t == 0 {
        return Err(SurvError::Parameter("encoding needs at least one position".into()));
    }
    Ok(DMatrix::from_fn(t, d, |pos, col| {
        let k = col / 2;
        let angle = pos as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
        if col % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Follow-up index, starting at 1.
    pub index: usize,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSequence {
    pub id: String,
    pub snapshots: Vec<Snapshot>,
    pub time: f64,
    pub event: bool,
}

impl SnapshotSequence {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.snapshots.first() else {
            return Err(SurvError::Parameter(format!("sequence {} has no snapshots", self.id)));
        };
        let p = first.features.len();
        let mut prev = 0;
        for s in &self.snapshots {
            if s.features.len() != p {
                return Err(SurvError::Shape(format!("sequence {} mixes snapshot widths", self.id)));
            }
            if s.index <= prev {
                return Err(SurvError::Parameter(format!(
                    "sequence {} snapshot indices must start at 1 and increase",
                    self.id
                )));
            }
            prev = s.index;
        }
        if !(self.time > 0.0 && self.time.is_finite()) {
            return Err(SurvError::Parameter(format!("sequence {} has invalid time", self.id)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Copy keeping only the first `k` snapshots.
    pub fn truncated(&self, k: usize) -> SnapshotSequence {
        SnapshotSequence {
            snapshots: self.snapshots[..k.min(self.len())].to_vec(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalParams {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    /// `hidden x d`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl TemporalParams {
    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            wq: vec![0.0; d * d],
            wk: vec![0.0; d * d],
            wv: vec![0.0; d * d],
            w1: vec![0.0; h * d],
            b1: vec![0.0; h],
            w2: vec![0.0; h],
            b2: 0.0,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for part in [&self.wq, &self.wk, &self.wv, &self.w1, &self.b1, &self.w2] {
            v.extend_from_slice(part);
        }
        v.push(self.b2);
        v
    }

    pub fn from_flat(flat: &[f64], d: usize, h: usize) -> Result<Self> {
        let expected = 3 * d * d + h * d + 2 * h + 1;
        if flat.len() != expected {
            return Err(SurvError::Shape(format!(
                "expected {expected} parameters, got {}",
                flat.len()
            )));
        }
        let mut at = 0;
        let mut take = |k: usize| {
            let s = flat[at..at + k].to_vec();
            at += k;
            s
        };
        Ok(Self {
            wq: take(d * d),
            wk: take(d * d),
            wv: take(d * d),
            w1: take(h * d),
            b1: take(h),
            w2: take(h),
            b2: flat[expected - 1],
        })
    }

    fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalModel {
    pub pe_dim: usize,
    pub hidden: usize,
    pub use_pe: bool,
    pub params: TemporalParams,
    pub training_trace: Vec<f64>,
}

/// Sum of values in sorted order: the result does not depend on the order
/// in which the terms are supplied.
fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

fn row_times(x: &[f64], w: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|c| (0..d).map(|r| x[r] * w[r * d + c]).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// Row-stochastic `T x T` weights.
    pub attention: DMatrix<f64>,
    /// Contextual embeddings, `T x d`.
    pub z: DMatrix<f64>,
}

impl TemporalModel {
    /// Model with every parameter zero.
    pub fn zeros(pe_dim: usize, hidden: usize, use_pe: bool) -> Result<Self> {
        if pe_dim == 0 || !pe_dim.is_multiple_of(2) {
            return Err(SurvError::Parameter(format!("pe_dim must be even, got {pe_dim}")));
        }
        Ok(Self {
            pe_dim,
            hidden,
            use_pe,
            params: TemporalParams::zeros(pe_dim, hidden),
            training_trace: Vec::new(),
        })
    }

    /// Seeded uniform(-0.1, 0.1) initialization of every parameter.
    pub fn random(pe_dim: usize, hidden: usize, use_pe: bool, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(pe_dim, hidden, use_pe)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new(-0.1, 0.1).expect("valid range");
        let flat: Vec<f64> = (0..m.params.to_flat().len()).map(|_| dist.sample(&mut rng)).collect();
        m.params = TemporalParams::from_flat(&flat, pe_dim, hidden)?;
        Ok(m)
    }

    /// Snapshot features zero-padded to `pe_dim`, plus the positional row
    /// `index - 1` when encoding is enabled.
    pub fn embed(&self, seq: &SnapshotSequence) -> Result<DMatrix<f64>> {
        seq.validate()?;
        let d = self.pe_dim;
        let p = seq.snapshots[0].features.len();
        if p > d {
            return Err(SurvError::Shape(format!(
                "snapshot width {p} exceeds encoding width {d}"
            )));
        }
        let pe = if self.use_pe {
            Some(sinusoidal_pe(seq.snapshots.last().unwrap().index, d)?)
        } else {
            None
        };
        let mut x = DMatrix::zeros(seq.len(), d);
        for (t, s) in seq.snapshots.iter().enumerate() {
            for c in 0..d {
                let v = if c < p { s.features[c] } else { 0.0 };
                x[(t, c)] = v + pe.as_ref().map_or(0.0, |pe| pe[(s.index - 1, c)]);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SurvError::Numeric("non-finite snapshot value".into()));
        }
        Ok(x)
    }

    /// Scaled dot-product self-attention over the rows of `inputs`.
    pub fn self_attention(&self, inputs: &DMatrix<f64>) -> Result<AttentionOutput> {
        let d = self.pe_dim;
        if inputs.ncols() != d || inputs.nrows() == 0 {
            return Err(SurvError::Shape(format!(
                "attention input must be T x {d}, got {} x {}",
                inputs.nrows(),
                inputs.ncols()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(SurvError::Numeric("non-finite attention input".into()));
        }
        let rows: Vec<Vec<f64>> = (0..inputs.nrows())
            .map(|t| inputs.row(t).iter().copied().collect())
            .collect();
        let p = &self.params;
        let q: Vec<Vec<f64>> = rows.iter().map(|x| row_times(x, &p.wq, d)).collect();
        let k: Vec<Vec<f64>> = rows.iter().map(|x| row_times(x, &p.wk, d)).collect();
        let v: Vec<Vec<f64>> = rows.iter().map(|x| row_times(x, &p.wv, d)).collect();
        let t_len = rows.len();
        let mut attention = DMatrix::zeros(t_len, t_len);
        let mut z = DMatrix::zeros(t_len, d);
        for t in 0..t_len {
            let a = softmax_row(&q[t], &k, d);
            for c in 0..d {
                z[(t, c)] = ordered_sum((0..t_len).map(|j| a[j] * v[j][c]).collect());
            }
            for (j, aj) in a.into_iter().enumerate() {
                attention[(t, j)] = aj;
            }
        }
        Ok(AttentionOutput { attention, z })
    }

    /// `MLP(z_last)` for one sequence.
    pub fn temporal_risk(&self, seq: &SnapshotSequence) -> Result<f64> {
        let x = self.embed(seq)?;
        Ok(self.forward_last(&x).f)
    }

    fn forward_last(&self, x: &DMatrix<f64>) -> ForwardCache {
        let d = self.pe_dim;
        let p = &self.params;
        let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|t| x.row(t).iter().copied().collect()).collect();
        let last = rows.len() - 1;
        let q = row_times(&rows[last], &p.wq, d);
        let k: Vec<Vec<f64>> = rows.iter().map(|r| row_times(r, &p.wk, d)).collect();
        let v: Vec<Vec<f64>> = rows.iter().map(|r| row_times(r, &p.wv, d)).collect();
        let a = softmax_row(&q, &k, d);
        let z: Vec<f64> = (0..d)
            .map(|c| ordered_sum((0..rows.len()).map(|j| a[j] * v[j][c]).collect()))
            .collect();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|u| (dot(&p.w1[u * d..(u + 1) * d], &z) + p.b1[u]).tanh())
            .collect();
        let f = dot(&p.w2, &hidden) + p.b2;
        ForwardCache {
            rows,
            q,
            k,
            v,
            a,
            z,
            hidden,
            f,
        }
    }

    /// Accumulates `df * d f / d params` for one sequence into `grad`.
    fn backward(&self, cache: &ForwardCache, df: f64, grad: &mut TemporalParams) {
        let d = self.pe_dim;
        let p = &self.params;
        let scale = 1.0 / (d as f64).sqrt();
        grad.b2 += df;
        let mut dz = vec![0.0; d];
        for u in 0..self.hidden {
            grad.w2[u] += df * cache.hidden[u];
            let du = df * p.w2[u] * (1.0 - cache.hidden[u] * cache.hidden[u]);
            grad.b1[u] += du;
            for c in 0..d {
                grad.w1[u * d + c] += du * cache.z[c];
                dz[c] += du * p.w1[u * d + c];
            }
        }
        let t_len = cache.rows.len();
        let da: Vec<f64> = (0..t_len).map(|j| dot(&dz, &cache.v[j])).collect();
        let mean_da: f64 = (0..t_len).map(|j| cache.a[j] * da[j]).sum();
        let mut dq = vec![0.0; d];
        for j in 0..t_len {
            let x = &cache.rows[j];
            let ds = cache.a[j] * (da[j] - mean_da) * scale;
            for c in 0..d {
                dq[c] += ds * cache.k[j][c];
            }
            for r in 0..d {
                for c in 0..d {
                    grad.wv[r * d + c] += x[r] * cache.a[j] * dz[c];
                    grad.wk[r * d + c] += x[r] * ds * cache.q[c];
                }
            }
        }
        let x_last = &cache.rows[t_len - 1];
        for r in 0..d {
            for c in 0..d {
                grad.wq[r * d + c] += x_last[r] * dq[c];
            }
        }
    }
}

struct ForwardCache {
    rows: Vec<Vec<f64>>,
    q: Vec<f64>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    a: Vec<f64>,
    z: Vec<f64>,
    hidden: Vec<f64>,
    f: f64,
}

fn softmax_row(q: &[f64], keys: &[Vec<f64>], d: usize) -> Vec<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    let logits: Vec<f64> = keys.iter().map(|k| dot(q, k) * scale).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total = ordered_sum(e.clone());
    e.into_iter().map(|v| v / total).collect()
}

/// Mean negative partial log-likelihood per event of the temporal scores.
pub fn temporal_loss(model: &TemporalModel, sequences: &[SnapshotSequence]) -> Result<f64> {
    let scores = sequences
        .iter()
        .map(|s| model.temporal_risk(s))
        .collect::<Result<Vec<_>>>()?;
    let (time, event) = outcomes(sequences);
    let n_events = event.iter().filter(|&&e| e).count().max(1) as f64;
    Ok(cox_loss(&scores, &time, &event)? / n_events)
}

fn outcomes(sequences: &[SnapshotSequence]) -> (Vec<f64>, Vec<bool>) {
    (
        sequences.iter().map(|s| s.time).collect(),
        sequences.iter().map(|s| s.event).collect(),
    )
}

/// Loss and its analytic gradient with respect to every parameter.
pub fn loss_and_gradient(model: &TemporalModel, sequences: &[SnapshotSequence]) -> Result<(f64, TemporalParams)> {
    let caches = sequences
        .iter()
        .map(|s| Ok(model.forward_last(&model.embed(s)?)))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = caches.iter().map(|c| c.f).collect();
    let (time, event) = outcomes(sequences);
    let n_events = event.iter().filter(|&&e| e).count().max(1) as f64;
    let loss = cox_loss(&scores, &time, &event)? / n_events;
    let (g, _) = cox_gradients(&scores, &time, &event)?;
    let mut grad = TemporalParams::zeros(model.pe_dim, model.hidden);
    for (cache, gi) in caches.iter().zip(g) {
        model.backward(cache, gi / n_events, &mut grad);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub pe_dim: usize,
    pub hidden: usize,
    pub use_pe: bool,
}

impl Default for TemporalOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 200,
            seed: 0,
            pe_dim: 8,
            hidden: 8,
            use_pe: true,
        }
    }
}

const DIVERGENCE_EPOCHS: usize = 10;

/// Full-batch gradient descent on the per-event Cox loss.
///
/// The trace holds the loss before each update followed by the final loss.
pub fn train_temporal(sequences: &[SnapshotSequence], options: &TemporalOptions) -> Result<TemporalModel> {
    if sequences.len() < 2 {
        return Err(SurvError::Parameter(
            "temporal training needs at least 2 subjects".into(),
        ));
    }
    if !sequences.iter().any(|s| s.event) {
        return Err(SurvError::Training {
            message: "temporal training needs at least one event".into(),
            trace: Vec::new(),
        });
    }
    // canonical subject order keeps full-batch sums independent of input order
    let mut ordered: Vec<SnapshotSequence> = sequences.to_vec();
    ordered.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.event.cmp(&b.event))
            .then_with(|| a.id.cmp(&b.id))
    });
    let mut model = TemporalModel::random(options.pe_dim, options.hidden, options.use_pe, options.seed)?;
    let mut trace = Vec::with_capacity(options.epochs + 1);
    let mut rising = 0;
    for _ in 0..options.epochs {
        let (loss, grad) = loss_and_gradient(&model, &ordered)?;
        if let Some(&prev) = trace.last() {
            rising = if loss > prev { rising + 1 } else { 0 };
        }
        trace.push(loss);
        if rising >= DIVERGENCE_EPOCHS || !loss.is_finite() {
            return Err(SurvError::Training {
                message: "temporal training diverged".into(),
                trace,
            });
        }
        let flat: Vec<f64> = model
            .params
            .to_flat()
            .iter()
            .zip(grad.to_flat())
            .map(|(p, g)| p - options.learning_rate * g)
            .collect();
        model.params = TemporalParams::from_flat(&flat, model.pe_dim, model.hidden)?;
        if !model.params.is_finite() {
            return Err(SurvError::Training {
                message: "non-finite parameters".into(),
                trace,
            });
        }
    }
    trace.push(temporal_loss(&model, &ordered)?);
    model.training_trace = trace;
    Ok(model)
}

/// Longitudinal extension of the synthetic generator: each subject gets
/// `1..=max_snapshots` snapshots drifting linearly with its true risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalSpec {
    pub base: SyntheticSpec,
    pub max_snapshots: usize,
    /// Per-snapshot shift of every feature, multiplied by the true risk.
    pub drift: f64,
    #[serde(default)]
    pub noise: f64,
}

pub fn generate_longitudinal(spec: &LongitudinalSpec) -> Result<(Vec<SnapshotSequence>, Vec<f64>)> {
    if spec.max_snapshots == 0 {
        return Err(SurvError::Parameter("max_snapshots must be at least 1".into()));
    }
    let (cohort, eta) = generate_synthetic(&spec.base)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.base.seed ^ 0x5eed_7e3a_u64);
    let seqs = cohort
        .records
        .iter()
        .zip(&eta)
        .map(|(r, &e)| {
            let t_len = rng.random_range(1..=spec.max_snapshots);
            let snapshots = (1..=t_len)
                .map(|index| Snapshot {
                    index,
                    features: r
                        .features
                        .iter()
                        .map(|&x| {
                            let noise: f64 = rng.sample(StandardNormal);
                            x + spec.drift * (index - 1) as f64 * e + spec.noise * noise
                        })
                        .collect(),
                })
                .collect();
            SnapshotSequence {
                id: r.id.clone(),
                snapshots,
                time: r.time,
                event: r.event,
            }
        })
        .collect();
    Ok((seqs, eta))
}

/// Reads `id,snapshot_index,time,event,<features...>` rows into sequences
/// (in order of first appearance of each id).
pub fn read_longitudinal<R: Read>(reader: R) -> Result<(Vec<String>, Vec<SnapshotSequence>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let expected = ["id", "snapshot_index", "time", "event"];
    if headers.len() < 5 || headers[..4] != expected {
        return Err(SurvError::Schema(
            "longitudinal CSV must start with id,snapshot_index,time,event and have features".into(),
        ));
    }
    let feature_names = headers[4..].to_vec();
    let mut seqs: Vec<SnapshotSequence> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let num = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("").trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| SurvError::Parse {
                    row,
                    column: headers[c].clone(),
                    message: format!("not a number: \"{raw}\""),
                })
        };
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let index = num(1)?;
        if index < 1.0 || index.fract() != 0.0 {
            return Err(SurvError::Parse {
                row,
                column: "snapshot_index".into(),
                message: "snapshot index must be a positive integer".into(),
            });
        }
        let time = num(2)?;
        let ev = num(3)?;
        if ev != 0.0 && ev != 1.0 {
            return Err(SurvError::Parse {
                row,
                column: "event".into(),
                message: "event must be 0 or 1".into(),
            });
        }
        let features = (4..headers.len()).map(num).collect::<Result<Vec<_>>>()?;
        let snap = Snapshot {
            index: index as usize,
            features,
        };
        match seqs.iter_mut().find(|s| s.id == id) {
            Some(s) => {
                if s.time != time || s.event != (ev == 1.0) {
                    return Err(SurvError::Parse {
                        row,
                        column: "time".into(),
                        message: format!("outcome of {id} differs between snapshots"),
                    });
                }
                s.snapshots.push(snap);
            }
            None => seqs.push(SnapshotSequence {
                id,
                snapshots: vec![snap],
                time,
                event: ev == 1.0,
            }),
        }
    }
    if seqs.is_empty() {
        return Err(SurvError::EmptyCohort);
    }
    for s in &mut seqs {
        s.snapshots.sort_by_key(|x| x.index);
        s.validate()?;
    }
    Ok((feature_names, seqs))
}

pub fn write_longitudinal<W: Write>(feature_names: &[String], sequences: &[SnapshotSequence], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "snapshot_index".into(), "time".into(), "event".into()];
    header.extend(feature_names.iter().cloned());
    w.write_record(&header)?;
    for s in sequences {
        for snap in &s.snapshots {
            let mut row = vec![
                s.id.clone(),
                snap.index.to_string(),
                s.time.to_string(),
                u8::from(s.event).to_string(),
            ];
            row.extend(snap.features.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(values: &[[f64; 2]], time: f64, event: bool) -> SnapshotSequence {
        SnapshotSequence {
            id: format!("s{time}"),
            snapshots: values
                .iter()
                .enumerate()
                .map(|(i, v)| Snapshot {
                    index: i + 1,
                    features: v.to_vec(),
                })
                .collect(),
            time,
            event,
        }
    }

    #[test]
    fn pe_values() {
        let pe = sinusoidal_pe(3, 6).unwrap();
        for c in 0..6 {
            assert_eq!(pe[(0, c)], if c % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!((pe[(1, 0)] - 1f64.sin()).abs() < 1e-15);
        assert!(pe.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(sinusoidal_pe(3, 5).is_err());
    }

    #[test]
    fn single_step_attention_is_identity_weighting() {
        let m = TemporalModel::random(4, 3, true, 1).unwrap();
        let x = m.embed(&seq(&[[0.3, -0.2]], 5.0, true)).unwrap();
        let out = m.self_attention(&x).unwrap();
        assert_eq!(out.attention[(0, 0)], 1.0);
        let xv = row_times(&x.row(0).iter().copied().collect::<Vec<_>>(), &m.params.wv, 4);
        for c in 0..4 {
            assert!((out.z[(0, c)] - xv[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_query_key_gives_uniform_attention() {
        let mut m = TemporalModel::random(4, 3, true, 2).unwrap();
        m.params.wq = vec![0.0; 16];
        m.params.wk = vec![0.0; 16];
        let x = m
            .embed(&seq(&[[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]], 5.0, true))
            .unwrap();
        let out = m.self_attention(&x).unwrap();
        for t in 0..3 {
            for j in 0..3 {
                assert!((out.attention[(t, j)] - 1.0 / 3.0).abs() < 1e-15);
            }
            for c in 0..4 {
                assert_eq!(out.z[(t, c)], out.z[(0, c)]);
            }
        }
    }

    #[test]
    fn zero_mlp_outputs_bias() {
        let mut m = TemporalModel::random(4, 3, true, 3).unwrap();
        m.params.w1 = vec![0.0; 12];
        m.params.b1 = vec![0.0; 3];
        m.params.w2 = vec![0.0; 3];
        m.params.b2 = 0.7;
        assert_eq!(m.temporal_risk(&seq(&[[1.0, 2.0]], 1.0, true)).unwrap(), 0.7);
    }

    #[test]
    fn wide_snapshots_rejected() {
        let m = TemporalModel::random(2, 2, true, 0).unwrap();
        let s = SnapshotSequence {
            id: "a".into(),
            snapshots: vec![Snapshot {
                index: 1,
                features: vec![1.0, 2.0, 3.0],
            }],
            time: 1.0,
            event: true,
        };
        assert!(matches!(m.temporal_risk(&s), Err(SurvError::Shape(_))));
    }

    #[test]
    fn longitudinal_csv_round_trip() {
        let seqs = vec![
            seq(&[[1.0, 2.0], [1.5, 2.5]], 3.0, true),
            seq(&[[0.0, 0.0]], 4.0, false),
        ];
        let names = vec!["a".to_string(), "b".to_string()];
        let mut buf = Vec::new();
        write_longitudinal(&names, &seqs, &mut buf).unwrap();
        let (n2, s2) = read_longitudinal(buf.as_slice()).unwrap();
        assert_eq!(n2, names);
        assert_eq!(s2, seqs);
    }

    #[test]
    fn training_needs_events() {
        let seqs = vec![seq(&[[1.0, 2.0]], 3.0, false), seq(&[[0.0, 0.0]], 4.0, false)];
        assert!(train_temporal(&seqs, &TemporalOptions::default()).is_err());
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let seqs = vec![
            seq(&[[0.4, -1.2], [0.9, 0.1], [1.3, 0.5]], 2.0, true),
            seq(&[[-0.7, 0.3]], 3.5, false),
            seq(&[[1.1, 0.8], [0.2, -0.4]], 1.0, true),
            seq(&[[0.0, 2.0], [-1.0, 1.0], [0.3, 0.3]], 5.0, true),
        ];
        let mut m = TemporalModel::random(4, 3, true, 11).unwrap();
        // larger weights make every term of the gradient visible
        let flat: Vec<f64> = m.params.to_flat().iter().map(|v| v * 8.0).collect();
        m.params = TemporalParams::from_flat(&flat, 4, 3).unwrap();
        let (_, grad) = loss_and_gradient(&m, &seqs).unwrap();
        let g = grad.to_flat();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..flat.len() {
            let mut probe = m.clone();
            let mut up = flat.clone();
            up[i] += h;
            probe.params = TemporalParams::from_flat(&up, 4, 3).unwrap();
            let lu = temporal_loss(&probe, &seqs).unwrap();
            let mut dn = flat.clone();
            dn[i] -= h;
            probe.params = TemporalParams::from_flat(&dn, 4, 3).unwrap();
            let ld = temporal_loss(&probe, &seqs).unwrap();
            let numeric = (lu - ld) / (2.0 * h);
            let rel = (g[i] - numeric).abs() / g[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn training_reduces_loss_and_ignores_input_order() {
        let spec = LongitudinalSpec {
            base: SyntheticSpec {
                n: 40,
                true_coefficients: vec![0.8, -0.6],
                weibull_shape: 1.5,
                weibull_scale: 10.0,
                censoring_rate_target: 0.3,
                nonlinear: false,
                seed: 5,
                feature_names: None,
            },
            max_snapshots: 3,
            drift: 0.3,
            noise: 0.1,
        };
        let (seqs, _) = generate_longitudinal(&spec).unwrap();
        let opts = TemporalOptions {
            epochs: 50,
            pe_dim: 4,
            hidden: 4,
            ..TemporalOptions::default()
        };
        let a = train_temporal(&seqs, &opts).unwrap();
        assert!(a.training_trace[50] < a.training_trace[0]);
        let mut rev = seqs.clone();
        rev.reverse();
        let b = train_temporal(&rev, &opts).unwrap();
        assert_eq!(a, b);
    }
}
