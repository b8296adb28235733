#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survkit_core::data::{generate_synthetic, Cohort, SurvivalData, SyntheticSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random censored data; integer times when `ties` so tied times occur.
pub fn random_data(r: &mut ChaCha8Rng, n: usize, d: usize, ties: bool) -> SurvivalData {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| r.random_range(-1.5..1.5)).collect())
        .collect();
    let time = (0..n)
        .map(|_| {
            if ties {
                r.random_range(1..=(n as u32 / 2).max(2)) as f64
            } else {
                r.random_range(0.1..10.0)
            }
        })
        .collect();
    let mut event: Vec<bool> = (0..n).map(|_| r.random_bool(0.7)).collect();
    event[0] = true;
    SurvivalData::from_rows(&rows, time, event).unwrap()
}

pub fn spec(n: usize, beta: &[f64], nonlinear: bool, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n,
        true_coefficients: beta.to_vec(),
        weibull_shape: 1.5,
        weibull_scale: 10.0,
        censoring_rate_target: 0.3,
        nonlinear,
        seed,
        feature_names: None,
    }
}

pub fn synthetic(n: usize, beta: &[f64], nonlinear: bool, seed: u64) -> (Cohort, Vec<f64>) {
    generate_synthetic(&spec(n, beta, nonlinear, seed)).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Product-limit estimate at every distinct event time, by direct counting.
pub fn km_oracle(times: &[f64], events: &[bool]) -> Vec<(f64, f64)> {
    let mut ev: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    ev.sort_by(f64::total_cmp);
    ev.dedup();
    let mut s = 1.0;
    ev.into_iter()
        .map(|t| {
            let at_risk = times.iter().filter(|&&u| u >= t).count() as f64;
            let d = times.iter().zip(events).filter(|(&u, &e)| e && u == t).count() as f64;
            s *= 1.0 - d / at_risk;
            (t, s)
        })
        .collect()
}

pub fn na_oracle(times: &[f64], events: &[bool]) -> Vec<(f64, f64)> {
    let mut ev: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    ev.sort_by(f64::total_cmp);
    ev.dedup();
    let mut h = 0.0;
    ev.into_iter()
        .map(|t| {
            let at_risk = times.iter().filter(|&&u| u >= t).count() as f64;
            let d = times.iter().zip(events).filter(|(&u, &e)| e && u == t).count() as f64;
            h += d / at_risk;
            (t, h)
        })
        .collect()
}

/// (concordant, discordant, tied) over comparable pairs by enumeration.
pub fn concordance_oracle(times: &[f64], events: &[bool], scores: &[f64]) -> (u64, u64, u64) {
    let (mut c, mut d, mut t) = (0, 0, 0);
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
    (c, d, t)
}

/// Shapley values as the average marginal contribution over all `d!`
/// feature orderings.
pub fn shapley_permutation_oracle(f: &dyn Fn(&[f64]) -> f64, x: &[f64], b: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut phi = vec![0.0; d];
    let mut perm: Vec<usize> = (0..d).collect();
    let mut count = 0usize;
    loop {
        let mut z = b.to_vec();
        let mut prev = f(&z);
        for &j in &perm {
            z[j] = x[j];
            let cur = f(&z);
            phi[j] += cur - prev;
            prev = cur;
        }
        count += 1;
        if !next_permutation(&mut perm) {
            break;
        }
    }
    phi.into_iter().map(|p| p / count as f64).collect()
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Central finite difference of `f` at `x` along coordinate `k`.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut up = x.to_vec();
    up[k] += h;
    let mut dn = x.to_vec();
    dn[k] -= h;
    (f(&up) - f(&dn)) / (2.0 * h)
}
