mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::*;
use survkit_core::boosting::{fit_boosted, BoostMode, BoostParams};
use survkit_core::coxph::{fit_cox, partial_loglik, CoxOptions, Ties};
use survkit_core::data::{read_cohort, write_cohort, zscore_normalize, Cohort, SurvivalData, SurvivalRecord};
use survkit_core::explain::exact_shapley;
use survkit_core::metrics::{brier, c_index, censoring_survival, net_benefit};
use survkit_core::model::FnModel;
use survkit_core::nonparametric::{kaplan_meier, log_rank, nelson_aalen};
use survkit_core::radiomics::{extract_features, texture_matrices, RegionMask, VoxelGrid, DIRECTIONS_13};
use survkit_core::rsf::{fit_rsf, ForestParams};
use survkit_core::temporal::{sinusoidal_pe, Snapshot, SnapshotSequence, TemporalModel};

fn outcomes(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1..=max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(1u32..40, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

fn cohort_from(rows: &[Vec<f64>], time: &[f64], event: &[bool]) -> Cohort {
    let d = rows.first().map_or(0, Vec::len);
    let records = rows
        .iter()
        .zip(time)
        .zip(event)
        .enumerate()
        .map(|(i, ((x, &t), &e))| SurvivalRecord {
            id: format!("p{i:03}"),
            time: t,
            event: e,
            features: x.clone(),
        })
        .collect();
    Cohort::new((0..d).map(|j| format!("f{j}")).collect(), records).unwrap()
}

fn grid_and_mask(seed: u64) -> (VoxelGrid, RegionMask) {
    let mut r = rng(seed);
    let dims = [r.random_range(2..6), r.random_range(2..6), r.random_range(1..5)];
    let n = dims.iter().product();
    let values = (0..n).map(|_| r.random_range(0..20) as f64).collect();
    let mut occ: Vec<bool> = (0..n).map(|_| r.random_bool(0.7)).collect();
    occ[0] = true;
    (
        VoxelGrid::new(dims, [1.0, 1.5, 2.0], values).unwrap(),
        RegionMask::new(dims, occ).unwrap(),
    )
}

const TEXTURE: [&str; 3] = ["glcm_entropy", "glrlm_short_run_emphasis", "glszm_zone_variance"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cohort_csv_round_trip(seed in any::<u64>(), n in 1usize..30, d in 1usize..5) {
        let mut r = rng(seed);
        let data = random_data(&mut r, n, d, false);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| data.row(i)).collect();
        let cohort = cohort_from(&rows, &data.time, &data.event);
        let mut buf = Vec::new();
        write_cohort(&cohort, &mut buf).unwrap();
        let back = read_cohort(buf.as_slice(), None).unwrap();
        prop_assert_eq!(back.records, cohort.records);
        prop_assert_eq!(back.feature_names, cohort.feature_names);
    }

    #[test]
    fn normalization_uses_training_statistics(seed in any::<u64>()) {
        let mut r = rng(seed);
        let data = random_data(&mut r, 40, 3, false);
        let rows: Vec<Vec<f64>> = (0..40).map(|i| data.row(i)).collect();
        let cohort = cohort_from(&rows, &data.time, &data.event);
        let train = cohort.subset(&(0..30).collect::<Vec<_>>()).unwrap();
        let test = cohort.subset(&(30..40).collect::<Vec<_>>()).unwrap();
        let z = zscore_normalize(&train).unwrap();
        for j in 0..3 {
            let col = z.column(j);
            let mean = col.iter().sum::<f64>() / 30.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 29.0;
            prop_assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
        let norm = z.normalization.as_ref().unwrap();
        let applied = norm.apply(&test).unwrap();
        for (rec, raw) in applied.records.iter().zip(&test.records) {
            for (j, s) in norm.stats.iter().enumerate() {
                prop_assert_eq!(rec.features[j], (raw.features[j] - s.mean) / s.sd);
            }
        }
    }

    #[test]
    fn texture_invariant_to_shift_and_scale(seed in any::<u64>(), a in 0.1f64..10.0, b in -100.0f64..100.0) {
        let (grid, mask) = grid_and_mask(seed);
        let moved = VoxelGrid::new(grid.dims, grid.spacing, grid.intensities.iter().map(|v| a * v + b).collect()).unwrap();
        let f0 = extract_features(&grid, &mask, 8).unwrap();
        let f1 = extract_features(&moved, &mask, 8).unwrap();
        for k in TEXTURE {
            prop_assert!((f0[k] - f1[k]).abs() <= 1e-12, "{k}: {} vs {}", f0[k], f1[k]);
        }
    }

    #[test]
    fn features_invariant_to_zero_padding(seed in any::<u64>()) {
        let (grid, mask) = grid_and_mask(seed);
        let [nx, ny, nz] = grid.dims;
        let big = [nx + 2, ny + 2, nz + 2];
        let mut vals = vec![0.0; big.iter().product()];
        let mut occ = vec![false; vals.len()];
        let pad = VoxelGrid::new(big, grid.spacing, vals.clone()).unwrap();
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let (src, dst) = (grid.index(x, y, z), pad.index(x + 1, y + 1, z + 1));
                    vals[dst] = grid.intensities[src];
                    occ[dst] = mask.occupied[src];
                }
            }
        }
        let pad = VoxelGrid::new(big, grid.spacing, vals).unwrap();
        let pmask = RegionMask::new(big, occ).unwrap();
        let f0 = extract_features(&grid, &mask, 8).unwrap();
        let f1 = extract_features(&pad, &pmask, 8).unwrap();
        for (k, v) in &f0 {
            prop_assert!((v - f1[k]).abs() <= 1e-9 * v.abs().max(1.0), "{k}: {v} vs {}", f1[k]);
        }
    }

    #[test]
    fn glcm_is_symmetric_and_normalized(seed in any::<u64>()) {
        let (grid, mask) = grid_and_mask(seed);
        let m = texture_matrices(&grid, &mask, 8, &DIRECTIONS_13).unwrap();
        let total: f64 = m.glcm.iter().flatten().sum();
        prop_assert!(total == 0.0 || (total - 1.0).abs() < 1e-12);
        for i in 0..m.levels {
            for j in 0..m.levels {
                prop_assert_eq!(m.glcm[i][j], m.glcm[j][i]);
            }
        }
    }

    #[test]
    fn km_and_na_ranges((t, e) in outcomes(40)) {
        let km = kaplan_meier(&t, &e).unwrap();
        let na = nelson_aalen(&t, &e).unwrap();
        prop_assert!(km.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(km.is_nonincreasing());
        prop_assert!(na.values().iter().all(|&v| v >= 0.0));
        prop_assert!(na.is_nondecreasing());
        for (&k, &h) in na.knots().iter().zip(na.values()) {
            prop_assert!((-h).exp() >= km.eval(k) - 1e-12);
        }
    }

    #[test]
    fn km_without_censoring_is_empirical(t in prop::collection::vec(1u32..30, 1..40)) {
        let t: Vec<f64> = t.into_iter().map(f64::from).collect();
        let km = kaplan_meier(&t, &vec![true; t.len()]).unwrap();
        for &k in km.knots() {
            let frac = t.iter().filter(|&&u| u > k).count() as f64 / t.len() as f64;
            prop_assert!((km.eval(k) - frac).abs() < 1e-12);
        }
    }

    #[test]
    fn log_rank_invariant_to_monotone_time_map((ta, ea) in outcomes(25), (tb, eb) in outcomes(25)) {
        prop_assume!(ea.iter().chain(&eb).any(|&e| e));
        let g = |t: &[f64]| -> Vec<f64> { t.iter().map(|v| v.powi(3) + 2.0 * v).collect() };
        let a = log_rank((&ta, &ea), (&tb, &eb)).unwrap();
        let b = log_rank((&g(&ta), &ea), (&g(&tb), &eb)).unwrap();
        prop_assert_eq!(a.chi_square, b.chi_square);
    }

    #[test]
    fn cox_invariant_to_column_shift(seed in any::<u64>(), shift in -5.0f64..5.0) {
        let mut r = rng(seed);
        let data = random_data(&mut r, 25, 3, true);
        let beta: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut moved = data.clone();
        moved.x.column_mut(1).add_scalar_mut(shift);
        for ties in [Ties::Breslow, Ties::Efron] {
            let a = partial_loglik(&beta, &data, ties).unwrap();
            let b = partial_loglik(&beta, &moved, ties).unwrap();
            prop_assert!(rel_err(a.value, b.value) < 1e-9);
            for k in 0..3 {
                prop_assert!((a.gradient[k] - b.gradient[k]).abs() < 1e-8 * a.gradient.amax().max(1.0));
            }
        }
    }

    #[test]
    fn breslow_equals_efron_without_ties(seed in any::<u64>()) {
        let mut r = rng(seed);
        let data = random_data(&mut r, 30, 3, false);
        let beta: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let a = partial_loglik(&beta, &data, Ties::Breslow).unwrap();
        let b = partial_loglik(&beta, &data, Ties::Efron).unwrap();
        prop_assert!(rel_err(a.value, b.value) < 1e-12);
        prop_assert!((&a.hessian - &b.hessian).amax() < 1e-10);
    }

    #[test]
    fn hessian_negative_semidefinite(seed in any::<u64>()) {
        let mut r = rng(seed);
        let data = random_data(&mut r, 25, 4, true);
        let beta: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
        for ties in [Ties::Breslow, Ties::Efron] {
            let h = partial_loglik(&beta, &data, ties).unwrap().hessian;
            let eig = h.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&v| v <= 1e-9), "{eig:?}");
        }
    }

    #[test]
    fn cox_rescaling_is_equivariant(seed in 0u64..1000, c in 0.2f64..5.0) {
        let (cohort, _) = synthetic(200, &[0.8, -0.6], false, seed);
        let data = cohort.data();
        let mut scaled = data.clone();
        scaled.x.column_mut(0).scale_mut(c);
        let opts = CoxOptions { ridge: 0.0, ..Default::default() };
        let a = fit_cox(&data, &opts).unwrap();
        let b = fit_cox(&scaled, &opts).unwrap();
        prop_assert!((b.coefficients[0] * c - a.coefficients[0]).abs() < 1e-6);
        prop_assert!((b.coefficients[1] - a.coefficients[1]).abs() < 1e-6);
    }

    #[test]
    fn pe_bounded(t in 1usize..20, half in 1usize..8) {
        let pe = sinusoidal_pe(t, 2 * half).unwrap();
        prop_assert!(pe.iter().all(|v| v.abs() <= 1.0));
        prop_assert!((0..half).all(|i| pe[(0, 2 * i)] == 0.0 && pe[(0, 2 * i + 1)] == 1.0));
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), t in 1usize..8) {
        let mut r = rng(seed);
        let model = TemporalModel::random(6, 4, true, seed).unwrap();
        let seq = SnapshotSequence {
            id: "s".into(),
            snapshots: (1..=t).map(|index| Snapshot { index, features: (0..4).map(|_| r.random_range(-2.0..2.0)).collect() }).collect(),
            time: 5.0,
            event: true,
        };
        let att = model.self_attention(&model.embed(&seq).unwrap()).unwrap().attention;
        for i in 0..t {
            prop_assert!(att.row(i).iter().all(|&a| a > 0.0));
            prop_assert!((att.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn c_index_monotone_and_antisymmetric(seed in any::<u64>(), n in 3usize..80) {
        let mut r = rng(seed);
        let data = random_data(&mut r, n, 1, true);
        let s: Vec<f64> = (0..n).map(|_| r.random_range(0..6) as f64).collect();
        prop_assume!(concordance_oracle(&data.time, &data.event, &s) != (0, 0, 0));
        let c = c_index(&data.time, &data.event, &s).unwrap().c_index;
        let mono: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 - 1.0).collect();
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert_eq!(c, c_index(&data.time, &data.event, &mono).unwrap().c_index);
        let cn = c_index(&data.time, &data.event, &neg).unwrap().c_index;
        prop_assert!((c + cn - 1.0).abs() < 1e-12);
    }

    #[test]
    fn brier_without_censoring_is_mse(seed in any::<u64>(), t in 2.0f64..20.0) {
        let mut r = rng(seed);
        let times: Vec<f64> = (0..30).map(|_| r.random_range(0.5..30.0)).collect();
        let events = vec![true; 30];
        let s: Vec<f64> = (0..30).map(|_| r.random_range(0.0..1.0)).collect();
        let g = censoring_survival(&times, &events).unwrap();
        let b = brier(t, &s, &times, &events, &g).unwrap();
        let mse = times.iter().zip(&s).map(|(&ti, &si)| ((ti > t) as u8 as f64 - si).powi(2)).sum::<f64>() / 30.0;
        prop_assert!((b - mse).abs() < 1e-12);
    }

    #[test]
    fn net_benefit_bounds(y in prop::collection::vec(any::<bool>(), 1..60), p in 0.01f64..0.99, seed in any::<u64>()) {
        let mut r = rng(seed);
        let q: Vec<f64> = y.iter().map(|_| r.random_range(0.0..1.0)).collect();
        let prevalence = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
        let nb = net_benefit(&y, &q, p).unwrap();
        prop_assert!(nb.net_benefit <= prevalence + 1e-12);
        prop_assert_eq!(nb.treat_none_benefit, 0.0);
        let perfect: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        prop_assert!((net_benefit(&y, &perfect, p).unwrap().net_benefit - prevalence).abs() < 1e-12);
        let all = net_benefit(&y, &vec![1.0; y.len()], p).unwrap();
        prop_assert!((all.net_benefit - all.treat_all_benefit).abs() < 1e-12);
    }

    #[test]
    fn shapley_axioms_on_smooth_models(seed in any::<u64>(), d in 1usize..8) {
        let mut r = rng(seed);
        let w: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let linear = FnModel::new(d, |z: &[f64]| z.iter().zip(&w).map(|(a, c)| a * c).sum());
        let a = exact_shapley(&linear, &x, &b).unwrap();
        for j in 0..d {
            prop_assert!((a.phi[j] - w[j] * (x[j] - b[j])).abs() < 1e-12);
        }
        let inter = FnModel::new(d, |z: &[f64]| z.iter().product::<f64>().tanh() + z[0].sin());
        let a = exact_shapley(&inter, &x, &b).unwrap();
        prop_assert!(a.efficiency_gap().abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generator_event_fraction_falls_with_censoring(seed in 0u64..10_000) {
        let frac = |target: f64| {
            let mut s = spec(600, &[0.7, -0.7], false, seed);
            s.censoring_rate_target = target;
            let (c, _) = survkit_core::data::generate_synthetic(&s).unwrap();
            c.events().iter().filter(|&&e| e).count() as f64 / 600.0
        };
        prop_assert!(frac(0.1) > frac(0.3));
        prop_assert!(frac(0.3) > frac(0.6));
    }

    #[test]
    fn boosting_invariant_to_row_order(seed in any::<u64>(), mode in prop::sample::select(vec![BoostMode::Componentwise, BoostMode::Gbm, BoostMode::Xgboost])) {
        let mut r = rng(seed);
        let data = random_data(&mut r, 60, 3, false);
        let mut perm: Vec<usize> = (0..60).collect();
        perm.shuffle(&mut r);
        let shuffled: SurvivalData = data.subset(&perm);
        let params = BoostParams { rounds: 30, mode, ..Default::default() };
        let a = fit_boosted(&data, &params).unwrap();
        let b = fit_boosted(&shuffled, &params).unwrap();
        for i in 0..60 {
            let (pa, pb) = (a.predict_risk(&data.row(i)).unwrap(), b.predict_risk(&data.row(i)).unwrap());
            prop_assert!((pa - pb).abs() <= 1e-9 * pa.abs().max(1.0), "{pa} vs {pb}");
        }
    }

    #[test]
    fn forest_invariant_to_tree_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let data = random_data(&mut r, 80, 3, true);
        let forest = fit_rsf(&data, &ForestParams { n_trees: 20, seed, ..Default::default() }).unwrap();
        let mut rev = forest.clone();
        rev.trees.reverse();
        for i in 0..10 {
            let x = data.row(i);
            let (a, b) = (forest.predict_chf(&x).unwrap(), rev.predict_chf(&x).unwrap());
            prop_assert_eq!(a.knots(), b.knots());
            for (u, v) in a.values().iter().zip(b.values()) {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
            }
        }
    }
}
