use mire::effects::{ate, ite};
use mire::estimator::{run_method, EstimatorConfig, Method};
use mire::matching::{
    balance_diagnostics, mahalanobis, match_units, BalanceSpace, MatchOptions, ReducedCovariates,
};
use mire::sdr_ire::SdrBasis;
use mire::ObservationalDataset;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

fn random_groups(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let mut t: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
    t[0] = true;
    t[1] = false;
    t
}

#[test]
fn pairing_is_invariant_under_invertible_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut mismatches = 0;
    for _ in 0..20 {
        let n = 80;
        let k = rng.random_range(1..=3);
        let z = normal_matrix(&mut rng, n, k);
        let t = random_groups(&mut rng, n);
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let ds = ObservationalDataset::new(z.clone(), t, DVector::from_vec(y), names(k), None).unwrap();
        let opts = MatchOptions::default();
        let base = ReducedCovariates::from_matrix(z.clone(), SdrBasis::identity(k), Some(0.0)).unwrap();
        let reference = match_units(&base, &ds, &opts).unwrap().pair_map();
        let m = normal_matrix(&mut rng, k, k) + DMatrix::identity(k, k);
        assert!(m.determinant().abs() > 1e-3);
        let moved = ReducedCovariates::from_matrix(&z * m, SdrBasis::identity(k), Some(0.0)).unwrap();
        let pairs = match_units(&moved, &ds, &opts).unwrap().pair_map();
        mismatches += reference.iter().zip(&pairs).filter(|(a, b)| a != b).count();
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn matched_distance_is_minimal_exhaustively() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 150;
    let k = 2;
    let z = normal_matrix(&mut rng, n, k);
    let t = random_groups(&mut rng, n);
    let ds = ObservationalDataset::new(z.clone(), t.clone(), DVector::zeros(n), names(k), None).unwrap();
    let red = ReducedCovariates::from_matrix(z.clone(), SdrBasis::identity(k), None).unwrap();
    let result = match_units(&red, &ds, &MatchOptions::default()).unwrap();
    let sigma = &red.sigma_z + DMatrix::identity(k, k) * red.ridge;
    for i in 0..n {
        let m = result.matches[i].as_ref().unwrap();
        let zi = z.row(i).transpose();
        let matched = mahalanobis(&zi, &z.row(m.indices[0]).transpose(), &sigma).unwrap();
        for j in (0..n).filter(|&j| t[j] != t[i]) {
            let d = mahalanobis(&zi, &z.row(j).transpose(), &sigma).unwrap();
            assert!(matched <= d + 1e-12 * d.max(1.0), "unit {i}: {matched} > {d} (j = {j})");
        }
        assert_ne!(t[m.indices[0]], t[i]);
        assert!((m.distances[0] - matched).abs() < 1e-10 * matched.max(1.0));
    }
}

#[test]
fn factual_outcomes_pass_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 60;
    let z = normal_matrix(&mut rng, n, 3);
    let t = random_groups(&mut rng, n);
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let ds = ObservationalDataset::new(z.clone(), t.clone(), y.clone(), names(3), None).unwrap();
    for m in [1, 3] {
        let opts = MatchOptions {
            num_neighbors: m,
            ..Default::default()
        };
        let red = ReducedCovariates::from_matrix(z.clone(), SdrBasis::identity(3), None).unwrap();
        let r = match_units(&red, &ds, &opts).unwrap();
        for i in 0..n {
            let factual = if t[i] { r.y1_hat[i] } else { r.y0_hat[i] };
            assert_eq!(factual, Some(y[i]));
        }
        let a = ate(&r).unwrap();
        let effects = ite(&r).unwrap();
        assert_eq!(a.value, effects.iter().sum::<f64>() / n as f64);
    }
}

/// Every treated unit has a control with identical covariates, `Y = f(X) + τT`.
fn perfect_twins(seed: u64, pairs: usize, tau: f64) -> ObservationalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = 4;
    let half = normal_matrix(&mut rng, pairs, p);
    let mut x = DMatrix::zeros(2 * pairs, p);
    let mut t = Vec::new();
    let mut y = Vec::new();
    for i in 0..pairs {
        let base = half[(i, 0)].sin() + half[(i, 1)] * 2.0 - half[(i, 2)].powi(2);
        for (slot, treated) in [(2 * i, true), (2 * i + 1, false)] {
            x.set_row(slot, &half.row(i));
            t.push(treated);
            y.push(if treated { base + tau } else { base });
        }
    }
    ObservationalDataset::new(x, t, DVector::from_vec(y), names(p), None).unwrap()
}

#[test]
fn perfect_twins_recover_constant_effect() {
    let tau = 2.5;
    let ds = perfect_twins(3, 100, tau);
    for method in [Method::Mire, Method::Nnm] {
        let out = run_method(&ds, method, &EstimatorConfig::default()).unwrap();
        for (i, e) in ite(&out.result).unwrap().iter().enumerate() {
            assert!((e - tau).abs() < 1e-12, "{method} unit {i}: {e}");
        }
        assert!((out.ate().unwrap().value - tau).abs() < 1e-12);
        for m in out.result.matches.iter().flatten() {
            assert_eq!(m.distances[0], 0.0);
        }
    }
}

#[test]
fn zero_effect_ate_within_three_standard_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let n = 1000;
    let x = normal_matrix(&mut rng, n, 5);
    let t: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
    let y = DVector::from_fn(n, |i, _| x[(i, 0)] + 0.5 * x[(i, 1)] + rng.sample::<f64, _>(StandardNormal));
    let ds = ObservationalDataset::new(x, t, y, names(5), None).unwrap();
    let out = run_method(&ds, Method::Mire, &EstimatorConfig::default()).unwrap();
    let est = out.ate().unwrap();
    assert!(est.value.abs() < 3.0 * est.sd / (n as f64).sqrt(), "ATE {} sd {}", est.value, est.sd);
}

#[test]
fn matching_improves_reduced_space_balance_on_average() {
    let mut before = 0.0;
    let mut after = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let n = 300;
        let x = normal_matrix(&mut rng, n, 6);
        let t: Vec<bool> = (0..n)
            .map(|i| {
                let logit = 0.8 * x[(i, 0)] - 0.5 * x[(i, 1)];
                rng.random::<f64>() < 1.0 / (1.0 + (-logit).exp())
            })
            .collect();
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] + x[(i, 1)].powi(2) + 0.5 * rng.sample::<f64, _>(StandardNormal));
        let ds = ObservationalDataset::new(x, t, y, names(6), None).unwrap();
        let out = run_method(&ds, Method::Mire, &EstimatorConfig::default()).unwrap();
        let report = out.balance().unwrap();
        for row in report.rows.iter().filter(|r| r.space == BalanceSpace::Reduced) {
            before += row.smd_before.unwrap().abs();
            after += row.smd_after.unwrap().abs();
        }
    }
    assert!(after <= before, "mean |SMD| after {after} > before {before}");
}

#[test]
fn balance_report_covers_covariates_and_reduced_columns() {
    let ds = perfect_twins(4, 30, 1.0);
    let out = run_method(&ds, Method::Mire, &EstimatorConfig::default()).unwrap();
    let report = balance_diagnostics(&out.working, out.reduced.as_ref(), &out.result).unwrap();
    let k = out.reduced.as_ref().unwrap().k();
    assert_eq!(report.rows.len(), ds.p() + k);
    // twins make treated and matched-control means coincide
    for row in &report.rows {
        assert!(row.smd_after.unwrap().abs() < 1e-12);
    }
}
