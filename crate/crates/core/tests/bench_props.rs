use mire::bench::{
    ihdp_stand_in, run_replications, simulate_ihdp_b, simulate_twins, twins_stand_in, BenchConfig,
    GeneratorKind, GeneratorSettings, GeneratorSpec, RowStatus, BETA_SUPPORT, IHDP_UNITS, TARGET_ATT,
};
use mire::Method;

#[test]
fn calibration_identity_holds_for_twenty_seeds() {
    let design = ihdp_stand_in(IHDP_UNITS, 0).unwrap();
    for seed in 0..20 {
        let draw = simulate_ihdp_b(&design, 100 + seed).unwrap();
        assert!((draw.noiseless_att() - TARGET_ATT).abs() < 1e-10);
        assert!(draw.surface.beta_b.iter().all(|b| BETA_SUPPORT.contains(b)));
    }
}

#[test]
fn empirical_att_is_close_to_four() {
    let design = ihdp_stand_in(IHDP_UNITS, 0).unwrap();
    let draw = simulate_ihdp_b(&design, 1).unwrap();
    let truth = draw.dataset.true_effects().unwrap();
    let treated = draw.dataset.treated_indices();
    let att = treated.iter().map(|&i| truth[i]).sum::<f64>() / treated.len() as f64;
    assert!((att - TARGET_ATT).abs() < 3.0 / (treated.len() as f64).sqrt(), "att {att}");
}

#[test]
fn twins_probabilities_always_clamped() {
    let source = twins_stand_in(500, -0.025, 3).unwrap();
    for seed in 0..30 {
        let draw = simulate_twins(&source, seed).unwrap();
        assert!(draw.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
        let y = draw.dataset.y();
        for i in 0..y.len() {
            let expect = if draw.dataset.treatment()[i] { source.y1[i] } else { source.y0[i] };
            assert_eq!(y[i], expect);
        }
    }
}

fn small_config(reps: usize) -> BenchConfig {
    let mut cfg = BenchConfig::new(GeneratorKind::IhdpB);
    cfg.generator = GeneratorSpec::Detailed(GeneratorSettings {
        kind: GeneratorKind::IhdpB,
        n: Some(200),
        true_ate: None,
    });
    cfg.methods = vec![Method::Mire, Method::Nnm, Method::Psm];
    cfg.replications = reps;
    cfg.seed = 17;
    cfg
}

#[test]
fn replication_runner_is_deterministic() {
    let cfg = small_config(4);
    let a = run_replications(&cfg).unwrap();
    let b = run_replications(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.seeds, vec![18, 19, 20, 21]);
    assert_eq!(a.rows.len(), 12);
}

#[test]
fn aggregate_means_equal_row_means() {
    let report = run_replications(&small_config(5)).unwrap();
    for summary in &report.summaries {
        let rows: Vec<_> = report
            .rows
            .iter()
            .filter(|r| r.method == summary.method && r.status == RowStatus::Ok)
            .collect();
        let pehe: Vec<f64> = rows.iter().map(|r| r.pehe.unwrap()).collect();
        let mean = pehe.iter().sum::<f64>() / pehe.len() as f64;
        assert_eq!(summary.mean.pehe, Some(mean));
        let ate: Vec<f64> = rows.iter().map(|r| r.ate.unwrap()).collect();
        assert_eq!(summary.mean.ate, Some(ate.iter().sum::<f64>() / ate.len() as f64));
        assert_eq!(summary.n_ok + summary.n_failed, 5);
    }
}

#[test]
fn failures_are_recorded_per_row() {
    // m = 50 exceeds both group sizes, so every method fails; the runner keeps going.
    let mut cfg = small_config(2);
    cfg.generator = GeneratorSpec::Detailed(GeneratorSettings {
        kind: GeneratorKind::Twins,
        n: Some(60),
        true_ate: Some(0.0),
    });
    cfg.m = 50;
    let report = run_replications(&cfg).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert!(report.rows.iter().all(|r| r.status == RowStatus::Failed && r.error.is_some()));
    assert!(report.summaries.iter().all(|s| s.mean.ate.is_none()));
}
