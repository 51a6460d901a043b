use mire::baselines::{fit_propensity, match_on_scores, nnm_match, psm_match, ScoreScale};
use mire::effects::ate;
use mire::{MatchOptions, ObservationalDataset};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn simulate(seed: u64, n: usize, w: &[f64], intercept: f64) -> ObservationalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = w.len();
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let t = (0..n)
        .map(|i| {
            let eta = intercept + (0..p).map(|j| x[(i, j)] * w[j]).sum::<f64>();
            rng.random::<f64>() < sigmoid(eta)
        })
        .collect();
    let y = DVector::from_fn(n, |i, _| x[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
    ObservationalDataset::new(x, t, y, (1..=p).map(|j| format!("x{j}")).collect(), None).unwrap()
}

#[test]
fn independent_assignment_gives_flat_model() {
    let ds = simulate(1, 5000, &[0.0; 4], 0.0);
    let model = fit_propensity(&ds).unwrap();
    assert!(model.converged);
    let share = ds.treated_indices().len() as f64 / ds.n() as f64;
    assert!((model.coefficients[0] - (share / (1.0 - share)).ln()).abs() < 0.1);
    for j in 1..=4 {
        assert!(model.coefficients[j].abs() < 0.1, "slope {j}: {}", model.coefficients[j]);
    }
}

#[test]
fn logistic_weights_recovered() {
    let w = [1.0, -0.5, 0.25, 0.0, 0.8];
    let ds = simulate(2, 5000, &w, -0.3);
    let model = fit_propensity(&ds).unwrap();
    let est = model.coefficients.rows(1, 5).into_owned();
    let truth = DVector::from_column_slice(&w);
    let cosine = est.dot(&truth) / (est.norm() * truth.norm());
    assert!(cosine > 0.95, "cosine {cosine}");
}

#[test]
fn scores_are_monotone_in_the_linear_index() {
    let ds = simulate(3, 400, &[0.7, -0.2], 0.1);
    let model = fit_propensity(&ds).unwrap();
    let index = model.linear_index(ds.x());
    let scores = model.scores(ds.x());
    let mut order: Vec<usize> = (0..ds.n()).collect();
    order.sort_by(|&a, &b| index[a].total_cmp(&index[b]));
    for w in order.windows(2) {
        assert!(scores[w[0]] <= scores[w[1]]);
        if index[w[0]] < index[w[1]] && scores[w[1]] < 1.0 - 1e-6 && scores[w[0]] > 1e-6 {
            assert!(scores[w[0]] < scores[w[1]] || index[w[1]] - index[w[0]] < 1e-15);
        }
    }
}

#[test]
fn positive_affine_maps_of_the_score_keep_pairs() {
    let ds = simulate(4, 300, &[0.6, 0.3], -0.2);
    let model = fit_propensity(&ds).unwrap();
    let scores = model.scores(ds.x());
    let opts = MatchOptions::default();
    let base = match_on_scores(&ds, &scores, &opts).unwrap().pair_map();
    let scaled: Vec<f64> = scores.iter().map(|s| 4.0 * s).collect();
    assert_eq!(match_on_scores(&ds, &scaled, &opts).unwrap().pair_map(), base);
}

#[test]
fn nonlinear_monotone_maps_can_change_pairs() {
    // treated at 0.8; controls at 0.65 and 0.94: the score picks 0.94, the logit picks 0.65
    let x = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
    let ds = ObservationalDataset::new(x, vec![true, false, false], DVector::zeros(3), vec!["x".into()], None).unwrap();
    let opts = MatchOptions {
        direction: mire::MatchDirection::Att,
        ..Default::default()
    };
    let scores = [0.8, 0.65, 0.94];
    let on_score = match_on_scores(&ds, &scores, &opts).unwrap();
    let logits: Vec<f64> = scores.iter().map(|s: &f64| (s / (1.0 - s)).ln()).collect();
    let on_logit = match_on_scores(&ds, &logits, &opts).unwrap();
    assert_eq!(on_score.matches[0].as_ref().unwrap().indices, vec![2]);
    assert_eq!(on_logit.matches[0].as_ref().unwrap().indices, vec![1]);
}

#[test]
fn psm_and_nnm_agree_on_null_randomized_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 2000;
    let p = 3;
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let t: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
    let y = DVector::from_fn(n, |i, _| x[(i, 0)] - x[(i, 2)] + rng.sample::<f64, _>(StandardNormal));
    let ds = ObservationalDataset::new(x, t, y, vec!["a".into(), "b".into(), "c".into()], None).unwrap();
    let opts = MatchOptions::default();
    let model = fit_propensity(&ds).unwrap();
    let psm = ate(&psm_match(&ds, &model, &opts, ScoreScale::Score).unwrap()).unwrap();
    let (_, nnm_result) = nnm_match(&ds, &opts, None).unwrap();
    let nnm = ate(&nnm_result).unwrap();
    let se = ((psm.sd.powi(2) + nnm.sd.powi(2)) / n as f64).sqrt();
    assert!((psm.value - nnm.value).abs() < 3.0 * se, "psm {} nnm {} se {se}", psm.value, nnm.value);
    assert!(psm.value.abs() < 3.0 * psm.sd / (n as f64).sqrt());
}

#[test]
fn logit_scale_matching_runs() {
    let ds = simulate(6, 200, &[0.5], 0.0);
    let model = fit_propensity(&ds).unwrap();
    let r = psm_match(&ds, &model, &MatchOptions::default(), ScoreScale::Logit).unwrap();
    assert!(r.is_complete());
}
