//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use mire::bench::{
    ihdp_stand_in, run_replications, simulate_ihdp_b, simulate_twins, twins_stand_in, BenchConfig,
    GeneratorKind, GeneratorSettings, GeneratorSpec, IHDP_UNITS, TARGET_ATT, TWINS_ATE, TWINS_UNITS,
};
use mire::data::covariance;
use mire::effects::{ate, ite};
use mire::estimator::{run_method, EstimatorConfig, Method};
use mire::linalg::{helmert, max_principal_angle};
use mire::matching::{match_units, MatchOptions, ReducedCovariates};
use mire::sdr_ire::{
    estimate_basis, fit_ire, inverse_regression_moments, make_slices, FitOptions, IreProblem, SdrBasis,
    SdrOptions,
};
use mire::ObservationalDataset;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn random_spd(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let a = normal_matrix(rng, dim, dim);
    &a * a.transpose() + DMatrix::identity(dim, dim) * dim as f64
}

fn names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> String {
    format!("{:.2}s of {}s", elapsed.as_secs_f64(), limit.as_secs())
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

/// Top-`k` eigenvectors of `ζζ'`.
fn eigen_oracle(zeta: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(zeta * zeta.transpose());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    DMatrix::from_columns(&order[..k].iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>())
}

fn svd_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p = rng.random_range(2..=8);
        let h = rng.random_range(3..=6);
        let k = rng.random_range(1..=3usize.min(p).min(h - 1));
        let zeta = normal_matrix(&mut rng, p, h - 1);
        let dim = zeta.len();
        let problem = IreProblem::from_parts(zeta.clone(), DMatrix::identity(dim, dim)).map_err(|e| e.to_string())?;
        let fit = fit_ire(&problem, k, &FitOptions::default()).map_err(|e| e.to_string())?;
        worst = worst.max(max_principal_angle(&fit.basis.beta, &eigen_oracle(&zeta, k)).unwrap());
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-6 && elapsed < secs(10),
        format!("max angle {worst:.2e} over 50 problems, {}", within(elapsed, secs(10))),
    )
}

fn monotonicity() -> Outcome {
    let mut violations = 0;
    let mut steps = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let p = rng.random_range(3..=8);
        let q = rng.random_range(2..=5);
        let k = rng.random_range(1..=p.min(q));
        let zeta = normal_matrix(&mut rng, p, q);
        let v = random_spd(&mut rng, p * q);
        let problem = IreProblem::from_parts(zeta, v).map_err(|e| e.to_string())?;
        let opts = FitOptions {
            restarts: 2,
            seed,
            ..FitOptions::default()
        };
        let fit = fit_ire(&problem, k, &opts).map_err(|e| e.to_string())?;
        for trace in &fit.restarts {
            steps += trace.history.len();
            violations += trace.history.windows(2).filter(|w| w[1] > w[0]).count();
        }
    }
    check(violations == 0, format!("{violations} increases over {steps} accepted values in 100 fits"))
}

/// `Y = x1 / (0.5 + (x2 + 1.5)^2) + 0.2 ε`; the central subspace is span(e1, e2).
fn double_index(seed: u64, n: usize, p: usize) -> ObservationalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal_matrix(&mut rng, n, p);
    let y = DVector::from_fn(n, |i, _| {
        let e: f64 = rng.sample(StandardNormal);
        x[(i, 0)] / (0.5 + (x[(i, 1)] + 1.5).powi(2)) + 0.2 * e
    });
    let t = (0..n).map(|i| i % 2 == 0).collect();
    ObservationalDataset::new(x, t, y, names(p), None).unwrap()
}

fn subspace_recovery() -> Outcome {
    let start = Instant::now();
    let (n, p, k) = (500, 10, 2);
    let truth = DMatrix::from_fn(p, k, |i, j| if i == j { 1.0 } else { 0.0 });
    let opts = SdrOptions {
        h: 10,
        k,
        ..SdrOptions::default()
    };
    let mut total = 0.0;
    for seed in 0..100 {
        let fit = estimate_basis(&double_index(seed, n, p), &opts).map_err(|e| e.to_string())?;
        total += max_principal_angle(&fit.basis.beta, &truth).unwrap();
    }
    let mean = total / 100.0;
    let elapsed = start.elapsed();
    check(
        mean < 0.2 && elapsed < secs(60),
        format!("mean largest angle {mean:.4} rad with 10 slices, {}", within(elapsed, secs(60))),
    )
}

fn exact_identities() -> Outcome {
    let mut contrast: f64 = 0.0;
    for h in 2..=12 {
        let a = helmert(h);
        contrast = contrast.max((a.transpose() * &a - DMatrix::identity(h - 1, h - 1)).amax());
        contrast = contrast.max((a.transpose() * DVector::from_element(h, 1.0)).amax());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut xi_sum: f64 = 0.0;
    let mut factual_ok = true;
    let mut mean_ok = true;
    for _ in 0..10 {
        let n = 300;
        let p = 5;
        let x = normal_matrix(&mut rng, n, p);
        let mut t: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
        t[0] = true;
        t[1] = false;
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] - x[(i, 2)].powi(2) + rng.sample::<f64, _>(StandardNormal));
        let ds = ObservationalDataset::new(x, t.clone(), y.clone(), names(p), None).unwrap();
        let cov = covariance(&ds, None).map_err(|e| e.to_string())?;
        let slicing = make_slices(ds.y().as_slice(), 6).map_err(|e| e.to_string())?;
        let stats = inverse_regression_moments(&ds, &cov, slicing).map_err(|e| e.to_string())?;
        xi_sum = xi_sum.max(stats.weighted_xi_sum().amax());
        for m in [1, 3] {
            let cfg = EstimatorConfig {
                matching: MatchOptions {
                    num_neighbors: m,
                    ..MatchOptions::default()
                },
                ..EstimatorConfig::default()
            };
            let out = run_method(&ds, Method::Mire, &cfg).map_err(|e| e.to_string())?;
            for i in 0..n {
                let factual = if t[i] { out.result.y1_hat[i] } else { out.result.y0_hat[i] };
                factual_ok &= factual == Some(y[i]);
            }
            let effects = ite(&out.result).map_err(|e| e.to_string())?;
            mean_ok &= ate(&out.result).map_err(|e| e.to_string())?.value == effects.iter().sum::<f64>() / n as f64;
        }
    }
    check(
        contrast <= 1e-12 && xi_sum <= 1e-10 && factual_ok && mean_ok,
        format!(
            "contrast {contrast:.1e}, weighted xi sum {xi_sum:.1e}, factual pass-through {factual_ok}, ate = mean(ite) {mean_ok}"
        ),
    )
}

fn ihdp_b() -> Outcome {
    let start = Instant::now();
    let design = ihdp_stand_in(IHDP_UNITS, 0).map_err(|e| e.to_string())?;
    let mut calibration: f64 = 0.0;
    for seed in 0..20 {
        let draw = simulate_ihdp_b(&design, 300 + seed).map_err(|e| e.to_string())?;
        calibration = calibration.max((draw.noiseless_att() - TARGET_ATT).abs());
    }
    let mut cfg = BenchConfig::new(GeneratorKind::IhdpB);
    cfg.methods = vec![Method::Mire, Method::Nnm, Method::Psm];
    cfg.replications = 100;
    let report = run_replications(&cfg).map_err(|e| e.to_string())?;
    let pehe = |m: Method| report.summary(m).and_then(|s| s.mean.pehe).unwrap_or(f64::INFINITY);
    let (mire, nnm, psm) = (pehe(Method::Mire), pehe(Method::Nnm), pehe(Method::Psm));
    let elapsed = start.elapsed();
    check(
        calibration < 1e-10 && mire < nnm && mire < psm && elapsed < secs(300),
        format!(
            "calibration error {calibration:.1e}; mean PEHE mire {mire:.3}, nnm {nnm:.3}, psm {psm:.3}; {}",
            within(elapsed, secs(300))
        ),
    )
}

fn twins() -> Outcome {
    let mut cfg = BenchConfig::new(GeneratorKind::Twins);
    cfg.generator = GeneratorSpec::Detailed(GeneratorSettings {
        kind: GeneratorKind::Twins,
        n: None,
        true_ate: Some(TWINS_ATE),
    });
    cfg.methods = vec![Method::Mire];
    cfg.replications = 50;
    let report = run_replications(&cfg).map_err(|e| e.to_string())?;
    let mean = report.summary(Method::Mire).and_then(|s| s.mean.ate).ok_or("no successful replication")?;

    let source = twins_stand_in(TWINS_UNITS, 0.0, 1).map_err(|e| e.to_string())?;
    let draw = simulate_twins(&source, 2).map_err(|e| e.to_string())?;
    let out = run_method(&draw.dataset, Method::Mire, &cfg.estimator(2)).map_err(|e| e.to_string())?;
    let null = out.ate().map_err(|e| e.to_string())?;
    let bound = 3.0 * null.sd / (draw.dataset.n() as f64).sqrt();
    check(
        (mean - TWINS_ATE).abs() < 0.01 && (-0.05..=0.0).contains(&mean) && null.value.abs() < bound,
        format!("mean ATE {mean:.4} over 50 replications (truth {TWINS_ATE}); null ATE {:.4}, bound {bound:.4}", null.value),
    )
}

/// Writes a Jobs-format CSV: LaLonde-style covariates, earnings outcome.
fn write_jobs_csv(path: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(1978);
    let mut text = String::from("treat,age,educ,black,hisp,married,nodegr,re74,re75,re78\n");
    for i in 0..445 {
        let treat = i < 185;
        let age = rng.random_range(17..=55);
        let educ = rng.random_range(3..=16);
        let black = u8::from(rng.random::<f64>() < 0.8);
        let hisp = u8::from(black == 0 && rng.random::<f64>() < 0.5);
        let married = u8::from(rng.random::<f64>() < 0.2);
        let nodegr = u8::from(educ < 12);
        let earn = |rng: &mut ChaCha8Rng, p0: f64| {
            if rng.random::<f64>() < p0 {
                0.0
            } else {
                (rng.random::<f64>() * 15000.0).round()
            }
        };
        let re74 = earn(&mut rng, 0.7);
        let re75 = earn(&mut rng, 0.6);
        let noise: f64 = rng.sample(StandardNormal);
        let re78 = (3000.0 + 0.3 * re75 + 150.0 * (educ as f64 - 10.0) + if treat { 886.0 } else { 0.0 } + 5000.0 * noise)
            .max(0.0)
            .round();
        text.push_str(&format!(
            "{},{age},{educ},{black},{hisp},{married},{nodegr},{re74},{re75},{re78}\n",
            u8::from(treat)
        ));
    }
    fs::write(path, text).unwrap();
}

fn jobs_protocol() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("jobs.csv");
    write_jobs_csv(&data);
    let config = dir.path().join("jobs.json");
    let body = format!(
        r#"{{"generator": "jobs", "dataset": {{"path": {:?}, "treatment": "treat", "outcome": "re78"}}, "methods": ["mire", "nnm", "psm"], "seed": 3}}"#,
        data.to_str().unwrap()
    );
    fs::write(&config, body).unwrap();
    let out = dir.path().join("out");
    let code = mire_cli::run_from(["mire", "bench", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    if code != 0 {
        return Err(format!("bench exited with {code}"));
    }
    let table = fs::read_to_string(out.join("jobs_att.csv")).map_err(|e| e.to_string())?;
    let header_ok = table.lines().next() == Some("# criterion_att=886,criterion_se=448");
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(table.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let method_col = headers.iter().position(|h| h == "method").ok_or("no method column")?;
    let att_col = headers.iter().position(|h| h == "att").ok_or("no att column")?;
    let mut mire_att = None;
    for record in rdr.records() {
        let record = record.map_err(|e| e.to_string())?;
        if &record[method_col] == "mire" {
            mire_att = record[att_col].parse::<f64>().ok();
        }
    }
    let att = mire_att.unwrap_or(f64::NAN);
    check(header_ok && att.is_finite(), format!("exit 0, criterion header {header_ok}, MIRE ATT {att:.2}"))
}

fn affine_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut mismatches = 0;
    let mut units = 0;
    for _ in 0..20 {
        let n = 120;
        let k = rng.random_range(1..=3);
        let z = normal_matrix(&mut rng, n, k);
        let mut t: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
        t[0] = true;
        t[1] = false;
        let ds = ObservationalDataset::new(z.clone(), t, DVector::zeros(n), names(k), None).unwrap();
        let opts = MatchOptions::default();
        let base = ReducedCovariates::from_matrix(z.clone(), SdrBasis::identity(k), Some(0.0)).map_err(|e| e.to_string())?;
        let reference = match_units(&base, &ds, &opts).map_err(|e| e.to_string())?.pair_map();
        let m = normal_matrix(&mut rng, k, k) + DMatrix::identity(k, k);
        if m.determinant().abs() < 1e-3 {
            return Err("degenerate transform drawn".into());
        }
        let shift = normal_matrix(&mut rng, 1, k);
        let moved = &z * m + DMatrix::from_fn(n, k, |_, j| shift[(0, j)]);
        let moved = ReducedCovariates::from_matrix(moved, SdrBasis::identity(k), Some(0.0)).map_err(|e| e.to_string())?;
        let pairs = match_units(&moved, &ds, &opts).map_err(|e| e.to_string())?.pair_map();
        mismatches += reference.iter().zip(&pairs).filter(|(a, b)| a != b).count();
        units += n;
    }
    check(mismatches == 0, format!("{mismatches} mismatched pairs over {units} units and 20 transforms"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("bench.json");
    fs::write(
        &config,
        r#"{"generator": {"kind": "ihdp-b", "n": 300}, "methods": ["mire", "nnm", "psm"], "replications": 4, "seed": 12}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let code = mire_cli::run_from(["mire", "bench", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        if code != 0 {
            return Err(format!("bench exited with {code}"));
        }
        let mut files: Vec<_> = fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        outputs.push(
            files
                .iter()
                .map(|f| (f.file_name().unwrap().to_owned(), fs::read(f).unwrap()))
                .collect::<Vec<_>>(),
        );
    }
    let same = outputs[0] == outputs[1];
    check(same, format!("{} report files, byte-identical {same}", outputs[0].len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 svd oracle equivalence", svd_oracle),
        ("2 discrepancy monotonicity", monotonicity),
        ("3 subspace recovery", subspace_recovery),
        ("4 exact identities", exact_identities),
        ("5 ihdp-b calibration and ranking", ihdp_b),
        ("6 twins known and null effect", twins),
        ("7 jobs protocol", jobs_protocol),
        ("8 affine invariance of matching", affine_invariance),
        ("9 bench determinism", determinism),
    ];
    let mut failed = 0;
    for (name, criterion) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
