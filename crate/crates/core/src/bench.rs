//! Semi-synthetic benchmarks: IHDP response surface B, TWINS-style confounded
//! assignment, the Jobs ATT protocol, and a seeded replication runner.
//!
//! Real IHDP/TWINS/Jobs files are not shipped. Stand-in generators produce
//! data of the same shape (IHDP: 6 continuous + 18 binary covariates, TWINS:
//! 40 covariates) so every pipeline runs without external downloads.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, standardize, ColumnKind, CsvSchema, ObservationalDataset};
use crate::effects::{ite, pehe, rmse};
use crate::error::{Error, Result};
use crate::estimator::{att_config, run_method, EstimatorConfig, Method};
use crate::matching::{MatchDirection, MatchOptions};
use crate::sdr_ire::{FitOptions, SdrOptions, WeightingKind};

/// Support of the surface-B coefficients.
pub const BETA_SUPPORT: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
const CONTINUOUS_PROBS: [f64; 5] = [0.5, 0.125, 0.125, 0.125, 0.125];
const BINARY_PROBS: [f64; 5] = [0.6, 0.1, 0.1, 0.1, 0.1];
/// Offset added to every covariate inside the control surface.
pub const SURFACE_B_OFFSET: f64 = 0.5;
pub const TARGET_ATT: f64 = 4.0;

pub const IHDP_UNITS: usize = 747;
pub const IHDP_CONTINUOUS: usize = 6;
pub const IHDP_BINARY: usize = 18;
pub const TWINS_COVARIATES: usize = 40;
pub const TWINS_UNITS: usize = 2000;
pub const TWINS_ATE: f64 = -0.025;
pub const TWINS_W_BOUND: f64 = 0.1;
pub const TWINS_NOISE_SD: f64 = 0.1;

/// Experimental benchmark for the Jobs (LaLonde) treated sample.
pub const JOBS_CRITERION_ATT: f64 = 886.0;
pub const JOBS_CRITERION_SE: f64 = 448.0;
/// Published MIRE figures on Jobs, shown for context only.
pub const JOBS_REFERENCE_ATT: f64 = 519.09;
pub const JOBS_REFERENCE_SD: f64 = 734.93;

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn mean_over(values: &DVector<f64>, rows: &[usize]) -> f64 {
    rows.iter().map(|&i| values[i]).sum::<f64>() / rows.len() as f64
}

fn draw_categorical(rng: &mut ChaCha8Rng, probs: &[f64; 5]) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (value, p) in BETA_SUPPORT.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *value;
        }
    }
    BETA_SUPPORT[4]
}

/// Hill's response surface B.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IhdpSurfaceB {
    pub beta_b: DVector<f64>,
    pub omega_b: f64,
    pub w: f64,
    pub seed: u64,
}

impl IhdpSurfaceB {
    /// Draws `β_B` per column kind and calibrates `ω_B` on the treated sample.
    pub fn sample(ds: &ObservationalDataset, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed);
        let beta = draw_beta(ds.column_kinds(), &mut rng);
        Self::with_beta(ds, beta, seed)
    }

    pub fn with_beta(ds: &ObservationalDataset, beta_b: DVector<f64>, seed: u64) -> Result<Self> {
        if beta_b.len() != ds.p() {
            return Err(Error::Shape(format!(
                "surface coefficients have length {}, dataset has {} covariates",
                beta_b.len(),
                ds.p()
            )));
        }
        let mut surface = Self {
            beta_b,
            omega_b: 0.0,
            w: SURFACE_B_OFFSET,
            seed,
        };
        let index = surface.linear_index(ds.x());
        let mu0 = surface.control_mean(ds.x())?;
        let treated = ds.treated_indices();
        surface.omega_b = mean_over(&(index - mu0), &treated) - TARGET_ATT;
        Ok(surface)
    }

    /// `X β_B`.
    pub fn linear_index(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.beta_b
    }

    /// `exp((X + W) β_B)`.
    pub fn control_mean(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let shift = self.w * self.beta_b.sum();
        let mu0 = self.linear_index(x).map(|v| (v + shift).exp());
        if let Some(i) = mu0.iter().position(|v| !v.is_finite()) {
            return Err(Error::Overflow(format!(
                "exp((x + {}) beta) overflows at unit {i}; standardize the covariates",
                self.w
            )));
        }
        Ok(mu0)
    }

    /// Noiseless means `(μ0, μ1)`.
    pub fn means(&self, x: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let mu0 = self.control_mean(x)?;
        let mu1 = self.linear_index(x).add_scalar(-self.omega_b);
        Ok((mu0, mu1))
    }
}

fn draw_beta(kinds: &[ColumnKind], rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(
        kinds.len(),
        kinds.iter().map(|kind| match kind {
            ColumnKind::Continuous => draw_categorical(rng, &CONTINUOUS_PROBS),
            ColumnKind::Binary => draw_categorical(rng, &BINARY_PROBS),
        }),
    )
}

#[derive(Debug, Clone)]
pub struct IhdpDraw {
    /// Observed outcomes plus the drawn potential outcomes as ground truth.
    pub dataset: ObservationalDataset,
    pub surface: IhdpSurfaceB,
    pub mu0: DVector<f64>,
    pub mu1: DVector<f64>,
}

impl IhdpDraw {
    /// Mean of `μ1 - μ0` over treated units.
    pub fn noiseless_att(&self) -> f64 {
        mean_over(&(&self.mu1 - &self.mu0), &self.dataset.treated_indices())
    }
}

/// Outcomes from surface B on the given covariates and assignment: draws
/// `β_B`, then `Y(0) ~ N(μ0, 1)`, `Y(1) ~ N(μ1, 1)`, `Y = Y(T)`.
pub fn simulate_ihdp_b(design: &ObservationalDataset, seed: u64) -> Result<IhdpDraw> {
    let mut rng = rng_for(seed);
    let beta = draw_beta(design.column_kinds(), &mut rng);
    let surface = IhdpSurfaceB::with_beta(design, beta, seed)?;
    draw_ihdp_outcomes(design, surface, &mut rng)
}

/// Like [`simulate_ihdp_b`] with fixed surface coefficients.
pub fn simulate_ihdp_b_with(design: &ObservationalDataset, beta_b: DVector<f64>, seed: u64) -> Result<IhdpDraw> {
    let surface = IhdpSurfaceB::with_beta(design, beta_b, seed)?;
    draw_ihdp_outcomes(design, surface, &mut rng_for(seed))
}

fn draw_ihdp_outcomes(design: &ObservationalDataset, surface: IhdpSurfaceB, rng: &mut ChaCha8Rng) -> Result<IhdpDraw> {
    let (mu0, mu1) = surface.means(design.x())?;
    let n = design.n();
    let mut y0 = DVector::zeros(n);
    let mut y1 = DVector::zeros(n);
    for i in 0..n {
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        y0[i] = mu0[i] + e0;
        y1[i] = mu1[i] + e1;
    }
    let dataset = with_outcomes(design, design.treatment().to_vec(), y1, y0)?;
    Ok(IhdpDraw {
        dataset,
        surface,
        mu0,
        mu1,
    })
}

fn with_outcomes(
    base: &ObservationalDataset,
    treatment: Vec<bool>,
    y1: DVector<f64>,
    y0: DVector<f64>,
) -> Result<ObservationalDataset> {
    let y = DVector::from_iterator(treatment.len(), treatment.iter().enumerate().map(|(i, &t)| if t { y1[i] } else { y0[i] }));
    ObservationalDataset::new(
        base.x().clone(),
        treatment,
        y,
        base.column_names().to_vec(),
        Some(base.column_kinds().to_vec()),
    )?
    .with_potential_outcomes(y1, y0)
}

/// IHDP-shaped covariates and a confounded assignment (about 19% treated),
/// standardized. The outcome column is a placeholder of zeros.
pub fn ihdp_stand_in(n: usize, seed: u64) -> Result<ObservationalDataset> {
    let mut rng = rng_for(seed);
    let p = IHDP_CONTINUOUS + IHDP_BINARY;
    let mut x = DMatrix::<f64>::zeros(n, p);
    let probs: Vec<f64> = (0..IHDP_BINARY)
        .map(|j| 0.15 + 0.7 * j as f64 / (IHDP_BINARY - 1) as f64)
        .collect();
    let mut treatment = Vec::with_capacity(n);
    for i in 0..n {
        let common: f64 = rng.sample(StandardNormal);
        for j in 0..IHDP_CONTINUOUS {
            let own: f64 = rng.sample(StandardNormal);
            // Mildly correlated continuous block.
            x[(i, j)] = 0.3 * common + own;
        }
        for (j, &pj) in probs.iter().enumerate() {
            let u: f64 = rng.random();
            x[(i, IHDP_CONTINUOUS + j)] = f64::from(u8::from(u < pj));
        }
        let b = |j: usize| x[(i, IHDP_CONTINUOUS + j)] - probs[j];
        let logit = -1.75 + 0.6 * x[(i, 0)] - 0.4 * x[(i, 1)] + 0.3 * x[(i, 2)] + 0.5 * b(0) - 0.4 * b(5) + 0.4 * b(10);
        let u: f64 = rng.random();
        treatment.push(u < sigmoid(logit));
    }
    let mut kinds = vec![ColumnKind::Continuous; IHDP_CONTINUOUS];
    kinds.extend(std::iter::repeat_n(ColumnKind::Binary, IHDP_BINARY));
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    let raw = ObservationalDataset::new(x, treatment, DVector::zeros(n), names, Some(kinds))?;
    Ok(standardize(&raw)?.0)
}

/// Confounded assignment `T ~ Bern(clamp(sigmoid(w'x) + n, 0, 1))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwinsConfounder {
    pub w: DVector<f64>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl TwinsConfounder {
    pub fn draw(p: usize, seed: u64) -> Result<Self> {
        Self::draw_with(p, &mut rng_for(seed), seed)
    }

    fn draw_with(p: usize, rng: &mut ChaCha8Rng, seed: u64) -> Result<Self> {
        if p != TWINS_COVARIATES {
            return Err(Error::Shape(format!(
                "TWINS confounding expects {TWINS_COVARIATES} covariates, got {p}"
            )));
        }
        let w = DVector::from_iterator(p, (0..p).map(|_| rng.random_range(-TWINS_W_BOUND..TWINS_W_BOUND)));
        Ok(Self {
            w,
            noise_sd: TWINS_NOISE_SD,
            seed,
        })
    }

    /// `clamp(sigmoid(w'x_i) + noise_i, 0, 1)` for every row.
    pub fn probabilities(&self, x: &DMatrix<f64>, noise: &[f64]) -> Result<Vec<f64>> {
        if x.ncols() != self.w.len() {
            return Err(Error::Shape(format!(
                "confounder has {} weights for {} covariates",
                self.w.len(),
                x.ncols()
            )));
        }
        if noise.len() != x.nrows() {
            return Err(Error::Shape("one noise value per unit required".into()));
        }
        let index = x * &self.w;
        Ok(index
            .iter()
            .zip(noise)
            .map(|(&v, &e)| (sigmoid(v) + e).clamp(0.0, 1.0))
            .collect())
    }
}

/// Covariates with both potential outcomes known, as in the twin-pair data.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinsSource {
    pub x: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub column_kinds: Vec<ColumnKind>,
    pub y0: DVector<f64>,
    pub y1: DVector<f64>,
}

impl TwinsSource {
    pub fn true_ate(&self) -> f64 {
        (&self.y1 - &self.y0).mean()
    }

    /// Uses a dataset's covariates and stored potential outcomes.
    pub fn from_dataset(ds: &ObservationalDataset) -> Result<Self> {
        let (y1, y0) = ds
            .potential_outcomes()
            .ok_or_else(|| Error::InvalidArgument("TWINS data needs y1 and y0 columns".into()))?;
        Ok(Self {
            x: ds.x().clone(),
            column_names: ds.column_names().to_vec(),
            column_kinds: ds.column_kinds().to_vec(),
            y0: y0.clone(),
            y1: y1.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TwinsDraw {
    pub dataset: ObservationalDataset,
    pub confounder: TwinsConfounder,
    pub probabilities: Vec<f64>,
}

/// Draws `w`, the probability noise and the assignment from `seed`.
pub fn simulate_twins(source: &TwinsSource, seed: u64) -> Result<TwinsDraw> {
    let mut rng = rng_for(seed);
    let confounder = TwinsConfounder::draw_with(source.x.ncols(), &mut rng, seed)?;
    let noise: Vec<f64> = (0..source.x.nrows())
        .map(|_| confounder.noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    assign_twins(source, confounder, &noise, &mut rng)
}

/// Assignment with a given confounder and noise vector.
pub fn simulate_twins_with(
    source: &TwinsSource,
    confounder: TwinsConfounder,
    noise: &[f64],
    seed: u64,
) -> Result<TwinsDraw> {
    assign_twins(source, confounder, noise, &mut rng_for(seed))
}

fn assign_twins(source: &TwinsSource, confounder: TwinsConfounder, noise: &[f64], rng: &mut ChaCha8Rng) -> Result<TwinsDraw> {
    let probabilities = confounder.probabilities(&source.x, noise)?;
    let treatment: Vec<bool> = probabilities
        .iter()
        .map(|&p| rng.random::<f64>() < p)
        .collect();
    let n = source.x.nrows();
    let y = DVector::from_iterator(
        n,
        (0..n).map(|i| if treatment[i] { source.y1[i] } else { source.y0[i] }),
    );
    let dataset = ObservationalDataset::new(
        source.x.clone(),
        treatment,
        y,
        source.column_names.clone(),
        Some(source.column_kinds.clone()),
    )?
    .with_potential_outcomes(source.y1.clone(), source.y0.clone())?;
    Ok(TwinsDraw {
        dataset,
        confounder,
        probabilities,
    })
}

/// TWINS-shaped stand-in: 40 covariates (10 continuous, 30 binary), binary
/// mortality `y0`, and `y1` equal to `y0` except for `round(|ate| n)` flipped
/// units, so the sample ATE is exactly `-flips / n` (or `+flips / n`).
pub fn twins_stand_in(n: usize, true_ate: f64, seed: u64) -> Result<TwinsSource> {
    const CONTINUOUS: usize = 10;
    if n < 2 {
        return Err(Error::InvalidArgument("TWINS stand-in needs at least 2 units".into()));
    }
    if !(true_ate.abs() <= 1.0) {
        return Err(Error::InvalidArgument(format!("true ATE {true_ate} outside [-1, 1]")));
    }
    let mut rng = rng_for(seed);
    let p = TWINS_COVARIATES;
    let probs: Vec<f64> = (0..p - CONTINUOUS)
        .map(|j| 0.1 + 0.8 * j as f64 / (p - CONTINUOUS - 1) as f64)
        .collect();
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut y0 = DVector::<f64>::zeros(n);
    for i in 0..n {
        for j in 0..CONTINUOUS {
            x[(i, j)] = rng.sample(StandardNormal);
        }
        for (j, &pj) in probs.iter().enumerate() {
            let u: f64 = rng.random();
            x[(i, CONTINUOUS + j)] = f64::from(u8::from(u < pj));
        }
        let risk = -1.7 - 0.6 * x[(i, 0)] + 0.4 * x[(i, 1)] - 0.3 * x[(i, 2)] + 0.5 * (x[(i, CONTINUOUS)] - probs[0]);
        let u: f64 = rng.random();
        y0[i] = f64::from(u8::from(u < sigmoid(risk)));
    }
    let flips = (true_ate.abs() * n as f64).round() as usize;
    let from = if true_ate < 0.0 { 1.0 } else { 0.0 };
    let candidates: Vec<usize> = (0..n).filter(|&i| y0[i] == from).collect();
    if flips > candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot realize ATE {true_ate}: {flips} flips needed, {} eligible units",
            candidates.len()
        )));
    }
    let mut y1 = y0.clone();
    for slot in sample(&mut rng, candidates.len(), flips).iter() {
        y1[candidates[slot]] = 1.0 - from;
    }
    let mut kinds = vec![ColumnKind::Continuous; CONTINUOUS];
    kinds.extend(std::iter::repeat_n(ColumnKind::Binary, p - CONTINUOUS));
    Ok(TwinsSource {
        x,
        column_names: (1..=p).map(|j| format!("x{j}")).collect(),
        column_kinds: kinds,
        y0,
        y1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    IhdpB,
    Twins,
    Jobs,
}

impl GeneratorKind {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::IhdpB => "ihdp-b",
            GeneratorKind::Twins => "twins",
            GeneratorKind::Jobs => "jobs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeneratorSpec {
    Kind(GeneratorKind),
    Detailed(GeneratorSettings),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSettings {
    pub kind: GeneratorKind,
    /// Stand-in sample size.
    #[serde(default)]
    pub n: Option<usize>,
    /// TWINS stand-in sample ATE.
    #[serde(default)]
    pub true_ate: Option<f64>,
}

impl GeneratorSpec {
    pub fn settings(&self) -> GeneratorSettings {
        match *self {
            GeneratorSpec::Kind(kind) => GeneratorSettings {
                kind,
                n: None,
                true_ate: None,
            },
            GeneratorSpec::Detailed(s) => s,
        }
    }
}

/// Drop treated rows whose `column` equals `value` (e.g. the non-random
/// part of the IHDP treated group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatedFilter {
    pub column: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub y1: Option<String>,
    #[serde(default)]
    pub y0: Option<String>,
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default)]
    pub discard_treated_where: Option<TreatedFilter>,
}

impl DatasetSpec {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            treatment: self.treatment.clone(),
            outcome: self.outcome.clone(),
            covariates: self.covariates.clone(),
            y1: self.y1.clone(),
            y0: self.y0.clone(),
        }
    }

    pub fn load(&self) -> Result<ObservationalDataset> {
        let ds = load_csv(&self.path, &self.schema())?;
        match &self.discard_treated_where {
            None => Ok(ds),
            Some(filter) => {
                let j = ds
                    .column_names()
                    .iter()
                    .position(|c| c == &filter.column)
                    .ok_or_else(|| Error::InvalidArgument(format!("filter column `{}` is not a covariate", filter.column)))?;
                let keep: Vec<usize> = (0..ds.n())
                    .filter(|&i| !(ds.treatment()[i] && ds.x()[(i, j)] == filter.value))
                    .collect();
                ds.select_rows(&keep)
            }
        }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Mire, Method::Nnm, Method::Psm]
}
fn default_k() -> usize {
    crate::sdr_ire::DEFAULT_DIMENSION
}
fn default_h() -> usize {
    crate::sdr_ire::DEFAULT_SLICES
}
fn default_m() -> usize {
    1
}
fn default_replications() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    pub generator: GeneratorSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_h")]
    pub h: usize,
    #[serde(default)]
    pub weighting: WeightingKind,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl BenchConfig {
    pub fn new(generator: GeneratorKind) -> Self {
        Self {
            dataset: None,
            generator: GeneratorSpec::Kind(generator),
            methods: default_methods(),
            k: default_k(),
            h: default_h(),
            weighting: WeightingKind::Identity,
            m: default_m(),
            replications: default_replications(),
            seed: 0,
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("bench config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("bench config: {msg}")));
        if self.methods.is_empty() {
            return bad("`methods` is empty");
        }
        if self.replications == 0 {
            return bad("`replications` must be at least 1");
        }
        if self.k == 0 {
            return bad("`k` must be at least 1");
        }
        if self.h < 2 {
            return bad("`h` must be at least 2");
        }
        if self.m == 0 {
            return bad("`m` must be at least 1");
        }
        let settings = self.generator.settings();
        if settings.kind == GeneratorKind::Jobs && self.dataset.is_none() {
            return bad("the jobs protocol needs a `dataset`");
        }
        if settings.n.is_some_and(|n| n < 4) {
            return bad("generator `n` must be at least 4");
        }
        Ok(())
    }

    /// Estimator settings for one replication seed.
    pub fn estimator(&self, seed: u64) -> EstimatorConfig {
        EstimatorConfig {
            sdr: SdrOptions {
                h: self.h,
                k: self.k,
                weighting: self.weighting,
                ridge: None,
                fit: FitOptions {
                    seed,
                    ..FitOptions::default()
                },
            },
            matching: MatchOptions {
                num_neighbors: self.m,
                with_replacement: true,
                direction: MatchDirection::Both,
            },
            standardize: true,
        }
    }
}

/// One method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub seed: u64,
    pub method: Method,
    pub status: RowStatus,
    pub ate: Option<f64>,
    pub ate_true: Option<f64>,
    pub att: Option<f64>,
    pub att_true: Option<f64>,
    pub pehe: Option<f64>,
    pub sqrt_pehe: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Failed,
}

/// Mean (or across-replication sd) of each metric over successful rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSet {
    pub ate: Option<f64>,
    pub att: Option<f64>,
    pub pehe: Option<f64>,
    pub sqrt_pehe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: MetricSet,
    /// Across-replication standard deviation (denominator `R - 1`).
    pub sd_across_replications: MetricSet,
    /// RMSE of the ATE estimates against each replication's true ATE.
    pub ate_rmse: Option<f64>,
    pub ate_bias: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationReport {
    pub generator: GeneratorKind,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub rows: Vec<ReplicationRow>,
    pub summaries: Vec<MethodSummary>,
}

fn mean_of(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn sd_of(values: &[f64]) -> Option<f64> {
    (values.len() >= 2).then(|| crate::effects::sd(values).expect("at least two values"))
}

impl MethodSummary {
    fn from_rows(method: Method, rows: &[&ReplicationRow]) -> Self {
        let ok: Vec<&&ReplicationRow> = rows.iter().filter(|r| r.status == RowStatus::Ok).collect();
        let column = |f: fn(&ReplicationRow) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
        let set = |agg: fn(&[f64]) -> Option<f64>| MetricSet {
            ate: agg(&column(|r| r.ate)),
            att: agg(&column(|r| r.att)),
            pehe: agg(&column(|r| r.pehe)),
            sqrt_pehe: agg(&column(|r| r.sqrt_pehe)),
        };
        let paired: Vec<(f64, f64)> = ok.iter().filter_map(|r| Some((r.ate?, r.ate_true?))).collect();
        let (est, truth): (Vec<f64>, Vec<f64>) = paired.into_iter().unzip();
        Self {
            method,
            n_ok: ok.len(),
            n_failed: rows.len() - ok.len(),
            mean: set(mean_of),
            sd_across_replications: set(sd_of),
            ate_rmse: (!est.is_empty()).then(|| rmse(&est, &truth).expect("equal lengths")),
            ate_bias: (!est.is_empty()).then(|| crate::effects::bias(&est, &truth).expect("equal lengths")),
        }
    }
}

impl ReplicationReport {
    fn new(generator: GeneratorKind, base_seed: u64, seeds: Vec<u64>, rows: Vec<ReplicationRow>, methods: &[Method]) -> Self {
        let summaries = methods
            .iter()
            .map(|&m| {
                let mine: Vec<&ReplicationRow> = rows.iter().filter(|r| r.method == m).collect();
                MethodSummary::from_rows(m, &mine)
            })
            .collect();
        Self {
            generator,
            base_seed,
            seeds,
            rows,
            summaries,
        }
    }

    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Writes `replications.csv`, `summary.json` and `plot_<metric>.csv`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        create_dir(dir)?;
        let rows_path = dir.join("replications.csv");
        let mut wtr = csv_writer(&rows_path)?;
        for row in &self.rows {
            wtr.serialize(row).map_err(|e| csv_error(&rows_path, e))?;
        }
        wtr.flush().map_err(|source| io_error(&rows_path, source))?;

        let summary_path = dir.join("summary.json");
        #[derive(Serialize)]
        struct Summary<'a> {
            generator: GeneratorKind,
            base_seed: u64,
            replications: usize,
            seeds: &'a [u64],
            methods: &'a [MethodSummary],
        }
        let summary = Summary {
            generator: self.generator,
            base_seed: self.base_seed,
            replications: self.seeds.len(),
            seeds: &self.seeds,
            methods: &self.summaries,
        };
        write_json(&summary_path, &summary)?;

        let mut written = vec![rows_path, summary_path];
        let plots: [(&str, fn(&MethodSummary) -> Option<f64>); 4] = [
            ("pehe", |s| s.mean.pehe),
            ("sqrt_pehe", |s| s.mean.sqrt_pehe),
            ("ate_rmse", |s| s.ate_rmse),
            ("ate", |s| s.mean.ate),
        ];
        for (metric, get) in plots {
            let path = dir.join(format!("plot_{metric}.csv"));
            let mut text = String::from("method,value\n");
            for s in &self.summaries {
                let value = get(s).map(|v| v.to_string()).unwrap_or_default();
                text.push_str(&format!("{},{value}\n", s.method));
            }
            fs::write(&path, text).map_err(|source| io_error(&path, source))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| io_error(dir, source))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidData(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|source| io_error(path, source))
}

fn evaluate(ds: &ObservationalDataset, method: Method, cfg: &EstimatorConfig, replication: usize, seed: u64) -> ReplicationRow {
    let mut row = ReplicationRow {
        replication,
        seed,
        method,
        status: RowStatus::Ok,
        ate: None,
        ate_true: None,
        att: None,
        att_true: None,
        pehe: None,
        sqrt_pehe: None,
        error: None,
    };
    if let Some(truth) = ds.true_effects() {
        let treated = ds.treated_indices();
        row.ate_true = Some(truth.iter().sum::<f64>() / truth.len() as f64);
        row.att_true = Some(treated.iter().map(|&i| truth[i]).sum::<f64>() / treated.len() as f64);
    }
    let outcome = (|| -> Result<()> {
        let out = run_method(ds, method, cfg)?;
        row.ate = Some(out.ate()?.value);
        row.att = Some(out.att()?.value);
        if let Some((y1, y0)) = ds.potential_outcomes() {
            let est = ite(&out.result)?;
            let p = pehe(&est, y1.as_slice(), y0.as_slice())?;
            row.pehe = Some(p);
            row.sqrt_pehe = Some(p.sqrt());
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        row.status = RowStatus::Failed;
        row.ate = None;
        row.att = None;
        row.error = Some(e.to_string());
    }
    row
}

enum BaseData {
    Ihdp(ObservationalDataset),
    Twins(TwinsSource),
}

fn prepare_base(cfg: &BenchConfig) -> Result<BaseData> {
    let settings = cfg.generator.settings();
    match settings.kind {
        GeneratorKind::IhdpB => {
            let design = match &cfg.dataset {
                Some(spec) => standardize(&spec.load()?)?.0,
                None => ihdp_stand_in(settings.n.unwrap_or(IHDP_UNITS), cfg.seed)?,
            };
            Ok(BaseData::Ihdp(design))
        }
        GeneratorKind::Twins => {
            let source = match &cfg.dataset {
                Some(spec) => TwinsSource::from_dataset(&spec.load()?)?,
                None => twins_stand_in(
                    settings.n.unwrap_or(TWINS_UNITS),
                    settings.true_ate.unwrap_or(TWINS_ATE),
                    cfg.seed,
                )?,
            };
            Ok(BaseData::Twins(source))
        }
        GeneratorKind::Jobs => Err(Error::InvalidArgument(
            "the jobs protocol has no replications; use run_bench".into(),
        )),
    }
}

/// Replications `r = 1..=R` with data seed `seed + r`. The covariates (and,
/// for TWINS, the potential outcomes) are fixed from the base seed; each
/// replication redraws the outcome surface or the assignment. Method failures
/// are recorded per row.
pub fn run_replications(cfg: &BenchConfig) -> Result<ReplicationReport> {
    cfg.validate()?;
    let base = prepare_base(cfg)?;
    let seeds: Vec<u64> = (1..=cfg.replications as u64).map(|r| cfg.seed.wrapping_add(r)).collect();
    let per_rep: Vec<Result<Vec<ReplicationRow>>> = seeds
        .par_iter()
        .enumerate()
        .map(|(idx, &seed)| {
            let ds = match &base {
                BaseData::Ihdp(design) => simulate_ihdp_b(design, seed)?.dataset,
                BaseData::Twins(source) => simulate_twins(source, seed)?.dataset,
            };
            let est = cfg.estimator(seed);
            Ok(cfg
                .methods
                .iter()
                .map(|&m| evaluate(&ds, m, &est, idx + 1, seed))
                .collect())
        })
        .collect();
    let mut rows = Vec::with_capacity(seeds.len() * cfg.methods.len());
    for rep in per_rep {
        rows.extend(rep?);
    }
    Ok(ReplicationReport::new(
        cfg.generator.settings().kind,
        cfg.seed,
        seeds,
        rows,
        &cfg.methods,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobsRow {
    pub method: Method,
    pub status: RowStatus,
    pub att: Option<f64>,
    /// `att - 886`.
    pub deviation: Option<f64>,
    /// Dispersion of the treated unit-level effects.
    pub sd: Option<f64>,
    /// `sd / sqrt(n_treated)`, comparable to the experimental standard error.
    pub se: Option<f64>,
    pub n_treated: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobsTable {
    pub criterion_att: f64,
    pub criterion_se: f64,
    pub reference_mire_att: f64,
    pub reference_mire_sd: f64,
    pub rows: Vec<JobsRow>,
}

impl JobsTable {
    pub fn header_line(&self) -> String {
        format!(
            "# criterion_att={},criterion_se={}",
            self.criterion_att, self.criterion_se
        )
    }

    pub fn row(&self, method: Method) -> Option<&JobsRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Writes `jobs_att.csv` (criterion constants in the comment header) and
    /// `summary.json`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        create_dir(dir)?;
        let path = dir.join("jobs_att.csv");
        let mut buf = Vec::new();
        writeln!(buf, "{}", self.header_line()).expect("write to memory");
        writeln!(
            buf,
            "# reference_mire_att={},reference_mire_sd={}",
            self.reference_mire_att, self.reference_mire_sd
        )
        .expect("write to memory");
        {
            let mut wtr = csv::Writer::from_writer(&mut buf);
            for row in &self.rows {
                wtr.serialize(row).map_err(|e| csv_error(&path, e))?;
            }
            wtr.flush().map_err(|source| io_error(&path, source))?;
        }
        fs::write(&path, buf).map_err(|source| io_error(&path, source))?;
        let summary = dir.join("summary.json");
        write_json(&summary, self)?;
        Ok(vec![path, summary])
    }
}

/// Runs each method in ATT mode on a Jobs-format dataset and reports the
/// deviation from the experimental $886 benchmark.
pub fn jobs_att_eval(ds: &ObservationalDataset, methods: &[Method], cfg: &EstimatorConfig) -> JobsTable {
    let att_cfg = att_config(*cfg);
    let n_treated = ds.treated_indices().len();
    let rows = methods
        .iter()
        .map(|&method| match run_method(ds, method, &att_cfg).and_then(|out| out.att()) {
            Ok(est) => JobsRow {
                method,
                status: RowStatus::Ok,
                att: Some(est.value),
                deviation: Some(est.value - JOBS_CRITERION_ATT),
                sd: Some(est.sd),
                se: Some(est.sd / (est.n_used as f64).sqrt()),
                n_treated,
                error: None,
            },
            Err(e) => JobsRow {
                method,
                status: RowStatus::Failed,
                att: None,
                deviation: None,
                sd: None,
                se: None,
                n_treated,
                error: Some(e.to_string()),
            },
        })
        .collect();
    JobsTable {
        criterion_att: JOBS_CRITERION_ATT,
        criterion_se: JOBS_CRITERION_SE,
        reference_mire_att: JOBS_REFERENCE_ATT,
        reference_mire_sd: JOBS_REFERENCE_SD,
        rows,
    }
}

#[derive(Debug, Clone)]
pub enum BenchOutcome {
    Replications(ReplicationReport),
    Jobs(JobsTable),
}

impl BenchOutcome {
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        match self {
            BenchOutcome::Replications(r) => r.write_files(dir),
            BenchOutcome::Jobs(t) => t.write_files(dir),
        }
    }
}

/// Dispatches on the generator kind.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    if cfg.generator.settings().kind == GeneratorKind::Jobs {
        let spec = cfg.dataset.as_ref().expect("validated");
        let ds = spec.load()?;
        return Ok(BenchOutcome::Jobs(jobs_att_eval(&ds, &cfg.methods, &cfg.estimator(cfg.seed))));
    }
    run_replications(cfg).map(BenchOutcome::Replications)
}
