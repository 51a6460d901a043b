//! Inverse regression estimation of the central dimension-reduction subspace.
//!
//! The response is sliced, slice means of the covariates are mapped through
//! `Σ⁻¹` to inverse-regression directions `ξ_y`, and a rank-`k` factorization
//! `S C` of the contrast-reduced moment matrix `ζ = ξ D_f A` is fitted by
//! minimizing the quadratic discrepancy
//!
//! ```text
//! F(S, C) = (vec ζ - vec SC)' V (vec ζ - vec SC)
//! ```
//!
//! with alternating least squares: `C` is a generalized least squares fit for
//! fixed `S`, and each column of `S` is refit in the orthogonal complement of
//! the remaining columns.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CovarianceModel, ObservationalDataset};
use crate::error::{Error, Result};
use crate::linalg::{helmert, kron, orthonormal_basis, sorted_svd, sym_pinv, SpdFactor};

/// Default number of slices for a continuous response.
pub const DEFAULT_SLICES: usize = 5;
/// Default target dimension.
pub const DEFAULT_DIMENSION: usize = 2;
/// Ridge scale applied to the influence covariance before inversion.
pub const GAMMA_RIDGE_SCALE: f64 = 1e-6;

/// Restart discrepancies within this relative gap count as ties.
const TIE_RTOL: f64 = 1e-12;
/// Rank tolerance for the projected pseudo-inverse of the direction update.
const PINV_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SliceBoundaries {
    /// `h - 1` cut points between consecutive slices of a continuous response.
    Cuts(Vec<f64>),
    /// Lowest response value in each slice of a discrete response.
    Categories(Vec<f64>),
}

/// Partition of the units by response slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Slicing {
    /// Slice index of every unit.
    pub assignment: Vec<usize>,
    pub counts: Vec<usize>,
    pub f_hat: DVector<f64>,
    pub boundaries: SliceBoundaries,
}

impl Slicing {
    pub fn h(&self) -> usize {
        self.counts.len()
    }

    pub fn members(&self, slice: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == slice)
            .collect()
    }
}

/// Slices the response into (at most) `h` groups.
///
/// A response with at most `h` distinct values gets one slice per value.
/// Otherwise slices are equal-frequency over the sorted response, tied values
/// are never split and the overflow of a tie run stays in the lower slice.
/// Slices left with fewer than two units are merged into a neighbour.
pub fn make_slices(y: &[f64], h: usize) -> Result<Slicing> {
    let n = y.len();
    if h < 2 {
        return Err(Error::InvalidArgument(format!("slice count must be at least 2, got {h}")));
    }
    if 2 * h > n {
        return Err(Error::InvalidArgument(format!(
            "slice count {h} exceeds n/2 for n = {n}"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite response value".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    if sorted[0] == sorted[n - 1] {
        return Err(Error::InvalidData("response is constant; cannot slice".into()));
    }

    let mut distinct = 1;
    for w in sorted.windows(2) {
        if w[1] != w[0] {
            distinct += 1;
        }
    }
    let discrete = distinct <= h;

    // Runs of sorted positions `[start, end)`.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    if discrete {
        let mut start = 0;
        for i in 1..=n {
            if i == n || sorted[i] != sorted[i - 1] {
                runs.push((start, i));
                start = i;
            }
        }
    } else {
        let mut start = 0;
        for s in 0..h {
            if start >= n {
                break;
            }
            let mut end = if s + 1 == h { n } else { ((s + 1) * n / h).max(start + 1) };
            while end < n && sorted[end] == sorted[end - 1] {
                end += 1;
            }
            runs.push((start, end));
            start = end;
        }
    }

    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for run in runs {
        match merged.last_mut() {
            Some(last) if last.1 - last.0 < 2 => last.1 = run.1,
            _ => merged.push(run),
        }
    }
    if merged.len() > 1 {
        let last = merged[merged.len() - 1];
        if last.1 - last.0 < 2 {
            merged.pop();
            merged.last_mut().expect("at least one slice").1 = last.1;
        }
    }
    if merged.len() < 2 {
        return Err(Error::InvalidData(
            "response has a single effective slice; cannot estimate directions".into(),
        ));
    }

    let mut assignment = vec![0; n];
    let mut counts = Vec::with_capacity(merged.len());
    for (s, &(start, end)) in merged.iter().enumerate() {
        for &unit in &order[start..end] {
            assignment[unit] = s;
        }
        counts.push(end - start);
    }
    let f_hat = DVector::from_iterator(counts.len(), counts.iter().map(|&c| c as f64 / n as f64));
    let boundaries = if discrete {
        SliceBoundaries::Categories(merged.iter().map(|&(s, _)| sorted[s]).collect())
    } else {
        SliceBoundaries::Cuts(
            merged
                .windows(2)
                .map(|w| 0.5 * (sorted[w[0].1 - 1] + sorted[w[1].0]))
                .collect(),
        )
    };
    Ok(Slicing {
        assignment,
        counts,
        f_hat,
        boundaries,
    })
}

/// Slice moments of the covariates.
#[derive(Debug, Clone)]
pub struct SliceStats {
    pub slicing: Slicing,
    pub mean: DVector<f64>,
    pub slice_means: Vec<DVector<f64>>,
    /// `p x h`; column `y` solves `Σ ξ_y = X̄_y - X̄`.
    pub xi_hat: DMatrix<f64>,
    /// `n x p`; row `i` is `Σ⁻¹ (x_i - X̄)`, used for the influence covariance.
    unit_scores: DMatrix<f64>,
}

impl SliceStats {
    pub fn h(&self) -> usize {
        self.slicing.h()
    }

    pub fn p(&self) -> usize {
        self.xi_hat.nrows()
    }

    /// `Σ_y f_y ξ_y`, identically zero in exact arithmetic.
    pub fn weighted_xi_sum(&self) -> DVector<f64> {
        &self.xi_hat * &self.slicing.f_hat
    }
}

pub fn inverse_regression_moments(
    ds: &ObservationalDataset,
    cov: &CovarianceModel,
    slicing: Slicing,
) -> Result<SliceStats> {
    moments_from_matrix(ds.x(), cov, slicing)
}

pub fn moments_from_matrix(
    x: &DMatrix<f64>,
    cov: &CovarianceModel,
    slicing: Slicing,
) -> Result<SliceStats> {
    let (n, p) = x.shape();
    if slicing.assignment.len() != n {
        return Err(Error::Shape(format!(
            "slicing covers {} units, covariates have {n}",
            slicing.assignment.len()
        )));
    }
    if cov.mean.len() != p {
        return Err(Error::Shape("covariance model dimension mismatch".into()));
    }
    let h = slicing.h();
    let mut sums = vec![DVector::<f64>::zeros(p); h];
    for i in 0..n {
        sums[slicing.assignment[i]] += x.row(i).transpose();
    }
    let slice_means: Vec<DVector<f64>> = sums
        .into_iter()
        .zip(&slicing.counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let deviations = DMatrix::from_columns(
        &slice_means.iter().map(|m| m - &cov.mean).collect::<Vec<_>>(),
    );
    let xi_hat = cov.factor().solve(&deviations);

    let mut centered = x.transpose();
    for mut col in centered.column_iter_mut() {
        col -= &cov.mean;
    }
    let unit_scores = cov.factor().solve(&centered).transpose();
    Ok(SliceStats {
        slicing,
        mean: cov.mean.clone(),
        slice_means,
        xi_hat,
        unit_scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingKind {
    #[default]
    Identity,
    /// Inverse of the estimated asymptotic covariance of `vec ζ`.
    #[serde(alias = "ire")]
    IreFull,
}

impl std::str::FromStr for WeightingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(WeightingKind::Identity),
            "ire" | "ire_full" | "ire-full" => Ok(WeightingKind::IreFull),
            other => Err(Error::InvalidArgument(format!(
                "unknown weighting `{other}` (expected identity or ire)"
            ))),
        }
    }
}

/// The minimum-discrepancy problem for a fixed sample.
#[derive(Debug, Clone)]
pub struct IreProblem {
    /// `p x (h-1)` reduced moment matrix `ξ D_f A`.
    pub zeta_hat: DMatrix<f64>,
    /// `h x (h-1)` Helmert contrasts.
    pub contrast: DMatrix<f64>,
    pub f_hat: DVector<f64>,
    /// `p(h-1)` square weighting matrix.
    pub weighting: DMatrix<f64>,
    pub weighting_kind: WeightingKind,
}

impl IreProblem {
    /// A problem with an explicit target and weighting; the contrast and
    /// slice-proportion fields are left empty.
    pub fn from_parts(zeta_hat: DMatrix<f64>, weighting: DMatrix<f64>) -> Result<Self> {
        let dim = zeta_hat.len();
        if weighting.shape() != (dim, dim) {
            return Err(Error::Shape(format!(
                "weighting is {:?}, expected {dim}x{dim}",
                weighting.shape()
            )));
        }
        SpdFactor::new(&weighting, "weighting matrix", 0.0)?;
        let kind = if weighting == DMatrix::identity(dim, dim) {
            WeightingKind::Identity
        } else {
            WeightingKind::IreFull
        };
        let h = zeta_hat.ncols() + 1;
        Ok(Self {
            zeta_hat,
            contrast: helmert(h),
            f_hat: DVector::from_element(h, 1.0 / h as f64),
            weighting,
            weighting_kind: kind,
        })
    }

    pub fn p(&self) -> usize {
        self.zeta_hat.nrows()
    }

    /// Number of contrast columns, `h - 1`.
    pub fn q(&self) -> usize {
        self.zeta_hat.ncols()
    }

    fn total(&self) -> f64 {
        let z = DVector::from_column_slice(self.zeta_hat.as_slice());
        z.dot(&(&self.weighting * &z))
    }
}

pub fn build_problem(stats: &SliceStats, kind: WeightingKind) -> Result<IreProblem> {
    let h = stats.h();
    let p = stats.p();
    let contrast = helmert(h);
    let d_f = DMatrix::from_diagonal(&stats.slicing.f_hat);
    let zeta_hat = &stats.xi_hat * d_f * &contrast;
    let dim = p * (h - 1);
    let weighting = match kind {
        WeightingKind::Identity => DMatrix::identity(dim, dim),
        WeightingKind::IreFull => {
            let gamma = influence_covariance(stats, &contrast);
            let ridge = GAMMA_RIDGE_SCALE * gamma.trace() / dim as f64;
            let regularized = gamma + DMatrix::<f64>::identity(dim, dim) * ridge;
            let factor = SpdFactor::new(&regularized, "influence covariance of vec(zeta)", ridge)
                .map_err(|_| Error::Singular("influence covariance is not invertible after regularization".into()))?;
            let inv = factor.inverse();
            (&inv + inv.transpose()) * 0.5
        }
    };
    Ok(IreProblem {
        zeta_hat,
        contrast,
        f_hat: stats.slicing.f_hat.clone(),
        weighting,
        weighting_kind: kind,
    })
}

/// Sample covariance over units of `vec(Σ⁻¹(x_i - X̄)(J_i - f)' A)`.
fn influence_covariance(stats: &SliceStats, contrast: &DMatrix<f64>) -> DMatrix<f64> {
    let scores = &stats.unit_scores;
    let (n, p) = scores.shape();
    let q = contrast.ncols();
    let f = &stats.slicing.f_hat;
    // (J_i - f)' A for each slice, shared by its members
    let slice_rows: Vec<DVector<f64>> = (0..stats.h())
        .map(|s| {
            let mut j = -f.clone();
            j[s] += 1.0;
            contrast.transpose() * j
        })
        .collect();
    let mut u = DMatrix::<f64>::zeros(n, p * q);
    for i in 0..n {
        let a = &slice_rows[stats.slicing.assignment[i]];
        for c in 0..q {
            for r in 0..p {
                u[(i, c * p + r)] = a[c] * scores[(i, r)];
            }
        }
    }
    let means: Vec<f64> = u.column_iter().map(|c| c.sum() / n as f64).collect();
    for (j, mut col) in u.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    (u.transpose() * &u) / (n as f64 - 1.0)
}

/// `F(S, C)`.
pub fn discrepancy(problem: &IreProblem, s: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
    if s.nrows() != problem.p() || c.ncols() != problem.q() || s.ncols() != c.nrows() {
        return Err(Error::Shape(format!(
            "S is {:?} and C is {:?} for a {}x{} target",
            s.shape(),
            c.shape(),
            problem.p(),
            problem.q()
        )));
    }
    let resid = &problem.zeta_hat - s * c;
    let r = DVector::from_column_slice(resid.as_slice());
    let value = match problem.weighting_kind {
        WeightingKind::Identity => r.norm_squared(),
        WeightingKind::IreFull => r.dot(&(&problem.weighting * &r)),
    };
    Ok(value.max(0.0))
}

/// Generalized least squares coordinates for fixed `S`:
/// `vec C = [(I ⊗ S') V (I ⊗ S)]⁻¹ (I ⊗ S') V vec ζ`.
pub fn solve_c(problem: &IreProblem, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, k) = s.shape();
    if p != problem.p() || k == 0 {
        return Err(Error::Shape(format!("S is {p}x{k}, expected {} rows", problem.p())));
    }
    let q = problem.q();
    let design = kron(&DMatrix::identity(q, q), s);
    let weighted = &problem.weighting * &design;
    let normal = design.transpose() * &weighted;
    let target = DVector::from_column_slice(problem.zeta_hat.as_slice());
    let rhs = weighted.transpose() * target;
    let factor = SpdFactor::new(&normal, "reduced normal matrix", 0.0)
        .map_err(|_| Error::Singular("reduced normal matrix of the coordinate fit".into()))?;
    let vec_c = factor.solve_vec(&rhs);
    Ok(DMatrix::from_column_slice(k, q, vec_c.as_slice()))
}

/// Outcome of one direction update.
#[derive(Debug, Clone)]
pub struct DirectionUpdate {
    /// Unit-norm candidate, or the previous direction when stalled.
    pub direction: DVector<f64>,
    pub stalled: bool,
}

/// Refits column `d` (zero-based) of `S` in the orthogonal complement of the
/// other columns, holding `C` fixed:
///
/// `ŝ_d = Q [Q K' V K Q]⁺ Q K' V α_d` with `K = c_d ⊗ I_p` and
/// `α_d = vec(ζ - S_(-d) C_(-d))`.
pub fn update_direction(
    problem: &IreProblem,
    s: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: usize,
) -> Result<DirectionUpdate> {
    let (p, k) = s.shape();
    if d >= k || c.nrows() != k || c.ncols() != problem.q() || p != problem.p() {
        return Err(Error::Shape(format!(
            "direction {d} out of range for S {:?}, C {:?}",
            s.shape(),
            c.shape()
        )));
    }
    let previous = s.column(d).into_owned();
    let others: Vec<usize> = (0..k).filter(|&j| j != d).collect();
    let projector = if others.is_empty() {
        DMatrix::identity(p, p)
    } else {
        let s_rest = s.select_columns(&others);
        let gram_pinv = sym_pinv(&(s_rest.transpose() * &s_rest), PINV_RTOL);
        DMatrix::identity(p, p) - &s_rest * gram_pinv * s_rest.transpose()
    };
    let residual = if others.is_empty() {
        problem.zeta_hat.clone()
    } else {
        &problem.zeta_hat - s.select_columns(&others) * c.select_rows(&others)
    };
    let alpha = DVector::from_column_slice(residual.as_slice());
    let c_d = c.row(d).transpose();
    let lift = kron(&DMatrix::from_column_slice(c_d.len(), 1, c_d.as_slice()), &DMatrix::identity(p, p));
    let lift_t_v = lift.transpose() * &problem.weighting;
    let curvature = &projector * (&lift_t_v * &lift) * &projector;
    let candidate = &projector * sym_pinv(&curvature, PINV_RTOL) * &projector * (lift_t_v * alpha);
    let norm = candidate.norm();
    if !(norm > 1e-300) || !norm.is_finite() {
        return Ok(DirectionUpdate {
            direction: previous,
            stalled: true,
        });
    }
    Ok(DirectionUpdate {
        direction: candidate / norm,
        stalled: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_sweeps: usize,
    /// Relative decrease of the discrepancy over a sweep below which the fit stops.
    pub tol: f64,
    /// Random orthonormal restarts in addition to the SVD start.
    pub restarts: usize,
    pub seed: u64,
    /// Start restart 0 from the top-`k` left singular vectors of `ζ`.
    pub svd_start: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 200,
            tol: 1e-8,
            restarts: 0,
            seed: 0,
            svd_start: true,
        }
    }
}

/// Ordered orthonormal basis of the estimated subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SdrBasis {
    /// `p x k`.
    pub beta: DMatrix<f64>,
    pub k: usize,
    pub final_discrepancy: f64,
}

impl SdrBasis {
    /// Wraps a user-supplied basis, checking full column rank.
    pub fn from_matrix(beta: DMatrix<f64>) -> Result<Self> {
        orthonormal_basis(&beta)?;
        let k = beta.ncols();
        Ok(Self {
            beta,
            k,
            final_discrepancy: f64::NAN,
        })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            beta: DMatrix::identity(p, p),
            k: p,
            final_discrepancy: 0.0,
        }
    }

    pub fn p(&self) -> usize {
        self.beta.nrows()
    }
}

/// Per-restart record of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartTrace {
    /// Every accepted discrepancy value, starting with the initial one.
    pub history: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub stalls: usize,
}

impl RestartTrace {
    pub fn is_monotone(&self) -> bool {
        self.history.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn final_value(&self) -> f64 {
        *self.history.last().expect("history starts with the initial value")
    }
}

#[derive(Debug, Clone)]
pub struct IreFit {
    pub basis: SdrBasis,
    /// Whether the selected restart met the tolerance before `max_sweeps`.
    pub converged: bool,
    pub best_restart: usize,
    pub restarts: Vec<RestartTrace>,
}

struct RestartOutcome {
    s: DMatrix<f64>,
    c: DMatrix<f64>,
    trace: RestartTrace,
}

fn run_restart(problem: &IreProblem, init: DMatrix<f64>, opts: &FitOptions) -> Result<RestartOutcome> {
    let k = init.ncols();
    let mut s = init;
    let mut c = solve_c(problem, &s)?;
    let mut e = discrepancy(problem, &s, &c)?;
    let mut trace = RestartTrace {
        history: vec![e],
        sweeps: 0,
        converged: false,
        stalls: 0,
    };
    if e == 0.0 {
        trace.converged = true;
        return Ok(RestartOutcome { s, c, trace });
    }
    for _ in 0..opts.max_sweeps {
        let e_start = e;
        for d in 0..k {
            let update = update_direction(problem, &s, &c, d)?;
            if update.stalled {
                trace.stalls += 1;
                continue;
            }
            let mut s_new = s.clone();
            s_new.set_column(d, &update.direction);
            let c_new = match solve_c(problem, &s_new) {
                Ok(c_new) => c_new,
                Err(_) => {
                    trace.stalls += 1;
                    continue;
                }
            };
            let e_new = discrepancy(problem, &s_new, &c_new)?;
            if e_new <= e {
                s = s_new;
                c = c_new;
                e = e_new;
                trace.history.push(e);
            }
        }
        trace.sweeps += 1;
        if e == 0.0 || (e_start - e) / e_start < opts.tol {
            trace.converged = true;
            break;
        }
    }
    Ok(RestartOutcome { s, c, trace })
}

fn random_orthonormal(p: usize, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(p, k, |_, _| StandardNormal.sample(&mut rng));
    orthonormal_basis(&raw)
}

/// Largest-magnitude entry of each column made positive.
fn fix_signs(beta: &mut DMatrix<f64>) {
    for mut col in beta.column_iter_mut() {
        let pivot = col
            .iter()
            .cloned()
            .fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Rotates `S` into singular directions of the fitted `SC` and orders them by
/// the discrepancy reduction each achieves on its own.
fn ordered_basis(problem: &IreProblem, s: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = s.ncols();
    let q = orthonormal_basis(s)?;
    // Coordinates of the fit in the orthonormal basis of span(S).
    let coords = q.transpose() * s * c;
    let (u, _, _) = sorted_svd(&coords);
    let rotated = &q * u.columns(0, k);
    let total = problem.total();
    let mut scored: Vec<(f64, usize)> = (0..k)
        .map(|j| {
            let col = rotated.columns(j, 1).into_owned();
            let reduction = solve_c(problem, &col)
                .and_then(|cj| discrepancy(problem, &col, &cj))
                .map(|e| total - e)
                .unwrap_or(f64::NEG_INFINITY);
            (reduction, j)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = scored.iter().map(|&(_, j)| j).collect();
    let mut beta = rotated.select_columns(&order);
    fix_signs(&mut beta);
    Ok(beta)
}

/// Minimizes the discrepancy over rank-`k` factorizations.
pub fn fit_ire(problem: &IreProblem, k: usize, opts: &FitOptions) -> Result<IreFit> {
    let p = problem.p();
    let q = problem.q();
    if k < 1 || k > p.min(q) {
        return Err(Error::InvalidArgument(format!(
            "target dimension {k} must lie in 1..={} (p = {p}, h - 1 = {q})",
            p.min(q)
        )));
    }
    if !(opts.tol >= 0.0) || opts.max_sweeps == 0 {
        return Err(Error::InvalidArgument("tolerance must be >= 0 and max_sweeps >= 1".into()));
    }
    let n_starts = opts.restarts + usize::from(opts.svd_start);
    if n_starts == 0 {
        return Err(Error::InvalidArgument("no starting points requested".into()));
    }
    let starts: Vec<usize> = (0..n_starts).collect();
    let outcomes: Vec<Result<RestartOutcome>> = starts
        .par_iter()
        .map(|&r| {
            let init = if opts.svd_start && r == 0 {
                let (u, _, _) = sorted_svd(&problem.zeta_hat);
                u.columns(0, k).into_owned()
            } else {
                random_orthonormal(p, k, opts.seed.wrapping_add(r as u64))?
            };
            run_restart(problem, init, opts)
        })
        .collect();

    let mut best: Option<(usize, RestartOutcome)> = None;
    let mut traces = Vec::with_capacity(n_starts);
    let mut first_err = None;
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(out) => {
                traces.push(out.trace.clone());
                let e = out.trace.final_value();
                let better = match &best {
                    None => true,
                    Some((_, b)) => {
                        let eb = b.trace.final_value();
                        e < eb - TIE_RTOL * eb.abs().max(f64::MIN_POSITIVE)
                    }
                };
                if better {
                    best = Some((r, out));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let (best_restart, out) = match best {
        Some(b) => b,
        None => return Err(first_err.expect("at least one restart ran")),
    };
    let beta = ordered_basis(problem, &out.s, &out.c)?;
    Ok(IreFit {
        basis: SdrBasis {
            beta,
            k,
            final_discrepancy: out.trace.final_value(),
        },
        converged: out.trace.converged,
        best_restart,
        restarts: traces,
    })
}

/// End-to-end settings for estimating a basis from data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdrOptions {
    pub h: usize,
    pub k: usize,
    pub weighting: WeightingKind,
    /// Covariance ridge; `None` for the scale-aware default.
    pub ridge: Option<f64>,
    pub fit: FitOptions,
}

impl Default for SdrOptions {
    fn default() -> Self {
        Self {
            h: DEFAULT_SLICES,
            k: DEFAULT_DIMENSION,
            weighting: WeightingKind::Identity,
            ridge: None,
            fit: FitOptions::default(),
        }
    }
}

/// Slice count actually usable for `n` units: `h` capped at `n / 2`.
pub fn usable_slices(h: usize, n: usize) -> usize {
    h.min(n / 2).max(2)
}

/// Slices, moments, problem and fit in one call. The target dimension is
/// capped at `min(p, h_eff - 1)` where `h_eff` is the realized slice count.
pub fn estimate_basis(ds: &ObservationalDataset, opts: &SdrOptions) -> Result<IreFit> {
    let cov = crate::data::covariance(ds, opts.ridge)?;
    let slicing = make_slices(ds.y().as_slice(), usable_slices(opts.h, ds.n()))?;
    let stats = inverse_regression_moments(ds, &cov, slicing)?;
    let problem = build_problem(&stats, opts.weighting)?;
    let k = opts.k.min(problem.p()).min(problem.q()).max(1);
    fit_ire(&problem, k, &opts.fit)
}
