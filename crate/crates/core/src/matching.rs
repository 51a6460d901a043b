//! Nearest-neighbour matching on reduced covariates and counterfactual
//! imputation.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CovarianceModel, ObservationalDataset};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::sdr_ire::SdrBasis;

/// Covariates projected onto an estimated basis, `Z = X β`.
#[derive(Debug, Clone)]
pub struct ReducedCovariates {
    pub z: DMatrix<f64>,
    pub basis: SdrBasis,
    pub sigma_z: DMatrix<f64>,
    pub ridge: f64,
    factor: SpdFactor,
}

impl ReducedCovariates {
    /// Treats the columns of `z` as already-reduced covariates.
    pub fn from_matrix(z: DMatrix<f64>, basis: SdrBasis, ridge: Option<f64>) -> Result<Self> {
        let cov = CovarianceModel::estimate(&z, ridge, "reduced covariate covariance")?;
        Ok(Self {
            z,
            basis,
            sigma_z: cov.sigma.clone(),
            ridge: cov.ridge,
            factor: cov.factor().clone(),
        })
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    /// Factor of `sigma_z + ridge I`.
    pub fn factor(&self) -> &SpdFactor {
        &self.factor
    }

    /// Rows mapped through `L⁻¹`, so squared Euclidean distances between them
    /// are Mahalanobis distances.
    pub fn whitened(&self) -> DMatrix<f64> {
        self.factor.whiten_columns(&self.z.transpose()).transpose()
    }
}

/// Projects the covariates of `ds` onto `basis`.
pub fn reduce(ds: &ObservationalDataset, basis: &SdrBasis, ridge: Option<f64>) -> Result<ReducedCovariates> {
    if basis.p() != ds.p() {
        return Err(Error::Shape(format!(
            "basis has {} rows but the dataset has {} covariates",
            basis.p(),
            ds.p()
        )));
    }
    let z = ds.x() * &basis.beta;
    ReducedCovariates::from_matrix(z, basis.clone(), ridge)
}

/// `(z_i - z_j)' Σ⁻¹ (z_i - z_j)`, the squared form.
pub fn mahalanobis(zi: &DVector<f64>, zj: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let factor = SpdFactor::new(sigma, "distance covariance", 0.0)?;
    mahalanobis_with(zi, zj, &factor)
}

pub fn mahalanobis_with(zi: &DVector<f64>, zj: &DVector<f64>, factor: &SpdFactor) -> Result<f64> {
    if zi.len() != zj.len() || zi.len() != factor.dim() {
        return Err(Error::Shape("distance operands differ in dimension".into()));
    }
    Ok(factor.inv_quad(&(zi - zj)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchDirection {
    /// Treated units only.
    Att,
    /// Every unit, so both potential outcomes are imputed for everyone.
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub num_neighbors: usize,
    pub with_replacement: bool,
    pub direction: MatchDirection,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            num_neighbors: 1,
            with_replacement: true,
            direction: MatchDirection::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitMatch {
    /// Matched opposite-group units, nearest first.
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub options: MatchOptions,
    pub treatment: Vec<bool>,
    pub y_obs: Vec<f64>,
    /// `None` for units outside the matching scope.
    pub matches: Vec<Option<UnitMatch>>,
    pub y1_hat: Vec<Option<f64>>,
    pub y0_hat: Vec<Option<f64>>,
}

impl MatchResult {
    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    /// Both potential outcomes imputed for every unit.
    pub fn is_complete(&self) -> bool {
        self.y1_hat.iter().chain(&self.y0_hat).all(Option::is_some)
    }

    /// `unit -> matched indices` for in-scope units.
    pub fn pair_map(&self) -> Vec<Option<Vec<usize>>> {
        self.matches
            .iter()
            .map(|m| m.as_ref().map(|m| m.indices.clone()))
            .collect()
    }

    /// Writes `unit,group,matched_indices,distance,y_obs,y1_hat,y0_hat`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let to_err = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(to_err)?;
        w.write_record(["unit", "group", "matched_indices", "distance", "y_obs", "y1_hat", "y0_hat"])
            .map_err(to_err)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for i in 0..self.n() {
            let (idx, dist) = match &self.matches[i] {
                Some(m) => (
                    join(m.indices.iter().map(|v| v.to_string())),
                    join(m.distances.iter().map(|v| v.to_string())),
                ),
                None => (String::new(), String::new()),
            };
            w.write_record([
                i.to_string(),
                if self.treatment[i] { "treated" } else { "control" }.to_string(),
                idx,
                dist,
                self.y_obs[i].to_string(),
                opt(self.y1_hat[i]),
                opt(self.y0_hat[i]),
            ])
            .map_err(to_err)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(";")
}

/// The `m` candidates with the smallest distance; equal distances keep the
/// lower index because candidates arrive in increasing index order.
fn smallest_m(candidates: impl Iterator<Item = (usize, f64)>, m: usize) -> Vec<(usize, f64)> {
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(m + 1);
    for (j, d) in candidates {
        if best.len() == m && d >= best[m - 1].1 {
            continue;
        }
        let pos = best.partition_point(|&(_, bd)| bd <= d);
        best.insert(pos, (j, d));
        best.truncate(m);
    }
    best
}

/// Matches every in-scope unit to its nearest opposite-group units under
/// `distance(i, j)` and imputes the missing potential outcome as the mean of
/// the matched outcomes.
pub fn match_with<D>(
    treatment: &[bool],
    y: &[f64],
    opts: &MatchOptions,
    distance: D,
) -> Result<MatchResult>
where
    D: Fn(usize, usize) -> f64 + Sync,
{
    let n = treatment.len();
    if y.len() != n {
        return Err(Error::Shape("treatment and outcome lengths differ".into()));
    }
    let m = opts.num_neighbors;
    if m == 0 {
        return Err(Error::InvalidArgument("number of neighbours must be at least 1".into()));
    }
    let treated: Vec<usize> = (0..n).filter(|&i| treatment[i]).collect();
    let control: Vec<usize> = (0..n).filter(|&i| !treatment[i]).collect();
    if treated.is_empty() || control.is_empty() {
        return Err(Error::InvalidData("both treatment groups must be nonempty".into()));
    }

    let mut matches: Vec<Option<UnitMatch>> = vec![None; n];
    let mut passes: Vec<(&[usize], &[usize])> = vec![(&treated, &control)];
    if opts.direction == MatchDirection::Both {
        passes.push((&control, &treated));
    }
    for (scope, pool) in passes {
        if pool.len() < m {
            return Err(Error::InvalidData(format!(
                "opposite group has {} units, fewer than the {m} neighbours requested",
                pool.len()
            )));
        }
        if opts.with_replacement {
            let found: Vec<UnitMatch> = scope
                .par_iter()
                .map(|&i| {
                    let best = smallest_m(pool.iter().map(|&j| (j, distance(i, j))), m);
                    UnitMatch {
                        indices: best.iter().map(|b| b.0).collect(),
                        distances: best.iter().map(|b| b.1).collect(),
                    }
                })
                .collect();
            for (&i, um) in scope.iter().zip(found) {
                matches[i] = Some(um);
            }
        } else {
            if pool.len() < m * scope.len() {
                return Err(Error::InvalidData(format!(
                    "matching without replacement needs {} opposite-group units, only {} available",
                    m * scope.len(),
                    pool.len()
                )));
            }
            let mut used = vec![false; n];
            for &i in scope {
                let best = smallest_m(
                    pool.iter().filter(|&&j| !used[j]).map(|&j| (j, distance(i, j))),
                    m,
                );
                for b in &best {
                    used[b.0] = true;
                }
                matches[i] = Some(UnitMatch {
                    indices: best.iter().map(|b| b.0).collect(),
                    distances: best.iter().map(|b| b.1).collect(),
                });
            }
        }
    }

    let mut y1_hat = vec![None; n];
    let mut y0_hat = vec![None; n];
    for i in 0..n {
        let imputed = matches[i]
            .as_ref()
            .map(|um| um.indices.iter().map(|&j| y[j]).sum::<f64>() / um.indices.len() as f64);
        if treatment[i] {
            y1_hat[i] = Some(y[i]);
            y0_hat[i] = imputed;
        } else {
            y0_hat[i] = Some(y[i]);
            y1_hat[i] = imputed;
        }
    }
    Ok(MatchResult {
        options: *opts,
        treatment: treatment.to_vec(),
        y_obs: y.to_vec(),
        matches,
        y1_hat,
        y0_hat,
    })
}

/// Mahalanobis nearest-neighbour matching on reduced covariates.
pub fn match_units(red: &ReducedCovariates, ds: &ObservationalDataset, opts: &MatchOptions) -> Result<MatchResult> {
    if red.z.nrows() != ds.n() {
        return Err(Error::Shape("reduced covariates and dataset differ in rows".into()));
    }
    let w = red.whitened();
    let k = w.ncols();
    // Row-major copy for contiguous distance evaluation.
    let rows: Vec<f64> = (0..w.nrows()).flat_map(|i| w.row(i).iter().cloned().collect::<Vec<_>>()).collect();
    let dist = |i: usize, j: usize| {
        let a = &rows[i * k..(i + 1) * k];
        let b = &rows[j * k..(j + 1) * k];
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
    };
    match_with(ds.treatment(), ds.y().as_slice(), opts, dist)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceSpace {
    Covariate,
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub name: String,
    pub space: BalanceSpace,
    /// `None` when the pooled standard deviation is zero.
    pub smd_before: Option<f64>,
    pub smd_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
}

impl BalanceReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_else(|| "undefined".into());
        let mut out = String::from("column,space,smd_before,smd_after\n");
        for r in &self.rows {
            let space = match r.space {
                BalanceSpace::Covariate => "covariate",
                BalanceSpace::Reduced => "reduced",
            };
            out.push_str(&format!("{},{},{},{}\n", r.name, space, opt(r.smd_before), opt(r.smd_after)));
        }
        file.write_all(out.as_bytes()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn get(&self, name: &str, space: BalanceSpace) -> Option<&BalanceRow> {
        self.rows.iter().find(|r| r.name == name && r.space == space)
    }
}

fn mean_var(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Standardized mean differences between treated units and controls, before
/// matching and against the matched controls of each treated unit.
///
/// The pooled sd is `sqrt((s_t^2 + s_c^2) / 2)` of the unmatched groups and is
/// used for both columns.
fn smd_column(col: &[f64], result: &MatchResult) -> (Option<f64>, Option<f64>) {
    let treated: Vec<usize> = (0..result.n()).filter(|&i| result.treatment[i]).collect();
    let control: Vec<usize> = (0..result.n()).filter(|&i| !result.treatment[i]).collect();
    let (mt, vt) = mean_var(treated.iter().map(|&i| col[i]));
    let (mc, vc) = mean_var(control.iter().map(|&i| col[i]));
    let pooled = ((vt + vc) / 2.0).sqrt();
    if !(pooled > 0.0) {
        return (None, None);
    }
    let before = (mt - mc) / pooled;
    let matched: Vec<f64> = treated
        .iter()
        .filter_map(|&i| {
            result.matches[i]
                .as_ref()
                .map(|m| m.indices.iter().map(|&j| col[j]).sum::<f64>() / m.indices.len() as f64)
        })
        .collect();
    let after = if matched.len() == treated.len() {
        let mm = matched.iter().sum::<f64>() / matched.len() as f64;
        Some((mt - mm) / pooled)
    } else {
        None
    };
    (Some(before), after)
}

pub fn balance_diagnostics(
    ds: &ObservationalDataset,
    red: Option<&ReducedCovariates>,
    result: &MatchResult,
) -> Result<BalanceReport> {
    if result.n() != ds.n() {
        return Err(Error::Shape("match result and dataset differ in size".into()));
    }
    let mut rows = Vec::new();
    for (j, name) in ds.column_names().iter().enumerate() {
        let col: Vec<f64> = ds.x().column(j).iter().cloned().collect();
        let (before, after) = smd_column(&col, result);
        rows.push(BalanceRow {
            name: name.clone(),
            space: BalanceSpace::Covariate,
            smd_before: before,
            smd_after: after,
        });
    }
    if let Some(red) = red {
        for j in 0..red.k() {
            let col: Vec<f64> = red.z.column(j).iter().cloned().collect();
            let (before, after) = smd_column(&col, result);
            rows.push(BalanceRow {
                name: format!("z{}", j + 1),
                space: BalanceSpace::Reduced,
                smd_before: before,
                smd_after: after,
            });
        }
    }
    Ok(BalanceReport { rows })
}
