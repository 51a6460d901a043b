//! Observational datasets: construction, CSV ingestion, standardization and
//! ridge-regularized covariance estimation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sample_covariance, SpdFactor};

/// Scale factor of the default covariance ridge, relative to `trace / p`.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

impl ColumnKind {
    /// Binary when every value is exactly 0 or 1.
    pub fn infer(values: impl IntoIterator<Item = f64>) -> Self {
        if values.into_iter().all(|v| v == 0.0 || v == 1.0) {
            ColumnKind::Binary
        } else {
            ColumnKind::Continuous
        }
    }
}

/// Covariates, a binary treatment and an outcome for `n` units.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalDataset {
    x: DMatrix<f64>,
    treatment: Vec<bool>,
    y: DVector<f64>,
    y1_true: Option<DVector<f64>>,
    y0_true: Option<DVector<f64>>,
    column_names: Vec<String>,
    column_kinds: Vec<ColumnKind>,
}

impl ObservationalDataset {
    /// Builds a dataset; column kinds are inferred when `kinds` is `None`.
    pub fn new(
        x: DMatrix<f64>,
        treatment: Vec<bool>,
        y: DVector<f64>,
        column_names: Vec<String>,
        kinds: Option<Vec<ColumnKind>>,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 || p < 1 {
            return Err(Error::InvalidData(format!(
                "need at least 2 units and 1 covariate, got {n}x{p}"
            )));
        }
        if treatment.len() != n || y.len() != n {
            return Err(Error::Shape(format!(
                "covariates have {n} rows but treatment has {} and outcome {}",
                treatment.len(),
                y.len()
            )));
        }
        if column_names.len() != p {
            return Err(Error::Shape(format!(
                "{p} covariate columns but {} names",
                column_names.len()
            )));
        }
        if let Some((idx, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite covariate at row {}, column `{}`",
                idx % n + 1,
                column_names[idx / n]
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite outcome at row {}", i + 1)));
        }
        if !treatment.iter().any(|&t| t) || treatment.iter().all(|&t| t) {
            return Err(Error::InvalidData(
                "treatment must contain both treated and control units".into(),
            ));
        }
        let column_kinds = match kinds {
            Some(k) if k.len() != p => {
                return Err(Error::Shape(format!("{p} covariate columns but {} kinds", k.len())))
            }
            Some(k) => k,
            None => x
                .column_iter()
                .map(|c| ColumnKind::infer(c.iter().cloned()))
                .collect(),
        };
        Ok(Self {
            x,
            treatment,
            y,
            y1_true: None,
            y0_true: None,
            column_names,
            column_kinds,
        })
    }

    /// Attaches true potential outcomes (synthetic data only).
    pub fn with_potential_outcomes(mut self, y1: DVector<f64>, y0: DVector<f64>) -> Result<Self> {
        let n = self.n();
        if y1.len() != n || y0.len() != n {
            return Err(Error::Shape(format!(
                "potential outcomes must have length {n}, got {} and {}",
                y1.len(),
                y0.len()
            )));
        }
        if y1.iter().chain(y0.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite potential outcome".into()));
        }
        self.y1_true = Some(y1);
        self.y0_true = Some(y0);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_kinds(&self) -> &[ColumnKind] {
        &self.column_kinds
    }

    pub fn potential_outcomes(&self) -> Option<(&DVector<f64>, &DVector<f64>)> {
        match (&self.y1_true, &self.y0_true) {
            (Some(y1), Some(y0)) => Some((y1, y0)),
            _ => None,
        }
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.treatment[i]).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.treatment[i]).collect()
    }

    /// True unit-level effects `y1 - y0`, when known.
    pub fn true_effects(&self) -> Option<Vec<f64>> {
        self.potential_outcomes()
            .map(|(y1, y0)| y1.iter().zip(y0.iter()).map(|(a, b)| a - b).collect())
    }

    /// Copy of the dataset with covariates replaced, keeping everything else.
    pub fn with_covariates(&self, x: DMatrix<f64>) -> Result<Self> {
        if x.shape() != self.x.shape() {
            return Err(Error::Shape(format!(
                "replacement covariates are {:?}, expected {:?}",
                x.shape(),
                self.x.shape()
            )));
        }
        let mut out = self.clone();
        out.x = x;
        Ok(out)
    }

    /// Rows selected (and possibly reordered) by `rows`.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(rows);
        let t = rows.iter().map(|&i| self.treatment[i]).collect();
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        let mut out = Self::new(x, t, y, self.column_names.clone(), Some(self.column_kinds.clone()))?;
        if let Some((y1, y0)) = self.potential_outcomes() {
            out = out.with_potential_outcomes(
                DVector::from_iterator(rows.len(), rows.iter().map(|&i| y1[i])),
                DVector::from_iterator(rows.len(), rows.iter().map(|&i| y0[i])),
            )?;
        }
        Ok(out)
    }
}

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub treatment: String,
    pub outcome: String,
    /// Covariate columns; every remaining column when `None`.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default)]
    pub y1: Option<String>,
    #[serde(default)]
    pub y0: Option<String>,
}

impl CsvSchema {
    pub fn new(treatment: impl Into<String>, outcome: impl Into<String>) -> Self {
        Self {
            treatment: treatment.into(),
            outcome: outcome.into(),
            covariates: None,
            y1: None,
            y0: None,
        }
    }
}

/// Parses `t=COL,y=COL[,y1=COL,y0=COL][,x=A;B;C]`.
impl FromStr for CsvSchema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut treatment = None;
        let mut outcome = None;
        let mut schema = CsvSchema::new("", "");
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("schema entry `{part}` is not KEY=COLUMN"))
            })?;
            let value = value.trim().to_string();
            if value.is_empty() {
                return Err(Error::InvalidArgument(format!("schema key `{key}` has no column")));
            }
            match key.trim() {
                "t" => treatment = Some(value),
                "y" => outcome = Some(value),
                "y1" => schema.y1 = Some(value),
                "y0" => schema.y0 = Some(value),
                "x" => {
                    schema.covariates = Some(value.split(';').map(|c| c.trim().to_string()).collect())
                }
                other => {
                    return Err(Error::InvalidArgument(format!("unknown schema key `{other}`")))
                }
            }
        }
        schema.treatment = treatment
            .ok_or_else(|| Error::InvalidArgument("schema is missing the treatment column (t=COL)".into()))?;
        schema.outcome = outcome
            .ok_or_else(|| Error::InvalidArgument("schema is missing the outcome column (y=COL)".into()))?;
        if schema.y1.is_some() != schema.y0.is_some() {
            return Err(Error::InvalidArgument("y1 and y0 must be given together".into()));
        }
        Ok(schema)
    }
}

impl fmt::Display for CsvSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={},y={}", self.treatment, self.outcome)?;
        if let (Some(y1), Some(y0)) = (&self.y1, &self.y0) {
            write!(f, ",y1={y1},y0={y0}")?;
        }
        if let Some(cols) = &self.covariates {
            write!(f, ",x={}", cols.join(";"))?;
        }
        Ok(())
    }
}

/// Reads a dataset from a headed, comma-separated file.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<ObservationalDataset> {
    let path = path.as_ref();
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| csv_err(format!("column `{name}` not found in header")))
    };
    let t_col = find(&schema.treatment)?;
    let y_col = find(&schema.outcome)?;
    let po_cols = match (&schema.y1, &schema.y0) {
        (Some(a), Some(b)) => Some((find(a)?, find(b)?)),
        (None, None) => None,
        _ => return Err(Error::InvalidArgument("y1 and y0 must be given together".into())),
    };
    let x_cols: Vec<usize> = match &schema.covariates {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|&c| {
                c != t_col
                    && c != y_col
                    && po_cols.is_none_or(|(a, b)| c != a && c != b)
            })
            .collect(),
    };
    if x_cols.is_empty() {
        return Err(csv_err("no covariate columns".into()));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        // Data rows are numbered from 2 (the header is line 1).
        let line = idx + 2;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => csv_err(format!(
                "row {line}: expected {expected_len} fields, found {len}"
            )),
            _ => csv_err(format!("row {line}: {e}")),
        })?;
        let parsed = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if cell.is_empty() {
                    return Err(csv_err(format!("row {line}, column `{}`: missing value", header[c])));
                }
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        csv_err(format!(
                            "row {line}, column `{}`: non-numeric value `{cell}`",
                            header[c]
                        ))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(parsed);
    }

    let n = rows.len();
    let treatment = rows
        .iter()
        .enumerate()
        .map(|(i, r)| match r[t_col] {
            v if v == 1.0 => Ok(true),
            v if v == 0.0 => Ok(false),
            v => Err(csv_err(format!(
                "row {}, column `{}`: non-binary treatment value {v}",
                i + 2,
                header[t_col]
            ))),
        })
        .collect::<Result<Vec<bool>>>()?;
    let x = DMatrix::from_fn(n, x_cols.len(), |i, j| rows[i][x_cols[j]]);
    let y = DVector::from_iterator(n, rows.iter().map(|r| r[y_col]));
    let names = x_cols.iter().map(|&c| header[c].clone()).collect();
    let ds = ObservationalDataset::new(x, treatment, y, names, None)?;
    match po_cols {
        Some((a, b)) => ds.with_potential_outcomes(
            DVector::from_iterator(n, rows.iter().map(|r| r[a])),
            DVector::from_iterator(n, rows.iter().map(|r| r[b])),
        ),
        None => Ok(ds),
    }
}

/// Writes `ds` as CSV with columns `covariates..., t, y[, y1, y0]` and returns
/// the schema that reads it back.
pub fn write_csv(ds: &ObservationalDataset, path: impl AsRef<Path>) -> Result<CsvSchema> {
    let path = path.as_ref();
    let mut schema = CsvSchema::new("t", "y");
    schema.covariates = Some(ds.column_names().to_vec());
    let reserved = ["t", "y", "y1", "y0"];
    if ds.column_names().iter().any(|c| reserved.contains(&c.as_str())) {
        return Err(Error::InvalidData(
            "covariate names collide with reserved columns t/y/y1/y0".into(),
        ));
    }
    let io_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = csv::Writer::from_path(path).map_err(io_err)?;
    let mut header: Vec<String> = ds.column_names().to_vec();
    header.extend(["t".to_string(), "y".to_string()]);
    let po = ds.potential_outcomes();
    if po.is_some() {
        header.extend(["y1".to_string(), "y0".to_string()]);
        schema.y1 = Some("y1".into());
        schema.y0 = Some("y0".into());
    }
    writer.write_record(&header).map_err(io_err)?;
    for i in 0..ds.n() {
        let mut row: Vec<String> = ds.x().row(i).iter().map(|v| v.to_string()).collect();
        row.push(if ds.treatment()[i] { "1" } else { "0" }.to_string());
        row.push(ds.y()[i].to_string());
        if let Some((y1, y0)) = po {
            row.push(y1[i].to_string());
            row.push(y0[i].to_string());
        }
        writer.write_record(&row).map_err(io_err)?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(schema)
}

/// Per-column affine map applied by [`standardize`]; `None` for binary columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub columns: Vec<Option<ColumnScale>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, col) in self.columns.iter().enumerate() {
            if let Some(c) = col {
                out.column_mut(j).apply(|v| *v = (*v - c.mean) / c.scale);
            }
        }
        out
    }

    pub fn invert(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = z.clone();
        for (j, col) in self.columns.iter().enumerate() {
            if let Some(c) = col {
                out.column_mut(j).apply(|v| *v = *v * c.scale + c.mean);
            }
        }
        out
    }
}

/// Centers and scales continuous columns to mean 0 and sample sd 1; binary
/// columns pass through unchanged.
pub fn standardize(ds: &ObservationalDataset) -> Result<(ObservationalDataset, Standardization)> {
    let n = ds.n() as f64;
    let mut columns = Vec::with_capacity(ds.p());
    for (j, kind) in ds.column_kinds().iter().enumerate() {
        match kind {
            ColumnKind::Binary => columns.push(None),
            ColumnKind::Continuous => {
                let col = ds.x().column(j);
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let scale = var.sqrt();
                if !(scale > 0.0) || !scale.is_finite() {
                    return Err(Error::ZeroVariance(ds.column_names()[j].clone()));
                }
                columns.push(Some(ColumnScale { mean, scale }));
            }
        }
    }
    let record = Standardization { columns };
    let x = record.apply(ds.x());
    Ok((ds.with_covariates(x)?, record))
}

/// Sample covariance of the covariates with a factored ridge-regularized form.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    pub sigma: DMatrix<f64>,
    pub ridge: f64,
    pub mean: DVector<f64>,
    factor: SpdFactor,
}

impl CovarianceModel {
    /// Estimates the covariance of the rows of `x`; `ridge = None` selects the
    /// scale-aware default `1e-8 * trace / p`.
    pub fn estimate(x: &DMatrix<f64>, ridge: Option<f64>, what: &str) -> Result<Self> {
        if x.nrows() < 2 {
            return Err(Error::InvalidData("covariance needs at least 2 rows".into()));
        }
        let (sigma, mean) = sample_covariance(x);
        let p = sigma.nrows();
        let ridge = match ridge {
            Some(r) if !(r >= 0.0) || !r.is_finite() => {
                return Err(Error::InvalidArgument(format!("ridge must be nonnegative, got {r}")))
            }
            Some(r) => r,
            None => DEFAULT_RIDGE_SCALE * sigma.trace() / p as f64,
        };
        let regularized = &sigma + DMatrix::<f64>::identity(p, p) * ridge;
        let factor = SpdFactor::new(&regularized, what, ridge)?;
        Ok(Self {
            sigma,
            ridge,
            mean,
            factor,
        })
    }

    /// Factor of `sigma + ridge * I`.
    pub fn factor(&self) -> &SpdFactor {
        &self.factor
    }

    pub fn regularized(&self) -> DMatrix<f64> {
        let p = self.sigma.nrows();
        &self.sigma + DMatrix::<f64>::identity(p, p) * self.ridge
    }
}

pub fn covariance(ds: &ObservationalDataset, ridge: Option<f64>) -> Result<CovarianceModel> {
    CovarianceModel::estimate(ds.x(), ridge, "covariate covariance")
}
