//! Reference matchers: Mahalanobis matching on the raw covariates (NNM) and
//! propensity score matching (PSM) with a main-effects logistic model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::matching::{match_units, match_with, reduce, MatchOptions, MatchResult, ReducedCovariates};
use crate::sdr_ire::SdrBasis;

pub const SCORE_CLIP: f64 = 1e-6;
const GRADIENT_TOL: f64 = 1e-8;
const MAX_ITERATIONS: usize = 100;
const DIVERGENCE_NORM: f64 = 1e4;
const SEPARATION_RESIDUAL: f64 = 1e-6;

/// Logistic model for `P(T = 1 | X)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropensityModel {
    /// Intercept followed by one slope per covariate.
    pub coefficients: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl PropensityModel {
    pub fn linear_index(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let slopes = self.coefficients.rows(1, self.coefficients.len() - 1);
        x * slopes + DVector::from_element(x.nrows(), self.coefficients[0])
    }

    /// Scores clipped to `[1e-6, 1 - 1e-6]`.
    pub fn scores(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.linear_index(x)
            .iter()
            .map(|&v| sigmoid(v).clamp(SCORE_CLIP, 1.0 - SCORE_CLIP))
            .collect()
    }
}

/// Maximum-likelihood fit by iteratively reweighted least squares.
///
/// Constant covariates carry no information beyond the intercept; their slopes
/// are fixed at zero.
pub fn fit_propensity(ds: &ObservationalDataset) -> Result<PropensityModel> {
    let (n, p) = ds.x().shape();
    let active: Vec<usize> = (0..p)
        .filter(|&j| {
            let col = ds.x().column(j);
            col.iter().any(|&v| v != col[0])
        })
        .collect();
    let d = active.len() + 1;
    let design = DMatrix::from_fn(n, d, |i, j| if j == 0 { 1.0 } else { ds.x()[(i, active[j - 1])] });
    let t = DVector::from_iterator(n, ds.treatment().iter().map(|&t| f64::from(u8::from(t))));

    let mut beta = DVector::<f64>::zeros(d);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..=MAX_ITERATIONS {
        let eta = &design * &beta;
        let mu = eta.map(sigmoid);
        let resid = &t - &mu;
        // Every unit fitted almost exactly: the likelihood has no finite maximizer.
        if it > 0 && resid.amax() < SEPARATION_RESIDUAL {
            return Err(Error::Separation {
                norm: beta.norm(),
                iterations: it,
            });
        }
        let gradient = design.transpose() * resid;
        if gradient.norm() < GRADIENT_TOL {
            converged = true;
            iterations = it;
            break;
        }
        if it == MAX_ITERATIONS {
            iterations = it;
            break;
        }
        let w = mu.map(|m| m * (1.0 - m));
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let hessian = design.transpose() * weighted;
        let norm = beta.norm();
        let factor = SpdFactor::new(&hessian, "logistic information matrix", 0.0).map_err(|_| {
            Error::Separation {
                norm,
                iterations: it,
            }
        })?;
        beta += factor.solve_vec(&gradient);
        if !(beta.norm() <= DIVERGENCE_NORM) {
            return Err(Error::Separation {
                norm: beta.norm(),
                iterations: it + 1,
            });
        }
    }

    let mut coefficients = DVector::<f64>::zeros(p + 1);
    coefficients[0] = beta[0];
    for (slot, &j) in active.iter().enumerate() {
        coefficients[j + 1] = beta[slot + 1];
    }
    Ok(PropensityModel {
        coefficients,
        converged,
        iterations,
    })
}

/// Mahalanobis matching on the full covariate vector (`β = I_p`).
pub fn nnm_match(ds: &ObservationalDataset, opts: &MatchOptions, ridge: Option<f64>) -> Result<(ReducedCovariates, MatchResult)> {
    let red = reduce(ds, &SdrBasis::identity(ds.p()), ridge)?;
    let result = match_units(&red, ds, opts)?;
    Ok((red, result))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreScale {
    #[default]
    Score,
    Logit,
}

/// One-dimensional nearest-neighbour matching on `|e(x_i) - e(x_j)|` (or the
/// logit of the clipped score).
pub fn psm_match(
    ds: &ObservationalDataset,
    model: &PropensityModel,
    opts: &MatchOptions,
    scale: ScoreScale,
) -> Result<MatchResult> {
    if model.coefficients.len() != ds.p() + 1 {
        return Err(Error::Shape(format!(
            "propensity model has {} coefficients for {} covariates",
            model.coefficients.len(),
            ds.p()
        )));
    }
    let mut scores = model.scores(ds.x());
    if scale == ScoreScale::Logit {
        for s in &mut scores {
            *s = (*s / (1.0 - *s)).ln();
        }
    }
    match_on_scores(ds, &scores, opts)
}

/// Matching on an arbitrary scalar score per unit.
pub fn match_on_scores(ds: &ObservationalDataset, scores: &[f64], opts: &MatchOptions) -> Result<MatchResult> {
    if scores.len() != ds.n() {
        return Err(Error::Shape("one score per unit required".into()));
    }
    match_with(ds.treatment(), ds.y().as_slice(), opts, |i, j| (scores[i] - scores[j]).abs())
}
