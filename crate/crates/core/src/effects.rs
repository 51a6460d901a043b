//! Causal estimands from matched results and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::MatchResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EffectKind {
    Ate,
    Att,
    Ite,
}

/// An averaged effect together with the unit-level effects it averages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub kind: EffectKind,
    /// Mean of `unit_effects`.
    pub value: f64,
    /// Sample standard deviation of the unit-level effects (within-run dispersion).
    pub sd: f64,
    pub n_used: usize,
    #[serde(skip)]
    pub unit_effects: Vec<f64>,
}

impl EffectEstimate {
    fn from_effects(kind: EffectKind, unit_effects: Vec<f64>) -> Result<Self> {
        if unit_effects.is_empty() {
            return Err(Error::InvalidData("no unit-level effects to average".into()));
        }
        let value = mean(&unit_effects);
        let sd = if unit_effects.len() > 1 { sd(&unit_effects)? } else { 0.0 };
        Ok(Self {
            kind,
            value,
            sd,
            n_used: unit_effects.len(),
            unit_effects,
        })
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn unit_effect(result: &MatchResult, i: usize) -> Option<f64> {
    Some(result.y1_hat[i]? - result.y0_hat[i]?)
}

/// `ŷ1_i - ŷ0_i` for every unit; requires both-direction matching.
pub fn ite(result: &MatchResult) -> Result<Vec<f64>> {
    (0..result.n())
        .map(|i| {
            unit_effect(result, i).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unit {i} has no imputed counterfactual; ITE and ATE need both-direction matching"
                ))
            })
        })
        .collect()
}

pub fn ite_estimate(result: &MatchResult) -> Result<EffectEstimate> {
    EffectEstimate::from_effects(EffectKind::Ite, ite(result)?)
}

pub fn ate(result: &MatchResult) -> Result<EffectEstimate> {
    EffectEstimate::from_effects(EffectKind::Ate, ite(result)?)
}

pub fn att(result: &MatchResult) -> Result<EffectEstimate> {
    let effects = (0..result.n())
        .filter(|&i| result.treatment[i])
        .map(|i| {
            unit_effect(result, i)
                .ok_or_else(|| Error::InvalidArgument(format!("treated unit {i} was not matched")))
        })
        .collect::<Result<Vec<f64>>>()?;
    EffectEstimate::from_effects(EffectKind::Att, effects)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::InvalidData("empty input".into()));
    }
    Ok(())
}

/// Mean squared error of unit effects, `(1/N) Σ ((y1 - y0) - (ŷ1 - ŷ0))²`
/// (no square root).
pub fn pehe(ite_hat: &[f64], y1_true: &[f64], y0_true: &[f64]) -> Result<f64> {
    check_lengths(ite_hat.len(), y1_true.len())?;
    check_lengths(ite_hat.len(), y0_true.len())?;
    let total: f64 = ite_hat
        .iter()
        .zip(y1_true.iter().zip(y0_true))
        .map(|(est, (a, b))| ((a - b) - est).powi(2))
        .sum();
    Ok(total / ite_hat.len() as f64)
}

pub fn rmse(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_lengths(estimates.len(), truths.len())?;
    let mse = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e - t).powi(2))
        .sum::<f64>()
        / estimates.len() as f64;
    Ok(mse.sqrt())
}

/// Sample standard deviation (denominator `n - 1`).
pub fn sd(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InvalidData("standard deviation needs at least 2 values".into()));
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0);
    Ok(var.sqrt())
}

pub fn bias(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_lengths(estimates.len(), truths.len())?;
    Ok(estimates.iter().zip(truths).map(|(e, t)| e - t).sum::<f64>() / estimates.len() as f64)
}

/// Flat metric record for one estimate against known truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub pehe: f64,
    pub sqrt_pehe: f64,
    /// RMSE of the unit-level effects.
    pub rmse: f64,
    /// Dispersion of the estimated unit-level effects.
    pub sd: f64,
    /// Mean effect error.
    pub bias: f64,
}

impl MetricReport {
    pub fn evaluate(ite_hat: &[f64], true_effects: &[f64]) -> Result<Self> {
        let zeros = vec![0.0; true_effects.len()];
        let pehe = pehe(ite_hat, true_effects, &zeros)?;
        Ok(Self {
            pehe,
            sqrt_pehe: pehe.sqrt(),
            rmse: rmse(ite_hat, true_effects)?,
            sd: if ite_hat.len() > 1 { sd(ite_hat)? } else { 0.0 },
            bias: bias(ite_hat, true_effects)?,
        })
    }
}
