//! One entry point for every matching method: MIRE (matching on the IRE
//! reduction), NNM and PSM.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{fit_propensity, nnm_match, psm_match, PropensityModel, ScoreScale};
use crate::data::{standardize, ObservationalDataset, Standardization};
use crate::effects::{ate, att, EffectEstimate};
use crate::error::{Error, Result};
use crate::matching::{
    balance_diagnostics, match_units, reduce, BalanceReport, MatchDirection, MatchOptions, MatchResult,
    ReducedCovariates,
};
use crate::sdr_ire::{estimate_basis, IreFit, SdrOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mire,
    Nnm,
    Psm,
    /// PSM on the logit of the score.
    PsmLogit,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mire => "mire",
            Method::Nnm => "nnm",
            Method::Psm => "psm",
            Method::PsmLogit => "psm-logit",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mire" => Ok(Method::Mire),
            "nnm" => Ok(Method::Nnm),
            "psm" => Ok(Method::Psm),
            "psm-logit" | "psm_logit" => Ok(Method::PsmLogit),
            other => Err(Error::InvalidArgument(format!(
                "unknown method `{other}` (expected mire, nnm, psm or psm-logit)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Slicing and fit settings; `sdr.ridge` is also the covariance ridge for NNM.
    pub sdr: SdrOptions,
    pub matching: MatchOptions,
    /// Standardize continuous covariates before estimation.
    pub standardize: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            sdr: SdrOptions::default(),
            matching: MatchOptions::default(),
            standardize: true,
        }
    }
}

/// Everything a method produced on one dataset.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub method: Method,
    pub result: MatchResult,
    pub reduced: Option<ReducedCovariates>,
    pub fit: Option<IreFit>,
    pub propensity: Option<PropensityModel>,
    pub standardization: Option<Standardization>,
    /// The dataset the method actually matched on (standardized if requested).
    pub working: ObservationalDataset,
}

impl MethodOutput {
    pub fn ate(&self) -> Result<EffectEstimate> {
        ate(&self.result)
    }

    pub fn att(&self) -> Result<EffectEstimate> {
        att(&self.result)
    }

    pub fn balance(&self) -> Result<BalanceReport> {
        balance_diagnostics(&self.working, self.reduced.as_ref(), &self.result)
    }
}

pub fn run_method(ds: &ObservationalDataset, method: Method, cfg: &EstimatorConfig) -> Result<MethodOutput> {
    let (working, standardization) = if cfg.standardize {
        let (w, s) = standardize(ds)?;
        (w, Some(s))
    } else {
        (ds.clone(), None)
    };
    let mut reduced = None;
    let mut fit = None;
    let mut propensity = None;
    let result = match method {
        Method::Mire => {
            let f = estimate_basis(&working, &cfg.sdr)?;
            let red = reduce(&working, &f.basis, None)?;
            let result = match_units(&red, &working, &cfg.matching)?;
            reduced = Some(red);
            fit = Some(f);
            result
        }
        Method::Nnm => {
            let (red, result) = nnm_match(&working, &cfg.matching, cfg.sdr.ridge)?;
            reduced = Some(red);
            result
        }
        Method::Psm | Method::PsmLogit => {
            let model = fit_propensity(&working)?;
            let scale = if method == Method::Psm {
                ScoreScale::Score
            } else {
                ScoreScale::Logit
            };
            let result = psm_match(&working, &model, &cfg.matching, scale)?;
            propensity = Some(model);
            result
        }
    };
    Ok(MethodOutput {
        method,
        result,
        reduced,
        fit,
        propensity,
        standardization,
        working,
    })
}

/// Convenience for ATT-only runs.
pub fn att_config(mut cfg: EstimatorConfig) -> EstimatorConfig {
    cfg.matching.direction = MatchDirection::Att;
    cfg
}
