//! Treatment effect estimation by matching on covariates reduced with the
//! inverse regression estimator (IRE), with NNM and PSM baselines and
//! semi-synthetic benchmark generators.

pub mod baselines;
pub mod bench;
pub mod data;
pub mod effects;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod matching;
pub mod sdr_ire;

pub use data::{load_csv, standardize, write_csv, ColumnKind, CsvSchema, ObservationalDataset};
pub use effects::{EffectEstimate, EffectKind, MetricReport};
pub use error::{Error, ErrorClass, Result};
pub use estimator::{run_method, EstimatorConfig, Method, MethodOutput};
pub use matching::{MatchDirection, MatchOptions, MatchResult};
pub use sdr_ire::{estimate_basis, fit_ire, IreFit, SdrBasis, SdrOptions, WeightingKind};
