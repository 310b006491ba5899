//! Variable selection for multi-source data with block-wise missing
//! covariates, via multiple block-wise imputation and a SCAD-penalized
//! generalized method of moments.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimating;
pub mod imputation;
pub mod io;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod patterns;
pub mod penalty;
pub mod reduction;
pub mod seed;
pub mod simulation;
pub mod tuning;

#[cfg(test)]
pub(crate) mod testutil;

pub use data::{parse_source_spans, DataSet, Standardization};
pub use error::{MbiError, Result};
pub use imputation::{ImputationOptions, ImputationSet, ImputedView};
pub use patterns::{detect_patterns, validate_for_fit, PatternIndex};
pub use estimating::{EstimatingSystem, MomentBlock};
pub use model::{prepare, PrepareOptions, Prepared};
pub use objective::{GmmObjective, GradientRule};
pub use optimizer::{fit, fit_from, FitOptions, FitResult, Weighting};
pub use penalty::PenaltySpec;
pub use reduction::{build_reduction, ReductionMap};
pub use diagnostics::{efficiency_gap, efficiency_gap_at, empirical_covariance, EfficiencyReport};
pub use io::{read_csv, read_csv_path, write_coefficients, CoefficientRow};
pub use simulation::{SettingSpec, Method};
pub use tuning::{default_grid, mbi_bic, rss, run_path, PathOptions, PathResult};
