//! End-to-end preparation: standardize, detect groups, impute, and assemble
//! the moment system.

use nalgebra::DVector;

use crate::data::{DataSet, Standardization};
use crate::error::Result;
use crate::estimating::EstimatingSystem;
use crate::imputation::{impute, ImputationOptions, ImputationSet};
use crate::patterns::{detect_patterns, PatternIndex, DEFAULT_MIN_GROUP_SIZE};

#[derive(Debug, Clone)]
pub struct PrepareOptions {
    pub imputation: ImputationOptions,
    /// Groups smaller than this get no moment block of their own.
    pub min_group_size: usize,
    /// Scale columns to unit observed standard deviation.
    pub standardize: bool,
    /// Also center columns and the response.
    pub center: bool,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            imputation: ImputationOptions::default(),
            min_group_size: DEFAULT_MIN_GROUP_SIZE,
            standardize: true,
            center: false,
        }
    }
}

impl PrepareOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            imputation: ImputationOptions::with_seed(seed),
            ..Self::default()
        }
    }
}

/// Everything a fit needs, on the standardized scale.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: DataSet,
    pub standardization: Standardization,
    pub idx: PatternIndex,
    pub imputations: ImputationSet,
    pub system: EstimatingSystem,
    pub options: PrepareOptions,
}

impl Prepared {
    /// Original-scale `(intercept, coefficients)`.
    pub fn to_original(&self, beta_std: &DVector<f64>) -> (f64, DVector<f64>) {
        self.standardization.to_original(beta_std)
    }

    pub fn n_rows(&self) -> usize {
        self.data.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.n_cols()
    }
}

pub fn prepare(data: &DataSet, opts: &PrepareOptions) -> Result<Prepared> {
    let standardization = if opts.standardize {
        Standardization::fit_with(data, opts.center)
    } else {
        Standardization::identity(data.n_cols())
    };
    let data = if opts.standardize {
        standardization.apply(data)?
    } else {
        data.clone()
    };
    let idx = detect_patterns(&data)?;
    let imputations = impute(&data, &idx, &opts.imputation)?;
    let system = EstimatingSystem::build(&idx, &imputations, data.response(), opts.min_group_size)?;
    Ok(Prepared {
        data,
        standardization,
        idx,
        imputations,
        system,
        options: opts.clone(),
    })
}
