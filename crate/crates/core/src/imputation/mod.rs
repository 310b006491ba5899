//! Multiple block-wise imputation.
//!
//! For group `r`, donor `k ∈ G(r)` and missing column `j ∈ m(r)` we fit
//! `E(X_j | X_{J(r,k)})` on every row that observes `j` and all of
//! `J(r,k)`, pooling across groups. Each donor then yields one imputed view
//! of the group's rows.

pub mod glm;

use std::collections::HashMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::DataSet;
use crate::error::{MbiError, Result};
use crate::patterns::PatternIndex;
use crate::seed::derive_seed;

pub use glm::{Family, LassoOptions, LinearFit};

/// Response family of a conditional model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelFamily {
    GaussianIdentity,
    /// Binary target coded `{low, high}`; the linear predictor is the logit
    /// of `P(X_j = high)`.
    BinomialLogit { low: f64, high: f64 },
}

/// A fitted conditional-expectation model `E(X_target | X_predictors)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalModel {
    pub target: usize,
    pub predictors: Vec<usize>,
    pub family: ModelFamily,
    pub intercept: f64,
    pub coef: DVector<f64>,
    pub regularized: bool,
    pub pooled_rows: Vec<usize>,
}

impl ConditionalModel {
    /// Conditional expectation for one row of predictor values (aligned with
    /// `predictors`). Binary targets return the expected value, not a label.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let eta = self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        match self.family {
            ModelFamily::GaussianIdentity => eta,
            ModelFamily::BinomialLogit { low, high } => low + (high - low) * glm::sigmoid(eta),
        }
    }

    pub fn is_intercept_only(&self) -> bool {
        self.coef.iter().all(|&b| b == 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct ImputationOptions {
    pub lasso: LassoOptions,
    /// Fit independent models on the rayon pool.
    pub parallel: bool,
    /// Least squares needs more than `ols_row_ratio · |predictors|` rows;
    /// smaller pools take the L1 route.
    pub ols_row_ratio: f64,
}

impl Default for ImputationOptions {
    fn default() -> Self {
        Self {
            lasso: LassoOptions::default(),
            parallel: true,
            ols_row_ratio: 1.0,
        }
    }
}

impl ImputationOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            lasso: LassoOptions {
                seed,
                ..LassoOptions::default()
            },
            ..Self::default()
        }
    }
}

/// Distinct observed values of a column, up to three.
fn distinct_observed(data: &DataSet, col: usize, rows: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut vals: Vec<f64> = Vec::new();
    for i in rows {
        if !data.is_observed(i, col) {
            continue;
        }
        let v = data.value(i, col);
        if !vals.contains(&v) {
            vals.push(v);
            if vals.len() > 2 {
                break;
            }
        }
    }
    vals.sort_by(f64::total_cmp);
    vals
}

/// A column is binary iff its observed values take at most two distinct values.
pub fn is_binary_column(data: &DataSet, col: usize) -> bool {
    distinct_observed(data, col, 0..data.n_rows()).len() <= 2
}

/// Fits `E(X_target | X_predictors)` on the given rows.
///
/// Unregularized when `rows.len() > ols_row_ratio · predictors.len()`,
/// falling back to the L1 route when the normal equations are singular.
pub fn fit_model_on_rows(
    data: &DataSet,
    target: usize,
    predictors: &[usize],
    rows: Vec<usize>,
    opts: &ImputationOptions,
) -> Result<ConditionalModel> {
    if rows.is_empty() {
        return Err(MbiError::NoDonorRows { target });
    }
    let x = DMatrix::from_fn(rows.len(), predictors.len(), |a, b| {
        data.value(rows[a], predictors[b])
    });
    let y = DVector::from_fn(rows.len(), |a, _| data.value(rows[a], target));
    let column_levels = distinct_observed(data, target, 0..data.n_rows());
    let pooled_levels = distinct_observed(data, target, rows.iter().copied());

    let constant = |value: f64| ConditionalModel {
        target,
        predictors: predictors.to_vec(),
        family: ModelFamily::GaussianIdentity,
        intercept: value,
        coef: DVector::zeros(predictors.len()),
        regularized: false,
        pooled_rows: rows.clone(),
    };
    if pooled_levels.len() == 1 {
        return Ok(constant(pooled_levels[0]));
    }

    let (family, y_fit) = if column_levels.len() == 2 {
        let (low, high) = (column_levels[0], column_levels[1]);
        let y01 = y.map(|v| if v == high { 1.0 } else { 0.0 });
        (ModelFamily::BinomialLogit { low, high }, y01)
    } else {
        (ModelFamily::GaussianIdentity, y.clone())
    };
    let glm_family = match family {
        ModelFamily::GaussianIdentity => Family::Gaussian,
        ModelFamily::BinomialLogit { .. } => Family::Binomial,
    };

    let mut lasso = opts.lasso.clone();
    lasso.seed = derive_seed(
        opts.lasso.seed,
        &std::iter::once(target as u64)
            .chain(predictors.iter().map(|&c| c as u64 + 1))
            .collect::<Vec<_>>(),
    );

    let unregularized = if rows.len() as f64 > opts.ols_row_ratio.max(1.0) * predictors.len() as f64 {
        let fit = match glm_family {
            Family::Gaussian => glm::fit_ols(&x, &y_fit),
            Family::Binomial => glm::fit_logistic_irls(&x, &y_fit),
        };
        match fit {
            Ok(f) => Some(f),
            Err(MbiError::SingularDesign { rcond }) => {
                warn!(
                    "imputation model for column {target}: singular design (rcond {rcond:.2e}), using L1 route"
                );
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let (fit, regularized) = match unregularized {
        Some(f) => (f, false),
        None => (glm::lasso_cv(&x, &y_fit, glm_family, &lasso), true),
    };

    Ok(ConditionalModel {
        target,
        predictors: predictors.to_vec(),
        family,
        intercept: fit.intercept,
        coef: fit.coef,
        regularized,
        pooled_rows: rows,
    })
}

/// Fits `E(X_j | X_{J(r,k)})` for `j ∈ m(r)`, pooling every row that observes
/// `j` and all of `J(r,k)`. `k` is the donor's group index.
pub fn fit_conditional(
    data: &DataSet,
    idx: &PatternIndex,
    r: usize,
    k: usize,
    j: usize,
    opts: &ImputationOptions,
) -> Result<ConditionalModel> {
    let group = &idx.groups[r];
    let pos = group
        .donors
        .iter()
        .position(|&d| d == k)
        .ok_or_else(|| MbiError::InvalidArgument(format!("group {k} is not a donor of group {r}")))?;
    if group.missing.binary_search(&j).is_err() {
        return Err(MbiError::InvalidArgument(format!(
            "column {j} is not missing in group {r}"
        )));
    }
    let predictors = &group.overlaps[pos];
    let mut cols = predictors.clone();
    cols.push(j);
    let rows = idx.rows_observing(&cols);
    fit_model_on_rows(data, j, predictors, rows, opts)
}

/// One imputed copy of a group's rows, filled using donor `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedView {
    pub group: usize,
    pub donor: usize,
    pub rows: Vec<usize>,
    /// `n_r × p`: observed cells copied, missing cells predicted.
    pub values: DMatrix<f64>,
}

/// All fitted models and imputed views, `views[r][d]` for the `d`-th donor of
/// group `r`.
#[derive(Debug, Clone)]
pub struct ImputationSet {
    pub models: Vec<ConditionalModel>,
    pub views: Vec<Vec<ImputedView>>,
}

impl ImputationSet {
    pub fn view(&self, r: usize, donor_pos: usize) -> &ImputedView {
        &self.views[r][donor_pos]
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn n_regularized(&self) -> usize {
        self.models.iter().filter(|m| m.regularized).count()
    }
}

type ModelKey = (usize, Vec<usize>);

/// Every distinct `(target, predictors)` pair that the views require.
fn required_models(idx: &PatternIndex) -> Vec<ModelKey> {
    let mut keys: Vec<ModelKey> = Vec::new();
    for g in &idx.groups {
        if g.is_complete() {
            continue;
        }
        for overlap in &g.overlaps {
            for &j in &g.missing {
                let key = (j, overlap.clone());
                if !keys.contains(&key) {
                    keys.push(key);
                }
            }
        }
    }
    keys
}

/// Fits every model needed for the multiple block-wise imputation.
pub fn fit_models(data: &DataSet, idx: &PatternIndex, opts: &ImputationOptions) -> Result<Vec<ConditionalModel>> {
    let keys = required_models(idx);
    let fit_one = |(j, predictors): &ModelKey| {
        let mut cols = predictors.clone();
        cols.push(*j);
        fit_model_on_rows(data, *j, predictors, idx.rows_observing(&cols), opts)
    };
    if opts.parallel {
        keys.par_iter().map(fit_one).collect()
    } else {
        keys.iter().map(fit_one).collect()
    }
}

/// Materializes one view per `(r, k ∈ G(r))`. Complete groups get a single
/// pass-through view.
pub fn build_views(data: &DataSet, idx: &PatternIndex, models: &[ConditionalModel]) -> Result<ImputationSet> {
    let lookup: HashMap<(usize, &[usize]), &ConditionalModel> = models
        .iter()
        .map(|m| ((m.target, m.predictors.as_slice()), m))
        .collect();
    let p = data.n_cols();
    let mut views = Vec::with_capacity(idx.n_groups());
    for (r, g) in idx.groups.iter().enumerate() {
        let base = data.values().select_rows(&g.members);
        let mut group_views = Vec::with_capacity(g.n_donors());
        for (&k, overlap) in g.donors.iter().zip(&g.overlaps) {
            let mut values = base.clone();
            if !g.is_complete() {
                let mut xbuf = vec![0.0; overlap.len()];
                for &j in &g.missing {
                    let model = lookup.get(&(j, overlap.as_slice())).ok_or_else(|| {
                        MbiError::InvalidArgument(format!(
                            "no model for column {j} given donor {k} of group {r}"
                        ))
                    })?;
                    for (a, &i) in g.members.iter().enumerate() {
                        for (slot, &c) in xbuf.iter_mut().zip(overlap) {
                            *slot = data.value(i, c);
                        }
                        values[(a, j)] = model.predict(&xbuf);
                    }
                }
            }
            debug_assert_eq!(values.ncols(), p);
            group_views.push(ImputedView {
                group: r,
                donor: k,
                rows: g.members.clone(),
                values,
            });
        }
        views.push(group_views);
    }
    Ok(ImputationSet {
        models: models.to_vec(),
        views,
    })
}

/// Fits all models and builds all views.
pub fn impute(data: &DataSet, idx: &PatternIndex, opts: &ImputationOptions) -> Result<ImputationSet> {
    let models = fit_models(data, idx, opts)?;
    build_views(data, idx, &models)
}

#[cfg(test)]
mod tests;
