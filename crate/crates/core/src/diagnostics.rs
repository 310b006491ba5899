//! Empirical covariance of the selected coefficients and the efficiency
//! comparison against single imputation.

use nalgebra::{DMatrix, DVector};

use crate::error::{MbiError, Result};
use crate::linalg::{col_means, inverse_spd, sym_eigen_desc};
use crate::model::Prepared;
use crate::objective::DIFF_STEP;
use crate::optimizer::FitResult;
use crate::reduction::{build_reduction, ReductionMap};

/// `(V₂ V₁⁻¹ V₂ᵀ)⁻¹` for a `|A| × T` derivative `v2` and `T × T` `v1`.
pub fn gmm_variance(v2: &DMatrix<f64>, v1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = v1.clone().cholesky().ok_or(MbiError::SingularV1)?;
    let info = v2 * chol.solve(&v2.transpose());
    let info = (&info + info.transpose()) * 0.5;
    inverse_spd(&info).ok_or(MbiError::SingularV1)
}

/// Which rows of each group's `U` enter the transformed moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rows {
    All,
    /// Only the principal components of `g_(1)`.
    First,
}

/// Per-group transformation restricted to `rows`.
fn group_maps(map: &ReductionMap, rows: Rows) -> Vec<DMatrix<f64>> {
    map.groups
        .iter()
        .map(|red| match rows {
            Rows::All => red.u.clone(),
            Rows::First => {
                let mut u = DMatrix::zeros(red.u1.nrows(), red.dim);
                for (c, &col) in red.first.iter().enumerate() {
                    u.set_column(col, &red.u1.column(c));
                }
                u
            }
        })
        .collect()
}

/// `V̂₁ = G*₀ᵀG*₀/N` and the stacked transformed moment mean `1ᵀG*₀/N`.
fn transformed_moments(prep: &Prepared, maps: &[DMatrix<f64>], beta: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n_total = prep.n_rows() as f64;
    let t: usize = maps.iter().map(|u| u.nrows()).sum();
    let mut v1 = DMatrix::zeros(t, t);
    let mut mean = DVector::zeros(t);
    let mut off = 0;
    for (gm, u) in prep.system.groups.iter().zip(maps) {
        let k = u.nrows();
        if k == 0 {
            continue;
        }
        let h = gm.moment_matrix(beta) * u.transpose();
        let w = gm.n() as f64 / n_total;
        v1.view_mut((off, off), (k, k)).copy_from(&(h.tr_mul(&h) / n_total));
        mean.rows_mut(off, k).copy_from(&(col_means(&h) * w));
        off += k;
    }
    (v1, mean)
}

/// `∂(1ᵀG*₀/N)/∂β_A` by central differences, as an `|A| × T` matrix.
fn moment_derivative(prep: &Prepared, maps: &[DMatrix<f64>], beta: &DVector<f64>, active: &[usize]) -> DMatrix<f64> {
    let t: usize = maps.iter().map(|u| u.nrows()).sum();
    let mut v2 = DMatrix::zeros(active.len(), t);
    let mut probe = beta.clone();
    for (a, &j) in active.iter().enumerate() {
        let h = DIFF_STEP * beta[j].abs().max(1.0);
        probe[j] = beta[j] + h;
        let up = transformed_moments(prep, maps, &probe).1;
        probe[j] = beta[j] - h;
        let down = transformed_moments(prep, maps, &probe).1;
        probe[j] = beta[j];
        v2.set_row(a, &((up - down) / (2.0 * h)).transpose());
    }
    v2
}

fn covariance_with(prep: &Prepared, map: &ReductionMap, rows: Rows, beta: &DVector<f64>, active: &[usize]) -> Result<DMatrix<f64>> {
    let maps = group_maps(map, rows);
    let (v1, _) = transformed_moments(prep, &maps, beta);
    let v2 = moment_derivative(prep, &maps, beta, active);
    gmm_variance(&v2, &v1)
}

/// `V̂` over the active set of `fit`, evaluated at its estimate.
pub fn empirical_covariance(prep: &Prepared, fit: &FitResult) -> Result<DMatrix<f64>> {
    if fit.active_set.is_empty() {
        return Err(MbiError::InvalidArgument("empty active set".into()));
    }
    let map = build_reduction(&prep.system, &fit.beta_hat)?;
    covariance_with(prep, &map, Rows::All, &fit.beta_hat, &fit.active_set)
}

#[derive(Debug, Clone)]
pub struct EfficiencyReport {
    pub active_set: Vec<usize>,
    /// `V̂` from the full multiple-imputation system.
    pub v_hat: DMatrix<f64>,
    /// `V̂^{(1)}` from the complete-case-imputation moments alone.
    pub v_hat_single: DMatrix<f64>,
    /// Smallest eigenvalue of `V̂^{(1)} − V̂`.
    pub min_eigenvalue: f64,
    /// Spectral norm of `V̂^{(1)}`.
    pub scale: f64,
}

impl EfficiencyReport {
    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue >= -1e-8 * self.scale
    }
}

/// Compares `V̂^{(1)}` and `V̂` at the fitted estimate.
pub fn efficiency_gap(prep: &Prepared, fit: &FitResult) -> Result<EfficiencyReport> {
    efficiency_gap_at(prep, &fit.beta_hat, &fit.active_set)
}

/// Compares `V̂^{(1)}` and `V̂` over `active` at `beta` (standardized scale),
/// with the reduction taken at `beta`.
pub fn efficiency_gap_at(prep: &Prepared, beta: &DVector<f64>, active: &[usize]) -> Result<EfficiencyReport> {
    if prep.idx.complete_group().is_none() {
        return Err(MbiError::NoCompleteGroup);
    }
    if active.is_empty() {
        return Err(MbiError::InvalidArgument("empty active set".into()));
    }
    let map = build_reduction(&prep.system, beta)?;
    let v_hat = covariance_with(prep, &map, Rows::All, beta, active)?;
    let v_hat_single = covariance_with(prep, &map, Rows::First, beta, active).map_err(|e| match e {
        MbiError::SingularV1 => MbiError::UnidentifiedSingle { active: active.len() },
        other => other,
    })?;
    let gap_values = signed_eigenvalues(&(&v_hat_single - &v_hat));
    let scale = sym_eigen_desc(&v_hat_single).0.first().copied().unwrap_or(0.0);
    Ok(EfficiencyReport {
        active_set: active.to_vec(),
        v_hat,
        v_hat_single,
        min_eigenvalue: gap_values.last().copied().unwrap_or(0.0),
        scale,
    })
}

/// Eigenvalues without clamping, decreasing.
fn signed_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let mut values: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|x, y| y.total_cmp(x));
    values
}
