//! SCAD-penalized least squares by coordinate descent, on complete cases
//! (CC-SCAD) or on a singly imputed design (SI-SCAD), tuned by BIC.

use nalgebra::{DMatrix, DVector};

use crate::data::DataSet;
use crate::error::{MbiError, Result};
use crate::imputation::{fit_model_on_rows, ImputationOptions};
use crate::patterns::PatternIndex;
use crate::penalty::DEFAULT_SCAD_A;
use crate::tuning::{log_grid, mbi_bic, select_min};

#[derive(Debug, Clone)]
pub struct ScadOptions {
    pub a: f64,
    pub n_lambda: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    pub imputation: ImputationOptions,
}

impl Default for ScadOptions {
    fn default() -> Self {
        Self {
            a: DEFAULT_SCAD_A,
            n_lambda: 50,
            tol: 1e-8,
            max_sweeps: 10_000,
            imputation: ImputationOptions::default(),
        }
    }
}

impl ScadOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            imputation: ImputationOptions::with_seed(seed),
            ..Self::default()
        }
    }
}

/// The BIC-selected fit of a SCAD path, on the original scale.
#[derive(Debug, Clone)]
pub struct ScadFit {
    pub lambda: f64,
    pub intercept: f64,
    pub beta: DVector<f64>,
    pub active_set: Vec<usize>,
    pub bic: f64,
    pub grid: Vec<f64>,
    pub bic_path: Vec<f64>,
}

/// Minimizer of `½(z − b)² + p_λ(|b|)`.
pub fn scad_threshold(z: f64, lambda: f64, a: f64) -> f64 {
    let az = z.abs();
    if az <= 2.0 * lambda {
        z.signum() * (az - lambda).max(0.0)
    } else if az <= a * lambda {
        ((a - 1.0) * z - z.signum() * a * lambda) / (a - 2.0)
    } else {
        z
    }
}

/// Coordinate descent for `(1/2n)‖y − Xb‖² + Σ p_λ(|b_j|)` on columns with
/// unit mean square and centered `y`. Updates `b` in place.
fn scad_cd(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, b: &mut DVector<f64>, opts: &ScadOptions) {
    let n = x.nrows() as f64;
    let mut resid = y - x * &*b;
    for _ in 0..opts.max_sweeps {
        let mut max_change: f64 = 0.0;
        for j in 0..x.ncols() {
            let col = x.column(j);
            let z = col.dot(&resid) / n + b[j];
            let new = scad_threshold(z, lambda, opts.a);
            let old = b[j];
            if new != old {
                resid.axpy(old - new, &col, 1.0);
                b[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change < opts.tol {
            break;
        }
    }
}

/// SCAD coordinate descent at one λ from zero, on columns already scaled to
/// unit mean square and a centered response.
pub fn scad_fixed(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, opts: &ScadOptions) -> DVector<f64> {
    let mut b = DVector::zeros(x.ncols());
    scad_cd(x, y, lambda, &mut b, opts);
    b
}

/// SCAD path over 50 log-spaced λ below the standardized `λ_max`, selected by
/// `n log(RSS/n) + df log n` among fits with `df < n`.
pub fn scad_path(x: &DMatrix<f64>, y: &DVector<f64>, opts: &ScadOptions) -> Result<ScadFit> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(MbiError::InvalidArgument("SCAD needs at least two rows".into()));
    }
    let nf = n as f64;
    let means: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let scales: Vec<f64> = (0..p)
        .map(|j| (x.column(j).iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / nf).sqrt())
        .collect();
    let usable: Vec<usize> = (0..p).filter(|&j| scales[j] > 1e-12).collect();
    let z = DMatrix::from_fn(n, usable.len(), |i, c| {
        let j = usable[c];
        (x[(i, j)] - means[j]) / scales[j]
    });
    let ymean = y.mean();
    let yc = y.add_scalar(-ymean);
    let lmax = if usable.is_empty() { 0.0 } else { (z.tr_mul(&yc) / nf).amax() };
    let grid = log_grid(if lmax > 0.0 { lmax } else { 1.0 }, opts.n_lambda);

    let mut b = DVector::zeros(usable.len());
    let mut coefs = vec![DVector::zeros(0); grid.len()];
    let mut bic = vec![f64::NAN; grid.len()];
    let mut eligible = vec![false; grid.len()];
    for k in (0..grid.len()).rev() {
        scad_cd(&z, &yc, grid[k], &mut b, opts);
        let df = b.iter().filter(|&&v| v != 0.0).count();
        let rss = (&yc - &z * &b).norm_squared();
        bic[k] = mbi_bic(rss, df, n);
        eligible[k] = df < n && rss > 0.0;
        coefs[k] = b.clone();
    }
    let k = select_min(&bic, &eligible).ok_or_else(|| MbiError::PathFailed("no SCAD fit with df < n".into()))?;
    let mut beta = DVector::zeros(p);
    for (c, &j) in usable.iter().enumerate() {
        beta[j] = coefs[k][c] / scales[j];
    }
    let intercept = ymean - beta.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    let active_set = (0..p).filter(|&j| beta[j] != 0.0).collect();
    Ok(ScadFit {
        lambda: grid[k],
        intercept,
        beta,
        active_set,
        bic: bic[k],
        grid,
        bic_path: bic,
    })
}

/// SCAD on the complete-case rows.
pub fn cc_scad(data: &DataSet, idx: &PatternIndex, opts: &ScadOptions) -> Result<ScadFit> {
    let c = idx.complete_group().ok_or(MbiError::NoCompleteGroup)?;
    let rows = &idx.groups[c].members;
    let x = data.values().select_rows(rows);
    let y = data.response().select_rows(rows);
    scad_path(&x, &y, opts)
}

/// Fills every missing block with predictions from regressions fitted on the
/// complete cases only, using all of the group's observed covariates.
pub fn single_imputation(data: &DataSet, idx: &PatternIndex, opts: &ImputationOptions) -> Result<DMatrix<f64>> {
    let c = idx.complete_group().ok_or(MbiError::NoCompleteGroup)?;
    let complete_rows = idx.groups[c].members.clone();
    let mut x = data.values().clone();
    for g in idx.groups.iter().filter(|g| !g.is_complete()) {
        let mut buf = vec![0.0; g.observed.len()];
        for &j in &g.missing {
            let model = fit_model_on_rows(data, j, &g.observed, complete_rows.clone(), opts)?;
            for &i in &g.members {
                for (slot, &col) in buf.iter_mut().zip(&g.observed) {
                    *slot = data.value(i, col);
                }
                x[(i, j)] = model.predict(&buf);
            }
        }
    }
    Ok(x)
}

/// SCAD on the singly imputed design.
pub fn si_scad(data: &DataSet, idx: &PatternIndex, opts: &ScadOptions) -> Result<ScadFit> {
    let x = single_imputation(data, idx, &opts.imputation)?;
    scad_path(&x, data.response(), opts)
}
