//! Regression engines used by the imputation models: least squares, logistic
//! IRLS, and L1-penalized coordinate descent with cross-validated λ.
//!
//! Every routine takes raw predictors, standardizes them over the fitting
//! rows, and reports an intercept plus slopes on the original scale.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MbiError, Result};
use crate::linalg::{rcond_from_eigen, sym_eigen_desc};

/// Reciprocal condition below which the normal equations count as singular.
pub const SINGULAR_RCOND: f64 = 1e-10;

const IRLS_MAX_ITER: usize = 50;
const IRLS_TOL: f64 = 1e-8;
const IRLS_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    /// Logistic regression on a 0/1 response.
    Binomial,
}

/// Intercept and slopes on the original predictor scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub coef: DVector<f64>,
    /// Penalty used (0 for unregularized fits).
    pub lambda: f64,
}

impl LinearFit {
    pub fn intercept_only(intercept: f64, p: usize) -> Self {
        Self {
            intercept,
            coef: DVector::zeros(p),
            lambda: 0.0,
        }
    }

    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> DVector<f64> {
        (x * &self.coef).add_scalar(self.intercept)
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Column centering/scaling over the fitting rows.
#[derive(Debug, Clone)]
struct Scaler {
    mean: DVector<f64>,
    scale: DVector<f64>,
}

impl Scaler {
    fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let p = x.ncols();
        let mut mean = DVector::zeros(p);
        let mut scale = DVector::from_element(p, 1.0);
        for j in 0..p {
            let c = x.column(j);
            let m = c.sum() / n;
            let v = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[j] = m;
            if v > 1e-24 {
                scale[j] = v.sqrt();
            }
        }
        Self { mean, scale }
    }

    fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for j in 0..z.ncols() {
            let (m, s) = (self.mean[j], self.scale[j]);
            z.column_mut(j).apply(|v| *v = (*v - m) / s);
        }
        z
    }

    /// Converts standardized `(b0, b)` into original-scale coefficients.
    fn unscale(&self, b0: f64, b: &DVector<f64>, lambda: f64) -> LinearFit {
        let coef = b.component_div(&self.scale);
        let intercept = b0 - coef.dot(&self.mean);
        LinearFit {
            intercept,
            coef,
            lambda,
        }
    }

    fn is_constant(&self, x: &DMatrix<f64>, j: usize) -> bool {
        let c = x.column(j);
        c.iter().all(|v| (v - c[0]).abs() <= 1e-12 * (1.0 + c[0].abs()))
    }
}

/// Ordinary least squares with intercept.
pub fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearFit> {
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 {
        return Err(MbiError::InvalidArgument("no rows to fit".into()));
    }
    let y_mean = y.mean();
    if p == 0 {
        return Ok(LinearFit::intercept_only(y_mean, 0));
    }
    if n <= p {
        return Err(MbiError::SingularDesign { rcond: 0.0 });
    }
    let scaler = Scaler::fit(x);
    if (0..p).any(|j| scaler.is_constant(x, j)) {
        return Err(MbiError::SingularDesign { rcond: 0.0 });
    }
    let z = scaler.transform(x);
    let gram = z.tr_mul(&z) / n as f64;
    let (values, _) = sym_eigen_desc(&gram);
    let rcond = rcond_from_eigen(&values);
    if rcond < SINGULAR_RCOND {
        return Err(MbiError::SingularDesign { rcond });
    }
    let yc = y.add_scalar(-y_mean);
    let rhs = z.tr_mul(&yc) / n as f64;
    let b = gram
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(MbiError::SingularDesign { rcond })?;
    Ok(scaler.unscale(y_mean, &b, 0.0))
}

/// Logistic regression by iteratively reweighted least squares with a small
/// ridge on the slopes so separated data still converge.
pub fn fit_logistic_irls(x: &DMatrix<f64>, y01: &DVector<f64>) -> Result<LinearFit> {
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 {
        return Err(MbiError::InvalidArgument("no rows to fit".into()));
    }
    let scaler = Scaler::fit(x);
    let z = scaler.transform(x);
    let mut design = DMatrix::from_element(n, p + 1, 1.0);
    design.view_mut((0, 1), (n, p)).copy_from(&z);

    let ybar = y01.mean().clamp(1e-6, 1.0 - 1e-6);
    let mut theta = DVector::zeros(p + 1);
    theta[0] = (ybar / (1.0 - ybar)).ln();
    for _ in 0..IRLS_MAX_ITER {
        let eta = &design * &theta;
        let mu = eta.map(sigmoid);
        let w = mu.map(|m| (m * (1.0 - m)).max(1e-10));
        let mut xtwx = DMatrix::zeros(p + 1, p + 1);
        let mut score = DVector::zeros(p + 1);
        for i in 0..n {
            let row = design.row(i);
            let wi = w[i];
            xtwx.ger(wi, &row.transpose(), &row.transpose(), 1.0);
            score.axpy(y01[i] - mu[i], &row.transpose(), 1.0);
        }
        for j in 0..=p {
            xtwx[(j, j)] += IRLS_RIDGE * n as f64;
            score[j] -= IRLS_RIDGE * n as f64 * theta[j];
        }
        let step = xtwx
            .cholesky()
            .map(|c| c.solve(&score))
            .ok_or(MbiError::SingularDesign { rcond: 0.0 })?;
        theta += &step;
        if step.amax() < IRLS_TOL {
            break;
        }
    }
    let b = theta.rows(1, p).into_owned();
    Ok(scaler.unscale(theta[0], &b, 0.0))
}

/// Settings for the L1 path and its cross-validation.
#[derive(Debug, Clone)]
pub struct LassoOptions {
    pub n_lambda: usize,
    /// `λ_min / λ_max`; defaults follow the usual glmnet choice.
    pub lambda_min_ratio: Option<f64>,
    pub folds: usize,
    /// Coordinate descent stops once every `w_j Δb_j²` falls below
    /// `tol` times the response variance.
    pub tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            n_lambda: 50,
            lambda_min_ratio: None,
            folds: 10,
            tol: 1e-7,
            max_sweeps: 10_000,
            seed: 0,
        }
    }
}

/// Soft-thresholding operator.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Weighted lasso by cyclic coordinate descent on standardized columns:
/// minimizes `(1/2n) Σ w_i (z_i - b0 - x_i b)² + λ ‖b‖₁`. Warm-started from
/// `(b0, b)`; updates them in place. Stops when every weighted squared
/// coordinate change is below `tol`.
fn weighted_cd(
    x: &DMatrix<f64>,
    z: &DVector<f64>,
    w: &DVector<f64>,
    lambda: f64,
    b0: &mut f64,
    b: &mut DVector<f64>,
    tol: f64,
    max_sweeps: usize,
) {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let wsum = w.sum();
    let col_w: Vec<f64> = (0..p)
        .map(|j| x.column(j).iter().zip(w.iter()).map(|(v, wi)| wi * v * v).sum::<f64>() / n)
        .collect();
    let mut resid = z - (x * &*b).add_scalar(*b0);
    for _ in 0..max_sweeps {
        let mut max_change: f64 = 0.0;
        // Intercept.
        let shift = resid.iter().zip(w.iter()).map(|(r, wi)| r * wi).sum::<f64>() / wsum;
        if shift != 0.0 {
            *b0 += shift;
            resid.add_scalar_mut(-shift);
            max_change = max_change.max(shift * shift);
        }
        for j in 0..p {
            if col_w[j] <= 0.0 {
                continue;
            }
            let col = x.column(j);
            let grad = col
                .iter()
                .zip(resid.iter())
                .zip(w.iter())
                .map(|((xv, r), wi)| wi * xv * r)
                .sum::<f64>()
                / n;
            let old = b[j];
            let new = soft_threshold(grad + col_w[j] * old, lambda) / col_w[j];
            if new != old {
                resid.axpy(old - new, &col, 1.0);
                b[j] = new;
                max_change = max_change.max((new - old).powi(2) * col_w[j]);
            }
        }
        if max_change < tol {
            break;
        }
    }
}

/// Gaussian lasso at a fixed λ (glmnet scaling), original-scale output.
pub fn lasso_fixed(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, opts: &LassoOptions) -> LinearFit {
    let path = gaussian_path(x, y, &[lambda], opts);
    path.into_iter().next().unwrap()
}

/// Smallest λ at which every standardized slope is zero.
pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = x.nrows().max(1) as f64;
    if x.ncols() == 0 || x.nrows() == 0 {
        return 0.0;
    }
    let scaler = Scaler::fit(x);
    let z = scaler.transform(x);
    let yc = y.add_scalar(-y.mean());
    (z.tr_mul(&yc) / n).amax()
}

fn default_grid(lmax: f64, n: usize, p: usize, opts: &LassoOptions) -> Vec<f64> {
    let ratio = opts
        .lambda_min_ratio
        .unwrap_or(if n < p { 1e-2 } else { 1e-4 });
    let k = opts.n_lambda.max(1);
    if lmax <= 0.0 {
        return vec![0.0];
    }
    (0..k)
        .map(|i| {
            let t = if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
            lmax * ratio.powf(t)
        })
        .collect()
}

/// Stops a path once the fit explains nearly all deviance or stops
/// improving, as glmnet does; later λ reuse the last fit.
struct Saturation {
    null_dev: f64,
    last_ratio: f64,
    done: bool,
}

impl Saturation {
    fn new(null_dev: f64) -> Self {
        Self {
            null_dev,
            last_ratio: 0.0,
            done: null_dev <= 0.0,
        }
    }

    fn update(&mut self, dev: f64) {
        let ratio = 1.0 - dev / self.null_dev;
        if ratio >= 0.999 || (self.last_ratio > 0.0 && ratio - self.last_ratio < 1e-5 * ratio) {
            self.done = true;
        }
        self.last_ratio = ratio;
    }
}

/// Gaussian lasso along a decreasing λ sequence with warm starts.
fn gaussian_path(x: &DMatrix<f64>, y: &DVector<f64>, grid: &[f64], opts: &LassoOptions) -> Vec<LinearFit> {
    let n = x.nrows();
    let scaler = Scaler::fit(x);
    let z = scaler.transform(x);
    let w = DVector::from_element(n, 1.0);
    let mut b0 = y.mean();
    let mut b = DVector::zeros(x.ncols());
    let null_dev = y.add_scalar(-b0).norm_squared();
    let tol = opts.tol * (null_dev / n.max(1) as f64);
    let mut sat = Saturation::new(null_dev);
    grid.iter()
        .map(|&lambda| {
            if !sat.done {
                weighted_cd(&z, y, &w, lambda, &mut b0, &mut b, tol, opts.max_sweeps);
                sat.update((y - (&z * &b).add_scalar(b0)).norm_squared());
            }
            scaler.unscale(b0, &b, lambda)
        })
        .collect()
}

/// L1-penalized logistic regression along a decreasing λ sequence
/// (proximal Newton: quadratic approximation + weighted coordinate descent).
fn binomial_path(x: &DMatrix<f64>, y01: &DVector<f64>, grid: &[f64], opts: &LassoOptions) -> Vec<LinearFit> {
    let n = x.nrows();
    let scaler = Scaler::fit(x);
    let z = scaler.transform(x);
    let ybar = y01.mean().clamp(1e-6, 1.0 - 1e-6);
    let mut b0 = (ybar / (1.0 - ybar)).ln();
    let mut b = DVector::zeros(x.ncols());
    let deviance = |b0: f64, b: &DVector<f64>| {
        let eta = (&z * b).add_scalar(b0);
        (0..n)
            .map(|i| {
                let m = sigmoid(eta[i]).clamp(1e-12, 1.0 - 1e-12);
                -2.0 * (y01[i] * m.ln() + (1.0 - y01[i]) * (1.0 - m).ln())
            })
            .sum::<f64>()
    };
    let mut sat = Saturation::new(deviance(b0, &b));
    grid.iter()
        .map(|&lambda| {
            if sat.done {
                return scaler.unscale(b0, &b, lambda);
            }
            for _ in 0..IRLS_MAX_ITER {
                let eta = (&z * &b).add_scalar(b0);
                let mu = eta.map(sigmoid);
                let w = mu.map(|m| (m * (1.0 - m)).max(1e-5));
                let work = DVector::from_iterator(
                    n,
                    (0..n).map(|i| eta[i] + (y01[i] - mu[i]) / w[i]),
                );
                let (old0, old) = (b0, b.clone());
                weighted_cd(&z, &work, &w, lambda, &mut b0, &mut b, opts.tol * 0.25, opts.max_sweeps);
                let change = (b0 - old0).abs().max((&b - &old).amax());
                if change < IRLS_TOL.max(opts.tol) {
                    break;
                }
            }
            sat.update(deviance(b0, &b));
            scaler.unscale(b0, &b, lambda)
        })
        .collect()
}

fn path(x: &DMatrix<f64>, y: &DVector<f64>, family: Family, grid: &[f64], opts: &LassoOptions) -> Vec<LinearFit> {
    match family {
        Family::Gaussian => gaussian_path(x, y, grid, opts),
        Family::Binomial => binomial_path(x, y, grid, opts),
    }
}

fn loss(fit: &LinearFit, x: &DMatrix<f64>, y: &DVector<f64>, family: Family) -> f64 {
    let eta = fit.linear_predictor(x);
    match family {
        Family::Gaussian => (y - eta).norm_squared(),
        Family::Binomial => eta
            .iter()
            .zip(y.iter())
            .map(|(&e, &t)| {
                let m = sigmoid(e).clamp(1e-12, 1.0 - 1e-12);
                -2.0 * (t * m.ln() + (1.0 - t) * (1.0 - m).ln())
            })
            .sum(),
    }
}

/// Deterministic fold labels: a seeded shuffle, then round-robin.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    folds
}

/// L1-regularized GLM with λ chosen by K-fold cross-validation (minimum mean
/// held-out loss). With fewer than three rows there is nothing to validate
/// on and an intercept-only model is returned.
pub fn lasso_cv(x: &DMatrix<f64>, y: &DVector<f64>, family: Family, opts: &LassoOptions) -> LinearFit {
    let n = x.nrows();
    let p = x.ncols();
    let intercept_only = || {
        let m = y.mean();
        let b0 = match family {
            Family::Gaussian => m,
            Family::Binomial => {
                let m = m.clamp(1e-6, 1.0 - 1e-6);
                (m / (1.0 - m)).ln()
            }
        };
        LinearFit::intercept_only(b0, p)
    };
    if n < 3 || p == 0 {
        return intercept_only();
    }
    let lmax = lambda_max(x, y);
    if lmax <= 1e-14 {
        return intercept_only();
    }
    let grid = default_grid(lmax, n, p, opts);
    let k = opts.folds.clamp(2, n);
    let folds = fold_assignment(n, k, opts.seed);
    let mut cv_err = vec![0.0; grid.len()];
    for f in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        if test.is_empty() || train.len() < 2 {
            continue;
        }
        let (xtr, ytr) = (x.select_rows(&train), y.select_rows(&train));
        let (xte, yte) = (x.select_rows(&test), y.select_rows(&test));
        for (e, fit) in cv_err.iter_mut().zip(path(&xtr, &ytr, family, &grid, opts)) {
            *e += loss(&fit, &xte, &yte, family);
        }
    }
    let best = cv_err
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    path(x, y, family, &grid[..=best], opts).pop().unwrap()
}
