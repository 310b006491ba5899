//! λ grids and selection by MBI-BIC.

use std::io::Write;

use log::{info, warn};
use nalgebra::DVector;

use crate::error::{MbiError, Result};
use crate::imputation::glm::LassoOptions;
use crate::model::Prepared;
use crate::objective::GmmObjective;
use crate::penalty::{PenaltySpec, DEFAULT_SCAD_A};
use crate::optimizer::{fit_from, initial_estimate, FitOptions, FitResult};

/// Residual sum of squares with per-group breakdown. For group `r` the
/// squared residuals of every imputed view are averaged over its `M_r` donors.
pub fn rss(prep: &Prepared, beta: &DVector<f64>) -> (f64, Vec<f64>) {
    let y = prep.data.response();
    let per_group: Vec<f64> = prep
        .imputations
        .views
        .iter()
        .map(|views| {
            if views.is_empty() {
                return 0.0;
            }
            let total: f64 = views
                .iter()
                .map(|v| {
                    let fitted = &v.values * beta;
                    v.rows
                        .iter()
                        .zip(fitted.iter())
                        .map(|(&i, f)| (y[i] - f).powi(2))
                        .sum::<f64>()
                })
                .sum();
            total / views.len() as f64
        })
        .collect();
    (per_group.iter().sum(), per_group)
}

/// `N log(RSS/N) + df log N`; `−∞` when `RSS ≤ 0`.
pub fn mbi_bic(rss: f64, df: usize, n: usize) -> f64 {
    let n = n as f64;
    if rss <= 0.0 {
        return f64::NEG_INFINITY;
    }
    n * (rss / n).ln() + df as f64 * n.ln()
}

/// `n` log-spaced values over `[λ_max/1000, λ_max]`, increasing.
pub fn log_grid(lmax: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lmax];
    }
    let (lo, hi) = ((lmax / 1000.0).ln(), lmax.ln());
    (0..n)
        .map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// A λ beyond which the penalized objective prefers `β = 0`: zero is
/// stationary once `λ ≥ max_j |∂f/∂β_j(0)|`, and any coefficient past `aλ`
/// costs `(a+1)λ²/2`, which exceeds `f(0)` once `λ ≥ √(2f(0)/(a+1))`.
/// Returns the larger of the two.
pub fn gmm_lambda_max(prep: &Prepared) -> Result<f64> {
    let zero = DVector::zeros(prep.n_cols());
    let objective = GmmObjective::new(&prep.system, PenaltySpec::scad(0.0), &zero)?;
    let stationary = objective.quadratic_gradient(&zero)?.amax();
    let dominant = (2.0 * objective.quadratic(&zero) / (DEFAULT_SCAD_A + 1.0)).sqrt();
    Ok(stationary.max(dominant))
}

/// Default grid: 20 values up to [`gmm_lambda_max`], or up to 1 when that
/// is not positive.
pub fn default_grid(prep: &Prepared) -> Result<Vec<f64>> {
    let lmax = gmm_lambda_max(prep)?;
    Ok(log_grid(if lmax > 0.0 && lmax.is_finite() { lmax } else { 1.0 }, 20))
}

#[derive(Debug, Clone)]
pub struct PathOptions {
    pub fit: FitOptions,
    /// Start each λ from the previous solution.
    pub warm_start: bool,
    /// Extra passes over the grid, each taking the reduction and weights at
    /// the previous pass's selected estimate.
    pub reanchor: usize,
    pub lasso: LassoOptions,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            warm_start: true,
            reanchor: 0,
            lasso: LassoOptions::default(),
        }
    }
}

impl PathOptions {
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

#[derive(Debug, Clone)]
pub struct PathResult {
    pub grid: Vec<f64>,
    pub fits: Vec<std::result::Result<FitResult, MbiError>>,
    pub rss: Vec<f64>,
    pub bic: Vec<f64>,
    pub selected: usize,
    pub init: DVector<f64>,
}

impl PathResult {
    pub fn best(&self) -> &FitResult {
        self.fits[self.selected].as_ref().expect("selected fit succeeded")
    }

    /// Writes `lambda,rss,df,bic,converged,active` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lambda", "rss", "df", "bic", "converged", "active"])?;
        for (k, lambda) in self.grid.iter().enumerate() {
            let (df, converged) = match &self.fits[k] {
                Ok(f) => (f.df().to_string(), f.converged.to_string()),
                Err(_) => (String::new(), "false".into()),
            };
            w.write_record([
                format!("{lambda:.16e}"),
                format!("{:.16e}", self.rss[k]),
                df.clone(),
                format!("{:.16e}", self.bic[k]),
                converged,
                df,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Index of the smallest score among eligible entries; ties go to the later
/// (larger λ) entry.
pub fn select_min(scores: &[f64], eligible: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, (&s, &ok)) in scores.iter().zip(eligible).enumerate() {
        if !ok || s.is_nan() {
            continue;
        }
        match best {
            Some(b) if s > scores[b] => {}
            _ => best = Some(k),
        }
    }
    best
}

/// Fits every λ of `grid` and selects by MBI-BIC among converged fits.
///
/// The reduction and weights are taken at the complete-case lasso estimate.
/// Fits run from the largest λ down, the first starting at zero and each
/// later one from its predecessor when warm starts are on. Results are
/// reported in increasing λ order.
pub fn run_path(prep: &Prepared, grid: &[f64], opts: &PathOptions) -> Result<PathResult> {
    if grid.is_empty() {
        return Err(MbiError::InvalidArgument("empty lambda grid".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let init = initial_estimate(prep, &opts.lasso)?;
    let mut reference = init.clone();
    let mut pass = 0;
    loop {
        let (fits, rss_v, bic) = sweep(prep, &grid, &reference, opts);
        let selected = select_converged(&grid, &fits, &bic)?;
        if pass == opts.reanchor {
            return Ok(PathResult {
                grid,
                fits,
                rss: rss_v,
                bic,
                selected,
                init,
            });
        }
        reference = fits[selected].as_ref().expect("selected fit succeeded").beta_hat.clone();
        pass += 1;
    }
}

type Sweep = (Vec<std::result::Result<FitResult, MbiError>>, Vec<f64>, Vec<f64>);

/// One pass over the grid, largest λ first.
fn sweep(prep: &Prepared, grid: &[f64], reference: &DVector<f64>, opts: &PathOptions) -> Sweep {
    let n = prep.n_rows();
    let mut fits = Vec::with_capacity(grid.len());
    let mut rss_v = vec![f64::NAN; grid.len()];
    let mut bic = vec![f64::NAN; grid.len()];
    let mut start = DVector::zeros(prep.n_cols());
    for (k, &lambda) in grid.iter().enumerate().rev() {
        let result = fit_from(prep, lambda, reference, &start, &opts.fit);
        match &result {
            Ok(f) => {
                let (r, _) = rss(prep, &f.beta_hat);
                let score = mbi_bic(r, f.df(), n);
                info!(
                    "lambda {lambda:.4e}: df {} rss {r:.4} bic {score:.4} iterations {} converged {}",
                    f.df(),
                    f.iterations,
                    f.converged
                );
                rss_v[k] = r;
                bic[k] = score;
                if opts.warm_start {
                    start = f.beta_raw.clone();
                }
            }
            Err(e) => warn!("lambda {lambda:.4e}: fit failed: {e}"),
        }
        fits.push(result);
    }
    fits.reverse();
    (fits, rss_v, bic)
}

fn select_converged(grid: &[f64], fits: &[std::result::Result<FitResult, MbiError>], bic: &[f64]) -> Result<usize> {
    let eligible: Vec<bool> = fits
        .iter()
        .map(|f| matches!(f, Ok(f) if f.converged))
        .collect();
    select_min(bic, &eligible).ok_or_else(|| {
        let detail: Vec<String> = grid
            .iter()
            .zip(fits)
            .map(|(l, f)| match f {
                Ok(f) => format!("{l:.3e}: stopped {:?}", f.stop),
                Err(e) => format!("{l:.3e}: {e}"),
            })
            .collect();
        MbiError::PathFailed(detail.join("; "))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{prepare, PrepareOptions};
    use crate::testutil::{fixture, FOUR_GROUPS};

    #[test]
    fn equal_rss_prefers_sparser() {
        assert!(mbi_bic(10.0, 3, 100) < mbi_bic(10.0, 5, 100));
        assert_eq!(mbi_bic(0.0, 1, 10), f64::NEG_INFINITY);
    }

    #[test]
    fn ties_go_to_larger_lambda() {
        let scores = [3.0, 1.0, 1.0, 2.0];
        assert_eq!(select_min(&scores, &[true; 4]), Some(2));
        assert_eq!(select_min(&scores, &[true, false, false, true]), Some(3));
        assert_eq!(select_min(&scores, &[false; 4]), None);
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = log_grid(2.0, 20);
        assert_eq!(g.len(), 20);
        assert!((g[0] - 0.002).abs() < 1e-15);
        assert!((g[19] - 2.0).abs() < 1e-12);
        let ratios: Vec<f64> = g.windows(2).map(|w| w[1] / w[0]).collect();
        assert!(ratios.iter().all(|r| (r - ratios[0]).abs() < 1e-9));
    }

    #[test]
    fn rss_complete_group_is_ordinary() {
        let fx = fixture(&FOUR_GROUPS[..1], &[20], [1, 1, 1], &[1.0, 2.0, 0.0], 0.3, 1.0, 1);
        let prep = prepare(&fx.data, &PrepareOptions::default()).unwrap();
        let b = DVector::from_vec(vec![0.5, 1.0, 0.1]);
        let (total, per) = rss(&prep, &b);
        let resid = prep.data.response() - prep.data.values() * &b;
        assert!((total - resid.norm_squared()).abs() < 1e-10);
        assert_eq!(per.len(), 1);
    }

    #[test]
    fn rss_two_groups_by_hand() {
        // Two sources of one column each; group 2 misses source 2, which the
        // complete group imputes exactly as x2 = x1.
        use crate::data::DataSet;
        use nalgebra::DMatrix;
        let values = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, f64::NAN]);
        let mask = DMatrix::from_row_slice(4, 2, &[true, true, true, true, true, true, true, false]);
        let y = DVector::from_vec(vec![1.0, 2.0, 2.0, 5.0]);
        let data = DataSet::new(values, mask, y, vec![0..1, 1..2]).unwrap();
        let opts = PrepareOptions {
            standardize: false,
            min_group_size: 1,
            ..PrepareOptions::default()
        };
        let prep = prepare(&data, &opts).unwrap();
        let b = DVector::from_vec(vec![0.5, 0.5]);
        let (total, per) = rss(&prep, &b);
        // complete: residuals 0, 0, -1; incomplete: x = (4, 4), residual 1.
        assert!((per[0] - 1.0).abs() < 1e-12);
        assert!((per[1] - 1.0).abs() < 1e-12);
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_lambda_path_selects_it() {
        let beta = [2.0, 0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 0.0, 0.0];
        let fx = fixture(&FOUR_GROUPS, &[40, 40, 40, 40], [3, 3, 3], &beta, 0.3, 1.0, 2);
        let prep = prepare(&fx.data, &PrepareOptions::default()).unwrap();
        let path = run_path(&prep, &[0.1], &PathOptions::default()).unwrap();
        assert_eq!(path.selected, 0);
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lambda,rss,df,bic,converged,active"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn huge_lambda_gives_null_model() {
        let beta = [2.0, 0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 0.0, 0.0];
        let fx = fixture(&FOUR_GROUPS, &[40, 40, 40, 40], [3, 3, 3], &beta, 0.3, 1.0, 3);
        let prep = prepare(&fx.data, &PrepareOptions::default()).unwrap();
        let path = run_path(&prep, &[1e4], &PathOptions::default()).unwrap();
        assert!(path.best().active_set.is_empty());
    }
}
