//! Nonlinear conjugate gradient and the penalized GMM fit.

use log::debug;
use nalgebra::DVector;

use crate::error::{MbiError, Result};
use crate::imputation::glm::{lasso_cv, Family, LassoOptions};
use crate::model::Prepared;
use crate::objective::{GmmObjective, GradientRule};
use crate::penalty::{PenaltySpec, DEFAULT_SCAD_A};

/// A smooth objective minimized by [`minimize_cg`].
pub trait CgProblem {
    /// Called at the start of every outer iteration with the current iterate.
    fn begin_iteration(&mut self, _x: &DVector<f64>) -> Result<()> {
        Ok(())
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64>;

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Restricts a search direction given the (pseudo-)gradient.
    fn constrain(&self, _x: &DVector<f64>, _grad: &DVector<f64>, dir: DVector<f64>) -> DVector<f64> {
        dir
    }

    /// Largest admissible step along `dir`.
    fn max_step(&self, _x: &DVector<f64>, _dir: &DVector<f64>) -> f64 {
        f64::INFINITY
    }

    /// Cleans up an iterate reached by a step that ended on the boundary.
    fn project(&self, _x_old: &DVector<f64>, _x_new: &mut DVector<f64>) {}

    /// `α ↦ f(x + α d)`; non-finite values must be reported as `+∞`.
    fn line<'s>(&'s self, x: &DVector<f64>, dir: &DVector<f64>) -> Box<dyn Fn(f64) -> f64 + 's> {
        let (x, dir) = (x.clone(), dir.clone());
        Box::new(move |a| {
            self.value(&(&x + &dir * a))
                .ok()
                .filter(|v| v.is_finite())
                .unwrap_or(f64::INFINITY)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Stop when `max_j |Δβ_j|` falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative tolerance of the one-dimensional minimization.
    pub line_tol: f64,
    pub max_backtracks: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 500,
            line_tol: 1e-6,
            max_backtracks: 60,
        }
    }
}

/// Objective at the start and end of one line search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    StepBelowTolerance,
    ZeroGradient,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub restarts: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub trace: Vec<TraceStep>,
}

const GOLD: f64 = 1.618_033_988_749_895;
const CGOLD: f64 = 0.381_966_011_250_105;

/// Minimizes `phi` over `0 < α ≤ amax` starting from trial step `a0`.
/// Returns the step and its value, which is strictly below `phi(0)`.
pub fn line_search(
    phi: &dyn Fn(f64) -> f64,
    f0: f64,
    a0: f64,
    amax: f64,
    opts: &CgOptions,
) -> Result<(f64, f64)> {
    let mut a = a0.min(amax);
    let mut fa = phi(a);
    let (lo, mid, hi, fmid);
    if !(fa < f0) {
        let mut backtracks = 0;
        let mut upper = a;
        while !(fa < f0) {
            backtracks += 1;
            if backtracks > opts.max_backtracks {
                return Err(MbiError::LineSearchFailed(backtracks - 1));
            }
            upper = a;
            a /= GOLD * GOLD;
            fa = phi(a);
        }
        lo = 0.0;
        mid = a;
        fmid = fa;
        hi = upper;
    } else {
        let (mut l, mut m, mut fm) = (0.0, a, fa);
        if m >= amax {
            return Ok((amax, fa));
        }
        let mut h = (m + GOLD * (m - l)).min(amax);
        let mut fh = phi(h);
        let mut expansions = 0;
        while fh < fm && expansions < 200 {
            if h >= amax {
                return Ok((amax, fh));
            }
            l = m;
            m = h;
            fm = fh;
            h = (m + GOLD * (m - l)).min(amax);
            fh = phi(h);
            expansions += 1;
        }
        lo = l;
        mid = m;
        fmid = fm;
        hi = h;
    }
    Ok(brent(phi, lo, mid, hi, fmid, opts.line_tol))
}

/// Brent's parabolic/golden minimization on the bracket `a < x < b` with
/// `f(x) = fx` below both ends.
fn brent(phi: &dyn Fn(f64) -> f64, a: f64, x: f64, b: f64, fx: f64, tol: f64) -> (f64, f64) {
    const TINY: f64 = 1e-20;
    let (mut a, mut b) = (a, b);
    let (mut x, mut w, mut v) = (x, x, x);
    let (mut fx, mut fw, mut fv) = (fx, fx, fx);
    let (mut d, mut e): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + TINY;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = phi(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Nonlinear conjugate gradient, `s_k = −∇_{k−1} + γ s_{k−1}` with
/// `γ = −‖∇_{k−1}‖² / s_{k−1}ᵀ(∇_{k−2} − ∇_{k−1})` (the Dai–Yuan choice).
/// Restarts to steepest descent on a degenerate denominator or a
/// non-descent direction.
pub fn minimize_cg<P: CgProblem + ?Sized>(problem: &mut P, x0: &DVector<f64>, opts: &CgOptions) -> Result<CgOutcome> {
    let mut x = x0.clone();
    let mut trace = Vec::new();
    let mut restarts = 0;
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None; // (gradient, direction)
    let mut last_step: Option<f64> = None;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        problem.begin_iteration(&x)?;
        let grad = problem.gradient(&x)?;
        let gnorm2 = grad.norm_squared();
        if gnorm2 == 0.0 {
            stop = StopReason::ZeroGradient;
            break;
        }
        let steepest = problem.constrain(&x, &grad, -&grad);
        if steepest.amax() == 0.0 {
            stop = StopReason::ZeroGradient;
            break;
        }
        let mut dir = match &prev {
            None => steepest.clone(),
            Some((g_old, s_old)) => {
                let den = s_old.dot(&(g_old - &grad));
                let scale = s_old.norm() * grad.norm();
                if den.abs() < 1e-12 * scale {
                    restarts += 1;
                    steepest.clone()
                } else {
                    let gamma = -gnorm2 / den;
                    let s = problem.constrain(&x, &grad, -&grad + s_old * gamma);
                    if s.dot(&grad) >= 0.0 {
                        restarts += 1;
                        steepest.clone()
                    } else {
                        s
                    }
                }
            }
        };

        let mut attempt = 0;
        let (alpha, amax, start, end) = loop {
            let phi = problem.line(&x, &dir);
            let f0 = phi(0.0);
            if !f0.is_finite() {
                return Err(MbiError::NonFiniteObjective);
            }
            let dmax = dir.amax();
            let a0 = match last_step {
                Some(step) if step > 0.0 => step / dmax,
                _ => 0.1 / dmax,
            };
            let amax = problem.max_step(&x, &dir);
            match line_search(&*phi, f0, a0, amax, opts) {
                Ok((a, fa)) => break (a, amax, f0, fa),
                Err(e) => {
                    if attempt == 0 && dir != steepest {
                        attempt += 1;
                        restarts += 1;
                        dir = steepest.clone();
                        continue;
                    }
                    debug!("conjugate gradient stopped: {e}");
                    return Ok(CgOutcome {
                        x,
                        iterations,
                        restarts,
                        converged: false,
                        stop: StopReason::LineSearchFailed,
                        trace,
                    });
                }
            }
        };
        iterations += 1;
        let old = x.clone();
        x += &dir * alpha;
        trace.push(TraceStep { start, end });
        let hit = alpha >= amax;
        let before = x.clone();
        problem.project(&old, &mut x);
        let snapped = x != before;
        let max_change = (&x - &old).amax();
        if hit || snapped {
            // A coordinate reached zero: restart the conjugacy.
            prev = None;
            if max_change < opts.tol {
                stop = StopReason::StepBelowTolerance;
                break;
            }
            continue;
        }
        last_step = Some(max_change.max(opts.tol));
        prev = Some((grad, dir));
        if max_change < opts.tol {
            stop = StopReason::StepBelowTolerance;
            break;
        }
    }
    Ok(CgOutcome {
        x,
        iterations,
        restarts,
        converged: matches!(stop, StopReason::StepBelowTolerance | StopReason::ZeroGradient),
        stop,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub scad_a: f64,
    pub cg: CgOptions,
    /// Standardized coefficients below this in magnitude are set to zero.
    pub threshold: f64,
    pub gradient: GradientRule,
    /// Treat the penalty kink at zero orthant-wise (exact zeros, one-sided
    /// derivatives) instead of through the smoothed central difference.
    pub orthant_wise: bool,
    pub weighting: Weighting,
    /// Under [`Weighting::Continuous`], choose which blocks are reduced and
    /// their component counts once at the start; later iterations refresh
    /// only the eigenvectors.
    pub fixed_plan: bool,
}

/// How `U` and `UWUᵀ` follow `β` during a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Both taken once at a reference estimate, so the quadratic part is a
    /// convex quadratic in `β`.
    #[default]
    Fixed,
    /// `W(β)` evaluated at every point, `U` refreshed every iteration.
    Continuous,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            scad_a: DEFAULT_SCAD_A,
            cg: CgOptions::default(),
            threshold: 1e-2,
            gradient: GradientRule::Analytic,
            orthant_wise: true,
            weighting: Weighting::Fixed,
            fixed_plan: true,
        }
    }
}

/// Result of one penalized fit, on the standardized scale.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub lambda: f64,
    /// Thresholded estimate.
    pub beta_hat: DVector<f64>,
    /// The iterate before thresholding.
    pub beta_raw: DVector<f64>,
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub restarts: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub objective_trace: Vec<TraceStep>,
    /// `(t₁, t₂)` per moment group at the final iterate.
    pub components: Vec<(usize, usize)>,
}

impl FitResult {
    pub fn df(&self) -> usize {
        self.active_set.len()
    }

    /// Every line search ended no higher than it started.
    pub fn trace_is_monotone(&self) -> bool {
        self.objective_trace.iter().all(|s| s.end <= s.start)
    }
}

/// Zeroes coordinates below `threshold`; returns the estimate and support.
pub fn apply_threshold(beta: &DVector<f64>, threshold: f64) -> (DVector<f64>, Vec<usize>) {
    let hat = beta.map(|b| if b.abs() < threshold { 0.0 } else { b });
    let active = (0..hat.len()).filter(|&j| hat[j] != 0.0).collect();
    (hat, active)
}

/// Lasso on the complete observations, or on the largest group's observed
/// columns when no complete group exists.
pub fn initial_estimate(prep: &Prepared, lasso: &LassoOptions) -> Result<DVector<f64>> {
    let idx = &prep.idx;
    let source = match idx.complete_group() {
        Some(c) => c,
        None => (0..idx.n_groups())
            .max_by_key(|&r| (idx.groups[r].size(), std::cmp::Reverse(r)))
            .ok_or_else(|| MbiError::InitFailed("no rows".into()))?,
    };
    let group = &idx.groups[source];
    if group.size() == 0 || group.observed.is_empty() {
        return Err(MbiError::InitFailed("initialization group is empty".into()));
    }
    let x = prep.data.values().select_rows(&group.members).select_columns(&group.observed);
    let y = prep.data.response().select_rows(&group.members);
    let fit = lasso_cv(&x, &y, Family::Gaussian, lasso);
    let mut beta = DVector::zeros(idx.n_cols);
    for (c, &j) in group.observed.iter().enumerate() {
        beta[j] = fit.coef[c];
    }
    Ok(beta)
}

struct GmmProblem<'a> {
    objective: GmmObjective<'a>,
    orthant: bool,
    refresh: bool,
    keep_plan: bool,
}

impl CgProblem for GmmProblem<'_> {
    fn begin_iteration(&mut self, x: &DVector<f64>) -> Result<()> {
        if self.refresh {
            self.objective.refresh(x, self.keep_plan)?;
        }
        Ok(())
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.objective.value(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if self.orthant {
            self.objective.pseudo_gradient(x)
        } else {
            self.objective.gradient(x)
        }
    }

    /// Zeroes direction components that disagree in sign with the negative
    /// pseudo-gradient.
    fn constrain(&self, _x: &DVector<f64>, grad: &DVector<f64>, mut dir: DVector<f64>) -> DVector<f64> {
        if self.orthant {
            for j in 0..dir.len() {
                if dir[j] * grad[j] >= 0.0 {
                    dir[j] = 0.0;
                }
            }
        }
        dir
    }

    fn project(&self, x_old: &DVector<f64>, x_new: &mut DVector<f64>) {
        for j in 0..x_new.len() {
            let (a, b) = (x_old[j], x_new[j]);
            if a != 0.0 && (a * b <= 0.0 || b.abs() <= 1e-12 * a.abs()) {
                x_new[j] = 0.0;
            }
        }
    }

    /// Under the orthant rule, coordinates that would change sign stay at
    /// zero along the whole line.
    fn line<'s>(&'s self, x: &DVector<f64>, dir: &DVector<f64>) -> Box<dyn Fn(f64) -> f64 + 's> {
        if !self.orthant {
            let restriction = self.objective.line(x, dir);
            return Box::new(move |a| restriction.value(a));
        }
        let (x, dir) = (x.clone(), dir.clone());
        Box::new(move |a| {
            let mut y = &x + &dir * a;
            self.project(&x, &mut y);
            self.objective
                .value(&y)
                .ok()
                .filter(|v| v.is_finite())
                .unwrap_or(f64::INFINITY)
        })
    }
}

/// Minimizes the reduced penalized objective at `lambda` from `init`.
pub fn fit(prep: &Prepared, lambda: f64, init: &DVector<f64>, opts: &FitOptions) -> Result<FitResult> {
    fit_from(prep, lambda, init, init, opts)
}

/// Like [`fit`], with the reduction and weights taken at `reference` and the
/// iterations started from `start`.
pub fn fit_from(
    prep: &Prepared,
    lambda: f64,
    reference: &DVector<f64>,
    start: &DVector<f64>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let penalty = PenaltySpec::new(lambda, opts.scad_a)?;
    let mut objective = GmmObjective::new(&prep.system, penalty, reference)?;
    objective.rule = opts.gradient;
    if opts.weighting == Weighting::Fixed {
        objective.freeze_weights(reference);
    }
    let mut problem = GmmProblem {
        objective,
        orthant: opts.orthant_wise,
        refresh: opts.weighting == Weighting::Continuous,
        keep_plan: opts.fixed_plan,
    };
    let out = minimize_cg(&mut problem, start, &opts.cg)?;
    let components = problem.objective.reduction.counts();
    let (beta_hat, active_set) = apply_threshold(&out.x, opts.threshold);
    Ok(FitResult {
        lambda,
        beta_hat,
        beta_raw: out.x,
        active_set,
        iterations: out.iterations,
        restarts: out.restarts,
        converged: out.converged,
        stop: out.stop,
        objective_trace: out.trace,
        components,
    })
}
