//! The reduced, penalized GMM objective
//! `f*(β) = Σ_r (U g)ᵀ (U W Uᵀ)⁻¹ (U g) + Σ_j p_λ(|β_j|)`.
//!
//! `U` is held fixed between calls to [`GmmObjective::refresh`], so value,
//! gradient and line restriction all refer to the same smooth function.

use nalgebra::{DMatrix, DVector};

use crate::error::{MbiError, Result};
use crate::estimating::{EstimatingSystem, GroupMoments};
use crate::linalg::{col_means, sym_eigen_desc};
use crate::penalty::{scad, scad_prime, PenaltySpec};
use crate::reduction::{build_reduction, build_reduction_with, GroupReduction, ReductionMap};

/// Relative step of the central differences.
pub const DIFF_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientRule {
    /// Closed-form gradient of the frozen-`U` objective.
    #[default]
    Analytic,
    /// Central differences with step `1e-6·max(1, |β_j|)`.
    CentralDifference,
}

/// Central-difference gradient with per-coordinate step `rel·max(1, |x_j|)`.
pub fn central_difference_with_step<F>(f: F, x: &DVector<f64>, rel: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let mut grad = DVector::zeros(x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let h = rel * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let up = f(&probe)?;
        probe[j] = x[j] - h;
        let down = f(&probe)?;
        probe[j] = x[j];
        grad[j] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

pub fn central_difference<F>(f: F, x: &DVector<f64>) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    central_difference_with_step(f, x, DIFF_STEP)
}

/// `(x, mᵀx)` with `S x = m`; Cholesky first, eigen pseudo-inverse when `S`
/// is not numerically positive definite.
fn solve_psd(s: &DMatrix<f64>, m: &DVector<f64>) -> (DVector<f64>, f64) {
    if m.is_empty() {
        return (DVector::zeros(0), 0.0);
    }
    if let Some(chol) = s.clone().cholesky() {
        let x = chol.solve(m);
        let q = m.dot(&x);
        if q.is_finite() {
            return (x, q);
        }
    }
    let (values, vectors) = sym_eigen_desc(s);
    let proj = vectors.tr_mul(m);
    let scaled = DVector::from_iterator(
        values.len(),
        values.iter().zip(proj.iter()).map(|(&l, &c)| if l > 0.0 { c / l } else { 0.0 }),
    );
    let x = &vectors * scaled;
    let q = m.dot(&x);
    (x, q)
}

/// Smoothed penalty gradient: the central difference of `p_λ(|·|)`.
fn penalty_gradient(beta: &DVector<f64>, spec: &PenaltySpec) -> DVector<f64> {
    beta.map(|b| {
        let h = DIFF_STEP * b.abs().max(1.0);
        (scad((b + h).abs(), spec) - scad((b - h).abs(), spec)) / (2.0 * h)
    })
}

/// One group's contribution evaluated at `β` under a fixed reduction.
struct GroupEval {
    h: DMatrix<f64>,
    x: DVector<f64>,
    value: f64,
}

fn eval_group(gm: &GroupMoments, red: &GroupReduction, fixed: Option<&DMatrix<f64>>, beta: &DVector<f64>) -> GroupEval {
    if red.n_components() == 0 {
        return GroupEval {
            h: DMatrix::zeros(gm.n(), 0),
            x: DVector::zeros(0),
            value: 0.0,
        };
    }
    let h = red.transform(&gm.moment_matrix(beta));
    let n = gm.n() as f64;
    let m = col_means(&h);
    let (x, value) = match fixed {
        Some(s) => solve_psd(s, &m),
        None => solve_psd(&(h.tr_mul(&h) / n), &m),
    };
    GroupEval { h, x, value }
}

pub struct GmmObjective<'a> {
    pub system: &'a EstimatingSystem,
    pub penalty: PenaltySpec,
    pub reduction: ReductionMap,
    pub rule: GradientRule,
    /// Per-group `UWUᵀ` held at a reference point; `None` evaluates it at `β`.
    pub weights: Option<Vec<DMatrix<f64>>>,
}

impl<'a> GmmObjective<'a> {
    /// Builds the objective with the reduction computed at `beta`.
    pub fn new(system: &'a EstimatingSystem, penalty: PenaltySpec, beta: &DVector<f64>) -> Result<Self> {
        Ok(Self {
            system,
            penalty,
            reduction: build_reduction(system, beta)?,
            rule: GradientRule::default(),
            weights: None,
        })
    }

    /// Holds `UWUᵀ` at its value at `beta`, making the quadratic part a
    /// convex quadratic in `β`.
    pub fn freeze_weights(&mut self, beta: &DVector<f64>) {
        let weights = self
            .system
            .groups
            .iter()
            .zip(&self.reduction.groups)
            .map(|(gm, red)| {
                let h = red.transform(&gm.moment_matrix(beta));
                h.tr_mul(&h) / gm.n() as f64
            })
            .collect();
        self.weights = Some(weights);
    }

    fn weight(&self, r: usize) -> Option<&DMatrix<f64>> {
        self.weights.as_ref().map(|w| &w[r])
    }

    /// Recomputes `U` at `beta`. With `keep_plan`, which blocks are reduced
    /// and how many components they keep stay as they are.
    pub fn refresh(&mut self, beta: &DVector<f64>, keep_plan: bool) -> Result<()> {
        self.reduction = if keep_plan {
            build_reduction_with(self.system, beta, Some(&self.reduction))?
        } else {
            build_reduction(self.system, beta)?
        };
        Ok(())
    }

    /// Per-group quadratic forms.
    pub fn group_values(&self, beta: &DVector<f64>) -> Vec<f64> {
        self.system
            .groups
            .iter()
            .zip(&self.reduction.groups)
            .enumerate()
            .map(|(r, (gm, red))| eval_group(gm, red, self.weight(r), beta).value)
            .collect()
    }

    /// The unpenalized quadratic part.
    pub fn quadratic(&self, beta: &DVector<f64>) -> f64 {
        self.group_values(beta).iter().sum()
    }

    pub fn value(&self, beta: &DVector<f64>) -> Result<f64> {
        let v = self.quadratic(beta) + self.penalty.total(beta.as_slice());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(MbiError::NonFiniteObjective)
        }
    }

    /// Gradient with the penalty smoothed by central differences at its kink.
    pub fn gradient(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.quadratic_gradient(beta)? + penalty_gradient(beta, &self.penalty))
    }

    /// Orthant-wise pseudo-gradient: the one-sided SCAD derivative at zero
    /// coordinates, zero when the quadratic slope lies within `[−λ, λ]`.
    pub fn pseudo_gradient(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        let q = self.quadratic_gradient(beta)?;
        let lambda = self.penalty.lambda;
        Ok(DVector::from_fn(beta.len(), |j, _| {
            let b = beta[j];
            if b != 0.0 {
                q[j] + b.signum() * scad_prime(b.abs(), &self.penalty)
            } else if q[j] + lambda < 0.0 {
                q[j] + lambda
            } else if q[j] - lambda > 0.0 {
                q[j] - lambda
            } else {
                0.0
            }
        }))
    }

    /// Gradient of the unpenalized part under the configured rule.
    pub fn quadratic_gradient(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        let grad = match self.rule {
            GradientRule::Analytic => self.analytic_quadratic_gradient(beta),
            GradientRule::CentralDifference => central_difference(|b| Ok(self.quadratic(b)), beta)?,
        };
        if grad.iter().all(|g| g.is_finite()) {
            Ok(grad)
        } else {
            Err(MbiError::NonFiniteObjective)
        }
    }

    /// With `H = G Uᵀ`, `m = mean(H)`, `S = HᵀH/n`, `x = S⁻¹m`, `w = Hx` and
    /// `v = Uᵀx` split by donor, `∂(mᵀS⁻¹m)/∂β = (2/n) Σ_k X_kᵀ [(Z_k v_k) ⊙ (w − 1)]`.
    /// With frozen weights the `w` term drops out.
    fn analytic_quadratic_gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let mut grad = DVector::zeros(beta.len());
        for (r, (gm, red)) in self.system.groups.iter().zip(&self.reduction.groups).enumerate() {
            let fixed = self.weight(r);
            let ev = eval_group(gm, red, fixed, beta);
            if ev.x.is_empty() {
                continue;
            }
            let n = gm.n() as f64;
            let weight = match fixed {
                Some(_) => DVector::from_element(gm.n(), -1.0),
                None => (&ev.h * &ev.x).add_scalar(-1.0),
            };
            let v = if red.is_identity() {
                ev.x.clone()
            } else {
                red.u.tr_mul(&ev.x)
            };
            for (k, block) in gm.blocks.iter().enumerate() {
                let off = gm.offsets[k];
                let zk = gm.z.columns(off, block.len());
                let c = zk * v.rows(off, block.len());
                let r = c.component_mul(&weight);
                grad += gm.views[k].tr_mul(&r) * (2.0 / n);
            }
        }
        grad
    }

    /// Precomputes the restriction `α ↦ f*(β + α s)` under the current `U`.
    pub fn line(&self, beta: &DVector<f64>, dir: &DVector<f64>) -> LineRestriction {
        let groups = self
            .system
            .groups
            .iter()
            .zip(&self.reduction.groups)
            .enumerate()
            .filter(|(_, (_, red))| red.n_components() > 0)
            .map(|(r, (gm, red))| {
                let n = gm.n() as f64;
                let h0 = red.transform(&gm.moment_matrix(beta));
                let mut xs = DMatrix::zeros(gm.n(), gm.n_donors());
                for (k, view) in gm.views.iter().enumerate() {
                    xs.set_column(k, &(view * dir));
                }
                // G(β + αs) = G₀ − α G₁
                let h1 = red.transform(&gm.scale_blocks(&xs));
                match self.weight(r) {
                    Some(s) => LineGroup {
                        m0: col_means(&h0),
                        m1: col_means(&h1),
                        s00: s.clone(),
                        s01: DMatrix::zeros(s.nrows(), s.ncols()),
                        s11: DMatrix::zeros(s.nrows(), s.ncols()),
                    },
                    None => LineGroup {
                        m0: col_means(&h0),
                        m1: col_means(&h1),
                        s00: h0.tr_mul(&h0) / n,
                        s01: h0.tr_mul(&h1) / n,
                        s11: h1.tr_mul(&h1) / n,
                    },
                }
            })
            .collect();
        LineRestriction {
            groups,
            beta: beta.clone(),
            dir: dir.clone(),
            penalty: self.penalty,
        }
    }
}

struct LineGroup {
    m0: DVector<f64>,
    m1: DVector<f64>,
    s00: DMatrix<f64>,
    s01: DMatrix<f64>,
    s11: DMatrix<f64>,
}

/// `f*` along a ray, each evaluation costing one small factorization per group.
pub struct LineRestriction {
    groups: Vec<LineGroup>,
    beta: DVector<f64>,
    dir: DVector<f64>,
    penalty: PenaltySpec,
}

impl LineRestriction {
    /// `f*(β + α s)`, or `+∞` when not finite.
    pub fn value(&self, alpha: f64) -> f64 {
        let mut total = 0.0;
        for g in &self.groups {
            let m = &g.m0 - &g.m1 * alpha;
            let cross = &g.s01 + g.s01.transpose();
            let s = &g.s00 - cross * alpha + &g.s11 * (alpha * alpha);
            total += solve_psd(&s, &m).1;
        }
        let point = &self.beta + &self.dir * alpha;
        total += self.penalty.total(point.as_slice());
        if total.is_finite() {
            total
        } else {
            f64::INFINITY
        }
    }
}
