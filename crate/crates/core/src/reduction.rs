//! Principal-component reduction of near-singular weight blocks.
//!
//! Within group `r` the moments split into `g_(1)` (imputed from complete
//! observations) and `g_(2)`. When `W₁₁` is near-singular its leading
//! principal components `h = U₁ g_(1)` replace `g_(1)`; `g_(2)` is then
//! orthogonalized against `h` and reduced the same way. The transformed
//! system is `U g` with
//!
//! ```text
//! U = [ U₁              0  ]
//!     [ -U₂ V₂₁ V₁₁⁻¹ U₁  U₂ ]
//! ```

use nalgebra::DMatrix;

use crate::error::{MbiError, Result};
use crate::estimating::{weight_block, EstimatingSystem};
use crate::linalg::{rcond_from_eigen, sym_eigen_desc};
use nalgebra::DVector;

/// Reciprocal condition below which a block is reduced.
pub const RCOND_TRIGGER: f64 = 1e-8;

/// Retained second-block eigenvalues must exceed this fraction of the
/// largest eigenvalue across both blocks.
const CROSS_BLOCK_FLOOR: f64 = 1e-9;

/// `Ψ(t) = Σ_{j>t} λ_j / tr(Ω) + t·log(n d)/(n d)` for eigenvalues sorted in
/// decreasing order.
pub fn psi(eigenvalues: &[f64], n_r: usize, t: usize) -> f64 {
    let d = eigenvalues.len();
    let tr: f64 = eigenvalues.iter().sum();
    let nd = (n_r * d) as f64;
    let tail: f64 = eigenvalues[t..].iter().sum();
    tail / tr + t as f64 * nd.ln() / nd
}

/// Smallest minimizer of `Ψ` by enumeration over `t = 0..=d`.
pub fn select_pc_count_from_eigen(eigenvalues: &[f64], n_r: usize) -> Result<usize> {
    let tr: f64 = eigenvalues.iter().sum();
    if eigenvalues.is_empty() || !(tr > 0.0) {
        return Err(MbiError::ZeroTrace);
    }
    let d = eigenvalues.len();
    let nd = (n_r * d) as f64;
    let penalty = nd.ln() / nd;
    // Cumulative form of Ψ so every t costs O(1).
    let mut tail = tr;
    let mut best = (tail / tr, 0);
    for t in 1..=d {
        tail -= eigenvalues[t - 1];
        let value = tail.max(0.0) / tr + t as f64 * penalty;
        if value < best.0 {
            best = (value, t);
        }
    }
    Ok(best.1)
}

/// Number of eigenvalues above `tr(Ω)·log(n d)/(n d)`.
pub fn pc_threshold_count(eigenvalues: &[f64], n_r: usize) -> usize {
    let tr: f64 = eigenvalues.iter().sum();
    let nd = (n_r * eigenvalues.len()) as f64;
    let cut = tr * nd.ln() / nd;
    eigenvalues.iter().filter(|&&v| v > cut).count()
}

/// Number of principal components of `Ω` retained by the `Ψ` criterion.
pub fn select_pc_count(omega: &DMatrix<f64>, n_r: usize) -> Result<usize> {
    let (values, _) = sym_eigen_desc(omega);
    select_pc_count_from_eigen(&values, n_r)
}

/// Reduction of one group's moments.
#[derive(Debug, Clone)]
pub struct GroupReduction {
    pub group: usize,
    pub dim: usize,
    /// Coordinates of `g_(1)` and `g_(2)`.
    pub first: Vec<usize>,
    pub second: Vec<usize>,
    pub t1: usize,
    pub t2: usize,
    pub reduced_first: bool,
    pub reduced_second: bool,
    /// `t₁ × |first|`.
    pub u1: DMatrix<f64>,
    /// `t₂ × |second|`.
    pub u2: DMatrix<f64>,
    /// `V₂₁ V₁₁⁻¹`, `|second| × t₁`.
    pub proj: DMatrix<f64>,
    /// The map applied to `g^{(r)}`: identity when nothing was reduced,
    /// otherwise the block formula in original coordinate order.
    pub u: DMatrix<f64>,
    /// All moments are identically zero at the current `β`.
    pub vanishing: bool,
}

impl GroupReduction {
    pub fn n_components(&self) -> usize {
        self.u.nrows()
    }

    pub fn plan(&self) -> ReductionPlan {
        ReductionPlan {
            first: self.reduced_first.then_some(self.t1),
            second: self.reduced_second.then_some(self.t2),
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.vanishing && !self.reduced_first && !self.reduced_second
    }

    /// Per-sample transformed moments `G Uᵀ`.
    pub fn transform(&self, stack: &DMatrix<f64>) -> DMatrix<f64> {
        if self.is_identity() {
            stack.clone()
        } else {
            stack * self.u.transpose()
        }
    }

    /// Principal components `h_i` and orthogonalized `ḡ_(2),i` as rows.
    pub fn components(&self, stack: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let g1 = stack.select_columns(&self.first);
        let g2 = stack.select_columns(&self.second);
        let h = &g1 * self.u1.transpose();
        let gbar = g2 - &h * self.proj.transpose();
        (h, gbar)
    }

    /// Largest absolute entry of the sample covariance between `ḡ_(2)` and
    /// `h`, with the scale `‖h‖·‖ḡ_(2)‖/n` it should be compared against.
    pub fn orthogonality_residual(&self, stack: &DMatrix<f64>) -> (f64, f64) {
        let (h, gbar) = self.components(stack);
        let n = stack.nrows().max(1) as f64;
        if h.ncols() == 0 || gbar.ncols() == 0 {
            return (0.0, 1.0);
        }
        let cross = gbar.tr_mul(&h) / n;
        let scale = (h.norm() * gbar.norm() / n).max(f64::MIN_POSITIVE);
        (cross.amax(), scale)
    }
}

/// Eigenvectors of the retained components, as rows.
fn leading_rows(vectors: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
    vectors.columns(0, t).transpose()
}

/// The structural choices of a group reduction: for each block, `None` keeps
/// it whole and `Some(t)` keeps its leading `t` principal components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReductionPlan {
    pub first: Option<usize>,
    pub second: Option<usize>,
}

/// Builds the reduction of one group's weight `w` given the split, choosing
/// the plan from the near-singularity trigger and `Ψ`.
pub fn reduce_group(
    group: usize,
    w: &DMatrix<f64>,
    first: &[usize],
    second: &[usize],
    n_r: usize,
) -> Result<GroupReduction> {
    reduce_group_with(group, w, first, second, n_r, None)
}

/// As [`reduce_group`], but with the plan fixed when one is given. Retained
/// counts are capped by the number of usable eigenvalues.
pub fn reduce_group_with(
    group: usize,
    w: &DMatrix<f64>,
    first: &[usize],
    second: &[usize],
    n_r: usize,
    plan: Option<ReductionPlan>,
) -> Result<GroupReduction> {
    let dim = w.nrows();
    let trace = w.trace();
    let empty = |r, c| DMatrix::<f64>::zeros(r, c);
    if !(trace > 0.0) {
        return Ok(GroupReduction {
            group,
            dim,
            first: first.to_vec(),
            second: second.to_vec(),
            t1: 0,
            t2: 0,
            reduced_first: false,
            reduced_second: false,
            u1: empty(0, first.len()),
            u2: empty(0, second.len()),
            proj: empty(second.len(), 0),
            u: empty(0, dim),
            vanishing: true,
        });
    }

    let w11 = w.select_rows(first).select_columns(first);
    let (u1, v11, reduced_first) = if first.is_empty() {
        (empty(0, 0), empty(0, 0), false)
    } else {
        let (values, vectors) = sym_eigen_desc(&w11);
        let choice = match plan {
            Some(p) => p.first,
            None if rcond_from_eigen(&values) < RCOND_TRIGGER => Some(if values.iter().sum::<f64>() > 0.0 {
                select_pc_count_from_eigen(&values, n_r)?
            } else {
                0
            }),
            None => None,
        };
        match choice {
            Some(t) => {
                let t1 = t.min(values.iter().filter(|&&v| v > 0.0).count());
                let v11 = DMatrix::from_diagonal(&DVector::from_column_slice(&values[..t1]));
                (leading_rows(&vectors, t1), v11, true)
            }
            None => (DMatrix::identity(first.len(), first.len()), w11.clone(), false),
        }
    };
    let t1 = u1.nrows();
    let top1 = if reduced_first {
        (0..t1).map(|i| v11[(i, i)]).fold(0.0, f64::max)
    } else {
        sym_eigen_desc(&v11).0.first().copied().unwrap_or(0.0)
    };

    let (u2, proj, reduced_second) = if second.is_empty() {
        (empty(0, 0), empty(0, t1), false)
    } else {
        let w22 = w.select_rows(second).select_columns(second);
        let (omega, proj) = if t1 == 0 {
            (w22, empty(second.len(), 0))
        } else {
            let v21 = w.select_rows(second).select_columns(first) * u1.transpose();
            let chol = v11.clone().cholesky().ok_or(MbiError::SingularV1)?;
            // proj = V₂₁ V₁₁⁻¹ via the symmetric solve V₁₁ projᵀ = V₂₁ᵀ.
            let proj = chol.solve(&v21.transpose()).transpose();
            let omega = w22 - &proj * v21.transpose();
            (omega, proj)
        };
        let (values, vectors) = sym_eigen_desc(&omega);
        let top = values.first().copied().unwrap_or(0.0).max(top1);
        let tr: f64 = values.iter().sum();
        let min = values.last().copied().unwrap_or(0.0);
        let usable = values.iter().take_while(|&&v| v >= CROSS_BLOCK_FLOOR * top && v > 0.0).count();
        let choice = match plan {
            Some(p) => p.second,
            None if top > 0.0 && min >= RCOND_TRIGGER * top => None,
            None if tr > CROSS_BLOCK_FLOOR * top => Some(select_pc_count_from_eigen(&values, n_r)?),
            None => Some(0),
        };
        match choice {
            None if usable == values.len() => (DMatrix::identity(second.len(), second.len()), proj, false),
            None => (leading_rows(&vectors, usable), proj, true),
            Some(t) => (leading_rows(&vectors, t.min(usable)), proj, true),
        }
    };
    let t2 = u2.nrows();
    if t1 + t2 == 0 {
        return Err(MbiError::AllComponentsDropped { group });
    }

    let u = if !reduced_first && !reduced_second {
        DMatrix::identity(dim, dim)
    } else {
        let mut u = DMatrix::zeros(t1 + t2, dim);
        for (c, &col) in first.iter().enumerate() {
            for row in 0..t1 {
                u[(row, col)] = u1[(row, c)];
            }
        }
        if t2 > 0 {
            let lower_left = -(&u2 * &proj * &u1);
            for (c, &col) in second.iter().enumerate() {
                for row in 0..t2 {
                    u[(t1 + row, col)] = u2[(row, c)];
                }
            }
            for (c, &col) in first.iter().enumerate() {
                for row in 0..t2 {
                    u[(t1 + row, col)] = lower_left[(row, c)];
                }
            }
        }
        u
    };
    Ok(GroupReduction {
        group,
        dim,
        first: first.to_vec(),
        second: second.to_vec(),
        t1,
        t2,
        reduced_first,
        reduced_second,
        u1,
        u2,
        proj,
        u,
        vanishing: false,
    })
}

/// Per-group reductions, aligned with `EstimatingSystem::groups`.
#[derive(Debug, Clone)]
pub struct ReductionMap {
    pub groups: Vec<GroupReduction>,
}

impl ReductionMap {
    pub fn total_components(&self) -> usize {
        self.groups.iter().map(GroupReduction::n_components).sum()
    }

    /// Block-diagonal global `U`.
    pub fn global(&self) -> DMatrix<f64> {
        let rows = self.total_components();
        let cols: usize = self.groups.iter().map(|g| g.dim).sum();
        let mut u = DMatrix::zeros(rows, cols);
        let (mut r0, mut c0) = (0, 0);
        for g in &self.groups {
            u.view_mut((r0, c0), g.u.shape()).copy_from(&g.u);
            r0 += g.u.nrows();
            c0 += g.dim;
        }
        u
    }

    /// `(t₁, t₂)` per group.
    pub fn counts(&self) -> Vec<(usize, usize)> {
        self.groups
            .iter()
            .map(|g| {
                if g.is_identity() {
                    (g.first.len(), g.second.len())
                } else {
                    (g.t1, g.t2)
                }
            })
            .collect()
    }
}

/// Builds the reduction of every group at `beta`.
pub fn build_reduction(system: &EstimatingSystem, beta: &DVector<f64>) -> Result<ReductionMap> {
    build_reduction_with(system, beta, None)
}

/// Builds the reduction at `beta`, reusing the per-group plans of `fixed`.
pub fn build_reduction_with(
    system: &EstimatingSystem,
    beta: &DVector<f64>,
    fixed: Option<&ReductionMap>,
) -> Result<ReductionMap> {
    let groups = system
        .groups
        .iter()
        .enumerate()
        .map(|(r, gm)| {
            let stack = gm.moment_matrix(beta);
            let w = weight_block(&stack);
            let (first, second) = gm.split();
            let plan = fixed.and_then(|m| m.groups.get(r)).filter(|g| !g.vanishing).map(GroupReduction::plan);
            reduce_group_with(gm.group, &w, &first, &second, gm.n(), plan)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReductionMap { groups })
}
