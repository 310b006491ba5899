//! Stacked estimating functions and their per-group weight blocks.
//!
//! For sample `i` of group `r` and donor `k ∈ G(r)` the estimating function
//! is `g_i^{(r,k)}(β) = z_i^{(k)} (y_i − x_i^{(k)} β)`, where `x_i^{(k)}` is
//! the sample imputed from donor `k` and `z_i^{(k)}` its `a(k)` sub-vector.
//! Stacking over donors gives `g_i^{(r)}`; the system keeps the per-sample
//! matrix so the weight `W^{(r)}` can be rebuilt at any `β`.

use nalgebra::{DMatrix, DVector};

use crate::error::{MbiError, Result};
use crate::imputation::ImputationSet;
use crate::linalg::{col_means, mean_outer};
use crate::patterns::PatternIndex;

/// Moment data for one group.
#[derive(Debug, Clone)]
pub struct GroupMoments {
    pub group: usize,
    pub rows: Vec<usize>,
    pub y: DVector<f64>,
    /// Donor group indices `G(r)`.
    pub donors: Vec<usize>,
    /// Imputed samples `x_i^{(k)}`, one `n_r × p` matrix per donor.
    pub views: Vec<DMatrix<f64>>,
    /// `a(k)` for each donor.
    pub blocks: Vec<Vec<usize>>,
    /// Start offset of each donor's block inside `g_i^{(r)}`.
    pub offsets: Vec<usize>,
    /// Concatenated `z_i^{(k)}` over donors, `n_r × dim`.
    pub z: DMatrix<f64>,
    /// Whether each donor block belongs to `g_(1)` (imputed from complete
    /// observations, or the group's own complete moments).
    pub primary: Vec<bool>,
}

impl GroupMoments {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn n_donors(&self) -> usize {
        self.donors.len()
    }

    /// Residuals `y_i − x_i^{(k)} β`, one column per donor.
    pub fn residuals(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.n(), self.n_donors());
        for (k, view) in self.views.iter().enumerate() {
            let fitted = view * beta;
            e.set_column(k, &(&self.y - fitted));
        }
        e
    }

    /// Per-sample moments `g_i^{(r)}(β)` as rows of an `n_r × dim` matrix.
    pub fn moment_matrix(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let e = self.residuals(beta);
        self.scale_blocks(&e)
    }

    /// `[diag(c_k) Z_k]_k` for per-donor row scalings `c`.
    pub(crate) fn scale_blocks(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = self.z.clone();
        for (k, block) in self.blocks.iter().enumerate() {
            let off = self.offsets[k];
            for col in off..off + block.len() {
                g.column_mut(col).component_mul_assign(&c.column(k));
            }
        }
        g
    }

    /// Group mean `g^{(r)}(β)` and the per-sample stack.
    pub fn moment_vector(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let g = self.moment_matrix(beta);
        (col_means(&g), g)
    }

    /// `∂ g^{(r)} / ∂β`, a `dim × p` matrix (constant: moments are affine).
    pub fn jacobian(&self) -> DMatrix<f64> {
        let n = self.n().max(1) as f64;
        let p = self.views.first().map_or(0, |v| v.ncols());
        let mut jac = DMatrix::zeros(self.dim(), p);
        for (k, block) in self.blocks.iter().enumerate() {
            let zk = self.z.columns(self.offsets[k], block.len());
            let part = zk.tr_mul(&self.views[k]) / -n;
            jac.view_mut((self.offsets[k], 0), (block.len(), p))
                .copy_from(&part);
        }
        jac
    }

    /// Coordinates of `g_(1)` and `g_(2)` within `g_i^{(r)}`.
    pub fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (k, block) in self.blocks.iter().enumerate() {
            let range = self.offsets[k]..self.offsets[k] + block.len();
            if self.primary[k] {
                first.extend(range);
            } else {
                second.extend(range);
            }
        }
        (first, second)
    }
}

/// Uncentered second moment `(1/n_r) Σ_i g_i g_iᵀ` of a per-sample stack.
pub fn weight_block(stack: &DMatrix<f64>) -> DMatrix<f64> {
    mean_outer(stack)
}

/// One donor's block of per-sample moments.
#[derive(Debug, Clone)]
pub struct MomentBlock {
    pub group: usize,
    pub donor: usize,
    pub dimension: usize,
    /// `n_r × |a(k)|`.
    pub samples: DMatrix<f64>,
}

/// The full moment system over all groups large enough to contribute.
#[derive(Debug, Clone)]
pub struct EstimatingSystem {
    pub groups: Vec<GroupMoments>,
    pub n_total: usize,
    pub p: usize,
}

impl EstimatingSystem {
    /// Assembles moments from the imputed views. Groups with fewer than
    /// `min_group_size` rows contribute no block of their own.
    pub fn build(
        idx: &PatternIndex,
        imputations: &ImputationSet,
        y: &DVector<f64>,
        min_group_size: usize,
    ) -> Result<Self> {
        let complete = idx.complete_group();
        let p = idx.n_cols;
        let mut groups = Vec::new();
        for (r, g) in idx.groups.iter().enumerate() {
            if g.size() < min_group_size.max(1) {
                continue;
            }
            let views_r = &imputations.views[r];
            if views_r.len() != g.n_donors() {
                return Err(MbiError::DimensionMismatch(format!(
                    "group {r}: {} views for {} donors",
                    views_r.len(),
                    g.n_donors()
                )));
            }
            let mut blocks = Vec::new();
            let mut offsets = Vec::new();
            let mut views = Vec::new();
            let mut primary = Vec::new();
            let mut dim = 0;
            for (view, &k) in views_r.iter().zip(&g.donors) {
                if view.donor != k || view.values.shape() != (g.size(), p) {
                    return Err(MbiError::DimensionMismatch(format!(
                        "group {r}: view for donor {} has shape {:?}",
                        view.donor,
                        view.values.shape()
                    )));
                }
                let a_k = idx.groups[k].observed.clone();
                offsets.push(dim);
                dim += a_k.len();
                blocks.push(a_k);
                views.push(view.values.clone());
                primary.push(Some(k) == complete || g.is_complete());
            }
            let mut z = DMatrix::zeros(g.size(), dim);
            for (k, block) in blocks.iter().enumerate() {
                for (c, &col) in block.iter().enumerate() {
                    z.set_column(offsets[k] + c, &views[k].column(col));
                }
            }
            groups.push(GroupMoments {
                group: r,
                rows: g.members.clone(),
                y: y.select_rows(&g.members),
                donors: g.donors.clone(),
                views,
                blocks,
                offsets,
                z,
                primary,
            });
        }
        Ok(Self {
            groups,
            n_total: idx.n_rows(),
            p,
        })
    }

    pub fn total_dim(&self) -> usize {
        self.groups.iter().map(GroupMoments::dim).sum()
    }

    /// Concatenated group means `g(β)`.
    pub fn moments(&self, beta: &DVector<f64>) -> DVector<f64> {
        let parts: Vec<DVector<f64>> = self.groups.iter().map(|g| g.moment_vector(beta).0).collect();
        concat(&parts)
    }

    /// Block-diagonal weight `W(β)`.
    pub fn weight(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let d = self.total_dim();
        let mut w = DMatrix::zeros(d, d);
        let mut off = 0;
        for g in &self.groups {
            let block = weight_block(&g.moment_matrix(beta));
            w.view_mut((off, off), (g.dim(), g.dim())).copy_from(&block);
            off += g.dim();
        }
        w
    }

    /// Stacked `∂g/∂β` (`total_dim × p`).
    pub fn jacobian(&self) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.total_dim(), self.p);
        let mut off = 0;
        for g in &self.groups {
            jac.view_mut((off, 0), (g.dim(), self.p)).copy_from(&g.jacobian());
            off += g.dim();
        }
        jac
    }

    /// Per-donor moment blocks, ordered by group then donor.
    pub fn blocks(&self, beta: &DVector<f64>) -> Vec<MomentBlock> {
        let mut out = Vec::new();
        for g in &self.groups {
            let stack = g.moment_matrix(beta);
            for (k, block) in g.blocks.iter().enumerate() {
                out.push(MomentBlock {
                    group: g.group,
                    donor: g.donors[k],
                    dimension: block.len(),
                    samples: stack.columns(g.offsets[k], block.len()).into_owned(),
                });
            }
        }
        out
    }
}

pub(crate) fn concat(parts: &[DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|v| v.len()).sum();
    DVector::from_iterator(len, parts.iter().flat_map(|v| v.iter().copied()))
}
