//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIGEN_ZERO_REL: f64 = 1e-12;

/// Eigen-decomposition of the symmetrized matrix `(a + aᵀ)/2` with
/// eigenvalues sorted in decreasing order. Eigenvalues below
/// `EIGEN_ZERO_REL * max` (including negative round-off) are set to zero.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let d = a.nrows();
    if d == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let max = eig.eigenvalues[order[0]].max(0.0);
    let values = order
        .iter()
        .map(|&i| {
            let v = eig.eigenvalues[i];
            if v <= EIGEN_ZERO_REL * max {
                0.0
            } else {
                v
            }
        })
        .collect();
    let mut vectors = DMatrix::zeros(d, d);
    for (c, &i) in order.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Reciprocal condition number `λ_min / λ_max` of a symmetric PSD matrix.
pub fn rcond_from_eigen(values: &[f64]) -> f64 {
    match (values.first(), values.last()) {
        (Some(&max), Some(&min)) if max > 0.0 => (min / max).max(0.0),
        _ => 0.0,
    }
}

pub fn rcond_sym(a: &DMatrix<f64>) -> f64 {
    let (values, _) = sym_eigen_desc(a);
    rcond_from_eigen(&values)
}

/// Solves `a x = b` for symmetric positive-definite `a` via Cholesky.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    let x = chol.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    let inv = chol.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

/// Uncentered second moment `gᵀg / n` of the rows of `g`.
pub fn mean_outer(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows().max(1) as f64;
    g.tr_mul(g) / n
}

/// Column means.
pub fn col_means(g: &DMatrix<f64>) -> DVector<f64> {
    let n = g.nrows().max(1) as f64;
    DVector::from_iterator(g.ncols(), g.column_iter().map(|c| c.sum() / n))
}

/// Frobenius-norm scale used for relative tolerances; never below 1e-300.
pub fn scale_of(a: &DMatrix<f64>) -> f64 {
    a.norm().max(1e-300)
}
