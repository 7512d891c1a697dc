//! Thin wrappers over `faer` for the handful of dense operations we need.

use faer::{Mat, Side};

use crate::error::{Error, Result};

pub use faer::Mat as Matrix;

/// Force `faer` to run single-threaded so results never depend on how many
/// workers share the machine.
pub fn pin_sequential() {
    faer::set_global_parallelism(faer::Par::Seq);
}

/// Eigendecomposition of a real symmetric matrix (lower triangle is read).
/// Eigenvalues come back ascending, eigenvectors as matching columns.
pub fn symmetric_eigen(mat: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    if mat.nrows() != mat.ncols() {
        return Err(Error::Dimension(format!("matrix is {}x{}, not square", mat.nrows(), mat.ncols())));
    }
    pin_sequential();
    let evd = mat
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::numeric(format!("symmetric eigensolver failed: {e:?}")))?;
    let values: Vec<f64> = evd.S().column_vector().iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("symmetric eigensolver produced non-finite eigenvalues"));
    }
    let vectors = evd.U().to_owned();
    if values.windows(2).all(|w| w[0] <= w[1]) {
        return Ok((values, vectors));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted = order.iter().map(|&i| values[i]).collect();
    let perm = Mat::from_fn(vectors.nrows(), vectors.ncols(), |i, j| vectors[(i, order[j])]);
    Ok((sorted, perm))
}

/// `diag(d) · m`
pub fn scale_rows(d: &[f64], m: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| d[i] * m[(i, j)])
}

/// `mᵀ · diag(d) · m`, symmetrized to remove rounding asymmetry.
pub fn congruence(m: &Mat<f64>, d: &[f64]) -> Mat<f64> {
    pin_sequential();
    let mut out = m.transpose() * scale_rows(d, m);
    symmetrize(&mut out);
    out
}

pub fn symmetrize(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest entry of `|mᵀm - I|`.
pub fn orthogonality_defect(m: &Mat<f64>) -> f64 {
    pin_sequential();
    let g = m.transpose() * m;
    let mut worst = 0.0f64;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn trace(m: &Mat<f64>) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

pub fn frobenius_norm(m: &Mat<f64>) -> f64 {
    let mut sum = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            sum += m[(i, j)] * m[(i, j)];
        }
    }
    sum.sqrt()
}
