//! Dense linear-algebra helpers shared by the filter and the analysis tools.

use nalgebra::{DMatrix, Matrix3, SMatrix};

use crate::error::{Error, Result};

/// Largest condition number accepted for an innovation covariance.
pub const MAX_CONDITION: f64 = 1e12;

/// Matrix exponential by scaling and squaring around a truncated Taylor
/// series.
///
/// The argument is scaled by `2^-s` until its 1-norm is at most 1/2, where a
/// degree-20 series is accurate far below double precision, then squared back
/// `s` times.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0;
    if norm1 > 0.5 {
        squarings = (norm1 / 0.5).log2().ceil() as i32;
    }
    let scaled = a / 2f64.powi(squarings);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Symmetric part `(P + Pᵀ)/2`.
pub fn symmetrize<const N: usize>(p: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (p + p.transpose()) * 0.5
}

/// Inverse of a symmetric positive-definite 3×3 matrix, refusing matrices
/// whose condition number exceeds [`MAX_CONDITION`].
pub fn spd_inverse3(s: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if !s.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularInnovation { condition: f64::INFINITY });
    }
    let eig = s.symmetric_eigen();
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if lo <= 0.0 || hi / lo > MAX_CONDITION {
        let condition = if lo <= 0.0 { f64::INFINITY } else { hi / lo };
        return Err(Error::SingularInnovation { condition });
    }
    let chol = s
        .cholesky()
        .ok_or(Error::SingularInnovation { condition: hi / lo })?;
    Ok(chol.inverse())
}

/// Singular values of `m`, descending. Pads wide matrices with zero rows so
/// the decomposition always exposes every right singular vector.
fn padded_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(cols, order.len());
    for (k, &i) in order.iter().enumerate() {
        v.column_mut(k).copy_from(&v_t.row(i).transpose());
    }
    (sv, v)
}

/// Descending singular values.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    padded_svd(m).0
}

/// Count of singular values above `tol · σ_max`.
pub fn numeric_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = singular_values(m);
    let top = sv.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * top).count()
}

/// Orthonormal basis (as columns) of the numerical nullspace of `m`.
pub fn nullspace_basis(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (sv, v) = padded_svd(m);
    let top = sv.first().copied().unwrap_or(0.0);
    let rank = if top == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s > tol * top).count()
    };
    v.columns(rank, m.ncols() - rank).into_owned()
}
