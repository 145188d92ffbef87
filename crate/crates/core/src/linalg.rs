//! Small dense least-squares helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Relative threshold on |R_jj| / max|R_jj| below which a design is treated
/// as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Least squares solution of min ‖Aβ − b‖ via thin QR, rejecting rank-deficient A.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, p) = a.shape();
    if n < p {
        return Err(Error::RankDeficient);
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let max_diag = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if max_diag == 0.0 || (0..p).any(|j| r[(j, j)].abs() <= RANK_TOL * max_diag) {
        return Err(Error::RankDeficient);
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb).ok_or(Error::RankDeficient)
}

/// Ordinary least squares coefficients for a dataset.
pub fn ols_beta(data: &Dataset) -> Result<Vec<f64>> {
    Ok(lstsq(data.x(), data.y())?.as_slice().to_vec())
}

/// Weighted least squares with nonnegative weights.
pub fn wls_beta(data: &Dataset, weights: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = data.x().shape();
    let sw: Vec<f64> = weights.iter().map(|w| w.max(0.0).sqrt()).collect();
    let a = DMatrix::from_fn(n, p, |i, j| data.x()[(i, j)] * sw[i]);
    let b = DVector::from_iterator(n, data.y().iter().zip(&sw).map(|(y, s)| y * s));
    Ok(lstsq(&a, &b)?.as_slice().to_vec())
}

pub fn check_full_rank(data: &Dataset) -> Result<()> {
    ols_beta(data).map(|_| ())
}

/// Solves A v = b for symmetric positive definite A.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|c| c.inverse())
}
