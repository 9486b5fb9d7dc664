#![allow(dead_code)]

use hessfit_core::matrix::Matrix;
use hessfit_core::rng::SeededRng;
use nalgebra::DMatrix;

pub fn to_na(a: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice())
}

pub fn from_na(a: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub fn sigma_max(a: &Matrix) -> f64 {
    to_na(a).singular_values().max()
}

pub fn random_spd(n: usize, cond: f64, rng: &mut SeededRng) -> Matrix {
    let g = to_na(&rng.normal_matrix(n, n));
    let q = g.qr().q();
    let d: Vec<f64> = (0..n)
        .map(|i| if n == 1 { 1.0 } else { cond.powf(i as f64 / (n - 1) as f64) })
        .collect();
    let m = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)) * q.transpose();
    from_na(&((&m + m.transpose()) * 0.5))
}

pub fn random_symmetric(n: usize, rng: &mut SeededRng) -> Matrix {
    rng.normal_matrix(n, n).symmetrized()
}

/// Oracle `(A)^p` for SPD `A` via nalgebra's eigensolver.
pub fn oracle_pow(a: &Matrix, p: f64) -> Matrix {
    let e = to_na(a).symmetric_eigen();
    let d = e.eigenvalues.map(|l| l.powf(p));
    from_na(&(&e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()))
}

pub fn max_diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).max_abs()
}
