//! Dense matrix kernels: norm bounds and estimates, symmetric eigensolver,
//! QR factors, matrix iterations, Procrustes rotations, factorizations.

mod eig;
mod iterations;
mod norms;
mod procrustes;
mod qr;
mod solve;

pub use eig::{sym_condition, sym_eig, sym_eigvals, sym_inv_sqrt, sym_pow, sym_sqrt, SymEig, SYMMETRY_TOL};
pub use iterations::{inverse_fourth_root_step, newton_schulz_step};
pub use norms::{
    estimate_spectral_norm, estimate_spectral_norm_refined, spectral_norm_bounds, NormBounds,
    DEFAULT_SUBSPACE_DIM, DEFAULT_SUBSPACE_ITERS,
};
pub use procrustes::{procrustes_rotate, RotationOrder};
pub use qr::{qr_upper_approx, qr_upper_factor};
pub use solve::{
    inverse, solve_lower, solve_lower_transposed, solve_upper, solve_upper_transposed, Cholesky, Lu,
};

use crate::matrix::Matrix;

/// `H_ij = 1/(i + j − 1)` with one-based indices.
pub fn hilbert(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |i, j| 1.0 / (i + j + 1) as f64)
}

/// Orthogonality defect `‖ΩᵀΩ − I‖_F` of a square matrix.
pub fn orthogonality_defect(omega: &Matrix) -> f64 {
    let mut g = omega.tr_matmul(omega);
    g.add_diag(-1.0);
    g.frobenius_norm()
}
