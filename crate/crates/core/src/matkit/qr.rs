use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Upper-triangular factor `R` of `A = ΩR` (Householder), with the sign of
/// each row chosen so the diagonal is nonnegative.
pub fn qr_upper_factor(a: &Matrix) -> Result<Matrix> {
    let n = a.ensure_square()?;
    let scale = a.frobenius_norm();
    if !scale.is_finite() {
        return Err(Error::NonFinite("qr input"));
    }
    let mut r = a.clone();
    let mut u = vec![0.0; n];
    for k in 0..n {
        let mut sigma = 0.0;
        for i in k..n {
            sigma += r[(i, k)] * r[(i, k)];
        }
        let norm = sigma.sqrt();
        if norm <= n as f64 * f64::EPSILON * scale {
            return Err(Error::Singular);
        }
        let alpha = if r[(k, k)] > 0.0 { -norm } else { norm };
        for i in k..n {
            u[i] = r[(i, k)];
        }
        u[k] -= alpha;
        let uu: f64 = u[k..n].iter().map(|x| x * x).sum();
        if uu > 0.0 {
            for j in k..n {
                let mut s = 0.0;
                for i in k..n {
                    s += u[i] * r[(i, j)];
                }
                let f = 2.0 * s / uu;
                for i in k..n {
                    r[(i, j)] -= f * u[i];
                }
            }
        }
        for i in (k + 1)..n {
            r[(i, k)] = 0.0;
        }
    }
    for i in 0..n {
        if r[(i, i)] < 0.0 {
            for j in i..n {
                r[(i, j)] = -r[(i, j)];
            }
        }
    }
    Ok(r)
}

/// First-order stand-in for `[I + Δ]_R`: `I + triu(Δ) + triu(Δ, 1)`, or just
/// `I + triu(Δ)` when `large_step` is set.
pub fn qr_upper_approx(delta: &Matrix, large_step: bool) -> Matrix {
    let n = delta.rows();
    Matrix::from_fn(n, n, |i, j| {
        let base = if i == j { 1.0 } else { 0.0 };
        if j < i {
            0.0
        } else if j == i || large_step {
            base + delta[(i, j)]
        } else {
            2.0 * delta[(i, j)]
        }
    })
}
