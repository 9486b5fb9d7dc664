//! Cyclic Jacobi eigensolver for symmetric matrices and the spectral matrix
//! functions built on it.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAX_SWEEPS: usize = 100;
/// Relative symmetry tolerance on entry.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SymEig {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector for `values[k]`.
    pub vectors: Matrix,
}

fn check_symmetric(a: &Matrix) -> Result<usize> {
    let n = a.ensure_square()?;
    if !a.is_finite() {
        return Err(Error::NonFinite("sym_eig input"));
    }
    let d = a.asymmetry();
    if d > SYMMETRY_TOL * a.frobenius_norm().max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(d));
    }
    Ok(n)
}

pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    let n = check_symmetric(a)?;
    let (vals, vecs) = jacobi(a.symmetrized().into_vec(), n, true);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
    let values = order.iter().map(|&k| vals[k]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| vecs[i * n + order[j]]);
    Ok(SymEig { values, vectors })
}

/// Eigenvalues only (ascending); skips the rotation accumulation.
pub fn sym_eigvals(a: &Matrix) -> Result<Vec<f64>> {
    let n = check_symmetric(a)?;
    let (mut vals, _) = jacobi(a.symmetrized().into_vec(), n, false);
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

fn jacobi(mut a: Vec<f64>, n: usize, want_vectors: bool) -> (Vec<f64>, Vec<f64>) {
    let mut v = if want_vectors { Matrix::identity(n).into_vec() } else { Vec::new() };
    for sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off == 0.0 || !off.is_finite() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                if want_vectors {
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

impl SymEig {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let fv: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let v = &self.vectors;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += v[(i, k)] * fv[k] * v[(j, k)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("nonempty spectrum")
    }
}

/// `A^p` for symmetric positive definite `A`.
pub fn sym_pow(a: &Matrix, p: f64) -> Result<Matrix> {
    let e = sym_eig(a)?;
    if !(e.min() > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(e.map(|l| l.powf(p)))
}

pub fn sym_sqrt(a: &Matrix) -> Result<Matrix> {
    let e = sym_eig(a)?;
    let floor = -1e-12 * e.max().abs().max(1.0);
    if e.min() < floor {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(e.map(|l| l.max(0.0).sqrt()))
}

pub fn sym_inv_sqrt(a: &Matrix) -> Result<Matrix> {
    sym_pow(a, -0.5)
}

/// Spectral condition number of a symmetric positive definite matrix.
pub fn sym_condition(a: &Matrix) -> Result<f64> {
    let vals = sym_eigvals(a)?;
    let (lo, hi) = (vals[0], vals[vals.len() - 1]);
    if !(lo > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(hi / lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matkit::hilbert;

    #[test]
    fn small_spectra() {
        let e = sym_eig(&Matrix::from_diag(&[5.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![2.0, 5.0]);
        let swap = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = sym_eig(&swap).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-15 && (e.values[1] - 1.0).abs() < 1e-15);
        let e = sym_eig(&hilbert(3)).unwrap();
        assert!((e.values[0] - 2.687_340_355_773_53e-3).abs() < 1e-12);
    }

    #[test]
    fn rejects_asymmetric() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn inverse_sqrt_of_hilbert() {
        let h = hilbert(3);
        let p = sym_pow(&h.matmul(&h), -0.5).unwrap();
        let r = &p.matmul(&h) - &Matrix::identity(3);
        assert!(r.frobenius_norm() < 1e-8);
    }
}
