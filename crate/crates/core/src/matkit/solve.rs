//! Dense factorizations and triangular solves.

use crate::error::{dim_err, Error, Result};
use crate::matrix::Matrix;

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn new(a: &Matrix) -> Result<Self> {
        let n = a.ensure_square()?;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &Matrix {
        &self.l
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let y = solve_lower(&self.l, b)?;
        solve_lower_transposed(&self.l, &y)
    }
}

/// LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn new(a: &Matrix) -> Result<Self> {
        let n = a.ensure_square()?;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let scale = a.max_abs();
        if !scale.is_finite() {
            return Err(Error::NonFinite("lu input"));
        }
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |b, c| if c.1 > b.1 { c } else { b });
            if pv == 0.0 {
                return Err(Error::Singular);
            }
            if p != k {
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = t;
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let d = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Self { lu, perm, sign })
    }

    pub fn det(&self) -> f64 {
        self.sign * self.lu.diag().iter().product::<f64>()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.lu.rows();
        if b.len() != n {
            return Err(dim_err("lu rhs", n, b.len()));
        }
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Matrix> {
        let n = self.lu.rows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            inv.set_col(j, &self.solve(&e)?);
        }
        Ok(inv)
    }
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    Lu::new(a)?.inverse()
}

fn check_triangular_system(t: &Matrix, b: &[f64]) -> Result<usize> {
    let n = t.ensure_square()?;
    if b.len() != n {
        return Err(dim_err("triangular rhs", n, b.len()));
    }
    Ok(n)
}

fn pivot(d: f64) -> Result<f64> {
    if d == 0.0 || !d.is_finite() {
        Err(Error::Singular)
    } else {
        Ok(d)
    }
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = check_triangular_system(l, b)?;
    let mut x = b.to_vec();
    for i in 0..n {
        let row = l.row(i);
        let s: f64 = row[..i].iter().zip(&x[..i]).map(|(a, y)| a * y).sum();
        x[i] = (x[i] - s) / pivot(row[i])?;
    }
    Ok(x)
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_transposed(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = check_triangular_system(l, b)?;
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        x[i] /= pivot(l[(i, i)])?;
        let xi = x[i];
        let row = l.row(i);
        for j in 0..i {
            x[j] -= row[j] * xi;
        }
    }
    Ok(x)
}

/// Solves `U x = b` for upper-triangular `U`.
pub fn solve_upper(u: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = check_triangular_system(u, b)?;
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let row = u.row(i);
        let s: f64 = row[i + 1..].iter().zip(&x[i + 1..]).map(|(a, y)| a * y).sum();
        x[i] = (x[i] - s) / pivot(row[i])?;
    }
    Ok(x)
}

/// Solves `Uᵀ x = b` for upper-triangular `U`.
pub fn solve_upper_transposed(u: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = check_triangular_system(u, b)?;
    let mut x = b.to_vec();
    for i in 0..n {
        x[i] /= pivot(u[(i, i)])?;
        let xi = x[i];
        let row = u.row(i);
        for j in (i + 1)..n {
            x[j] -= row[j] * xi;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::sub;

    fn spd() -> Matrix {
        Matrix::from_rows(&[vec![4.0, 1.0, 0.5], vec![1.0, 3.0, 0.2], vec![0.5, 0.2, 2.0]]).unwrap()
    }

    #[test]
    fn cholesky_round_trip() {
        let a = spd();
        let c = Cholesky::new(&a).unwrap();
        let l = c.factor();
        assert!((&l.matmul_tr(l) - &a).max_abs() < 1e-14);
        let b = [1.0, -2.0, 0.5];
        let x = c.solve(&b).unwrap();
        assert!(sub(&a.matvec(&x), &b).iter().all(|r| r.abs() < 1e-14));
        assert!(Cholesky::new(&Matrix::from_diag(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn lu_inverse_and_det() {
        let a = Matrix::from_rows(&[vec![0.0, 2.0], vec![1.0, 1.0]]).unwrap();
        let lu = Lu::new(&a).unwrap();
        assert!((lu.det() + 2.0).abs() < 1e-15);
        let inv = lu.inverse().unwrap();
        assert!((&a.matmul(&inv) - &Matrix::identity(2)).max_abs() < 1e-15);
        assert_eq!(Lu::new(&Matrix::zeros(2, 2)).unwrap_err(), Error::Singular);
    }

    #[test]
    fn triangular_solves() {
        let u = Matrix::from_rows(&[vec![2.0, 1.0, -1.0], vec![0.0, 3.0, 0.5], vec![0.0, 0.0, 4.0]]).unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = solve_upper(&u, &b).unwrap();
        assert!(sub(&u.matvec(&x), &b).iter().all(|r| r.abs() < 1e-15));
        let x = solve_upper_transposed(&u, &b).unwrap();
        assert!(sub(&u.tr_matvec(&x), &b).iter().all(|r| r.abs() < 1e-15));
        let l = u.transpose();
        let x = solve_lower(&l, &b).unwrap();
        assert!(sub(&l.matvec(&x), &b).iter().all(|r| r.abs() < 1e-15));
        let x = solve_lower_transposed(&l, &b).unwrap();
        assert!(sub(&l.tr_matvec(&x), &b).iter().all(|r| r.abs() < 1e-15));
    }
}
