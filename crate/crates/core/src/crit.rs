//! Fitting criterion `c(P; v, h) = hᵀPh + vᵀP⁻¹v`, its gradient, its optimum,
//! and damping of Hessian-vector products.

use crate::error::{dim_err, Error, Result};
use crate::matkit::{solve_lower, sym_pow, Cholesky};
use crate::matrix::{all_finite, dot, Matrix};
use crate::rng::SeededRng;

/// Probe vector `v` and its Hessian-vector product `h = Hv + ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct HvpPair {
    pub v: Vec<f64>,
    pub h: Vec<f64>,
}

impl HvpPair {
    pub fn new(v: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        if v.len() != h.len() {
            return Err(dim_err("pair", v.len(), h.len()));
        }
        if v.is_empty() {
            return Err(Error::Empty);
        }
        if !all_finite(&v) || !all_finite(&h) {
            return Err(Error::NonFinite("pair"));
        }
        Ok(Self { v, h })
    }

    /// `(v, Hv)`.
    pub fn exact(hess: &Matrix, v: Vec<f64>) -> Result<Self> {
        if hess.cols() != v.len() {
            return Err(dim_err("hessian width", hess.cols(), v.len()));
        }
        let h = hess.matvec(&v);
        Self::new(v, h)
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub(crate) fn check_dim(&self, n: usize) -> Result<()> {
        if self.dim() != n {
            return Err(dim_err("pair length", n, self.dim()));
        }
        Ok(())
    }
}

/// Noise injected into `h`: `ν ∼ N(0, η²I + eps²·diag(h²))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DampingConfig {
    pub eta: f64,
    pub machine_eps: f64,
}

impl Default for DampingConfig {
    fn default() -> Self {
        Self { eta: 1e-9, machine_eps: f64::EPSILON / 2.0 }
    }
}

impl DampingConfig {
    pub const NONE: DampingConfig = DampingConfig { eta: 0.0, machine_eps: 0.0 };

    pub fn new(eta: f64, machine_eps: f64) -> Result<Self> {
        if !(eta >= 0.0) || !(machine_eps >= 0.0) {
            return Err(Error::InvalidArgument("damping scales must be nonnegative".into()));
        }
        Ok(Self { eta, machine_eps })
    }
}

fn check_p(p: &Matrix, n: usize) -> Result<Cholesky> {
    if p.rows() != n || p.cols() != n {
        return Err(dim_err("preconditioner size", n, p.rows()));
    }
    Cholesky::new(p).map_err(|_| Error::Singular)
}

/// `P⁻¹v` by Cholesky solve.
pub(crate) fn precond_inv_v(p: &Matrix, pair: &HvpPair) -> Result<Vec<f64>> {
    check_p(p, pair.dim())?.solve(&pair.v)
}

pub fn criterion_eval(p: &Matrix, pair: &HvpPair) -> Result<f64> {
    let chol = check_p(p, pair.dim())?;
    let pinv_v = chol.solve(&pair.v)?;
    Ok(dot(&pair.h, &p.matvec(&pair.h)) + dot(&pair.v, &pinv_v))
}

/// `hhᵀ − P⁻¹vvᵀP⁻¹`.
pub fn criterion_gradient(p: &Matrix, pair: &HvpPair) -> Result<Matrix> {
    let w = precond_inv_v(p, pair)?;
    let mut g = Matrix::outer(&pair.h, &pair.h);
    g.add_outer(-1.0, &w, &w);
    Ok(g)
}

/// `tr(P(H² + Σε) + P⁻¹)`.
pub fn expected_criterion(p: &Matrix, hsq: &Matrix, noise_cov: &Matrix) -> Result<f64> {
    let n = p.ensure_square()?;
    let chol = check_p(p, n)?;
    let sum = hsq + noise_cov;
    let lin = p.matmul(&sum).trace();
    // tr(P⁻¹) = ‖L⁻¹‖_F².
    let mut inv_tr = 0.0;
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|x| *x = 0.0);
        e[j] = 1.0;
        let col = solve_lower(chol.factor(), &e)?;
        inv_tr += dot(&col, &col);
    }
    Ok(lin + inv_tr)
}

/// `(H² + Σε)^{-1/2}`.
pub fn optimal_preconditioner(hsq: &Matrix, noise_cov: &Matrix) -> Result<Matrix> {
    sym_pow(&(hsq + noise_cov), -0.5)
}

pub fn damp_hvp(pair: &HvpPair, cfg: &DampingConfig, rng: &mut SeededRng) -> HvpPair {
    if cfg.eta == 0.0 && cfg.machine_eps == 0.0 {
        return pair.clone();
    }
    let eta2 = cfg.eta * cfg.eta;
    let eps2 = cfg.machine_eps * cfg.machine_eps;
    let h = pair
        .h
        .iter()
        .map(|&hi| hi + (eta2 + eps2 * hi * hi).sqrt() * rng.normal())
        .collect();
    HvpPair { v: pair.v.clone(), h }
}

/// `‖P·H′ − I‖_F / √n`.
pub fn fitting_error(p: &Matrix, target_root: &Matrix) -> f64 {
    let n = p.rows();
    let mut r = p.matmul(target_root);
    r.add_diag(-1.0);
    r.frobenius_norm() / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Matrix {
        Matrix::from_diag(&[x])
    }

    fn pair(v: f64, h: f64) -> HvpPair {
        HvpPair::new(vec![v], vec![h]).unwrap()
    }

    #[test]
    fn eval_examples() {
        let e1 = HvpPair::new(vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(criterion_eval(&Matrix::identity(2), &e1).unwrap(), 2.0);
        assert_eq!(criterion_eval(&scalar(0.5), &pair(1.0, 4.0)).unwrap(), 10.0);
        assert_eq!(criterion_eval(&scalar(0.0), &pair(1.0, 4.0)), Err(Error::Singular));
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(criterion_gradient(&scalar(1.0), &pair(1.0, 4.0)).unwrap()[(0, 0)], 15.0);
        let p = HvpPair::new(vec![0.3, -1.0], vec![0.3, -1.0]).unwrap();
        assert_eq!(criterion_gradient(&Matrix::identity(2), &p).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn expected_examples() {
        let z = Matrix::zeros(3, 3);
        let i = Matrix::identity(3);
        assert!((expected_criterion(&i, &i, &z).unwrap() - 6.0).abs() < 1e-15);
        assert_eq!(expected_criterion(&scalar(1.0), &scalar(4.0), &scalar(0.0)).unwrap(), 5.0);
    }

    #[test]
    fn optimum_examples() {
        let z = Matrix::zeros(2, 2);
        let p = optimal_preconditioner(&Matrix::identity(2), &z).unwrap();
        assert!((&p - &Matrix::identity(2)).max_abs() < 1e-15);
        let p = optimal_preconditioner(&Matrix::from_diag(&[4.0, 0.0]), &Matrix::from_diag(&[0.0, 1.0])).unwrap();
        assert!((&p - &Matrix::from_diag(&[0.5, 1.0])).max_abs() < 1e-15);
        assert_eq!(
            optimal_preconditioner(&Matrix::from_diag(&[1.0, 0.0]), &z),
            Err(Error::NotPositiveDefinite)
        );
    }

    #[test]
    fn damping_off_is_identity() {
        let p = pair(1.0, 2.0);
        assert_eq!(damp_hvp(&p, &DampingConfig::NONE, &mut SeededRng::new(0)), p);
    }

    #[test]
    fn pair_validation() {
        assert!(HvpPair::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(HvpPair::new(vec![f64::NAN], vec![1.0]).is_err());
    }
}
