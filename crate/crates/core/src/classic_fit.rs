//! Fitters that work on `P` directly: Euclidean SGD, running closed form,
//! the Riccati solution, Newton-Schulz, SGD on the SPD manifold, and BFGS.

use crate::crit::{precond_inv_v, HvpPair};
use crate::error::{dim_err, Error, Result};
use crate::matkit::{newton_schulz_step, sym_pow, sym_sqrt};
use crate::matrix::{dot, Matrix};

fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {mu}")));
    }
    Ok(())
}

/// `P − μ(hhᵀ − P⁻¹vvᵀP⁻¹)`.
pub fn euclid_sgd_step(p: &Matrix, pair: &HvpPair, mu: f64) -> Result<Matrix> {
    check_mu(mu)?;
    let w = precond_inv_v(p, pair)?;
    let mut out = p.clone();
    out.add_outer(-mu, &pair.h, &pair.h);
    out.add_outer(mu, &w, &w);
    Ok(out)
}

/// Running estimate of `E[hhᵀ]` whose inverse square root is the
/// preconditioner.
#[derive(Clone, Debug)]
pub struct RunningClosedFormState {
    pinv_sq: Matrix,
    t: usize,
    ema_clip: f64,
}

pub const DEFAULT_EMA_CLIP: f64 = 0.999;

impl RunningClosedFormState {
    /// Starts from `P₀`, i.e. accumulator `P₀⁻²`.
    pub fn new(p0: &Matrix, ema_clip: f64) -> Result<Self> {
        let pinv_sq = sym_pow(&p0.matmul(p0).symmetrized(), -1.0)?;
        Self::from_accumulator(pinv_sq, ema_clip)
    }

    pub fn from_accumulator(pinv_sq: Matrix, ema_clip: f64) -> Result<Self> {
        pinv_sq.ensure_square()?;
        if !(ema_clip > 0.0 && ema_clip <= 1.0) {
            return Err(Error::InvalidArgument(format!("ema_clip must lie in (0, 1], got {ema_clip}")));
        }
        Ok(Self { pinv_sq, t: 0, ema_clip })
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn accumulator(&self) -> &Matrix {
        &self.pinv_sq
    }

    /// Folds in one response vector. Cheap; computing `P` is separate.
    pub fn update(&mut self, h: &[f64]) -> Result<()> {
        if h.len() != self.pinv_sq.rows() {
            return Err(dim_err("response length", self.pinv_sq.rows(), h.len()));
        }
        let gamma = ((self.t + 1) as f64 / (self.t + 2) as f64).min(self.ema_clip);
        self.pinv_sq.scale_mut(gamma);
        self.pinv_sq.add_outer(1.0 - gamma, h, h);
        self.t += 1;
        Ok(())
    }

    /// `P = (accumulator)^{-1/2}`.
    pub fn preconditioner(&self) -> Result<Matrix> {
        sym_pow(&self.pinv_sq, -0.5)
    }

    pub fn step(&mut self, h: &[f64]) -> Result<Matrix> {
        self.update(h)?;
        self.preconditioner()
    }
}

/// SPD solution of `P·A·P = B` with `A = Σhhᵀ`, `B = Σvvᵀ`.
pub fn riccati_solve(sum_vv: &Matrix, sum_hh: &Matrix) -> Result<Matrix> {
    let n = sum_hh.ensure_square()?;
    if sum_vv.rows() != n || sum_vv.cols() != n {
        return Err(dim_err("riccati operand", n, sum_vv.rows()));
    }
    let a_half = sym_pow(sum_hh, 0.5)?;
    let a_inv_half = sym_pow(sum_hh, -0.5)?;
    // B must be PD too, or the square root below is only PSD.
    sym_pow(sum_vv, 1.0)?;
    let mid = sym_sqrt(&a_half.matmul(sum_vv).matmul(&a_half).symmetrized())?;
    Ok(a_inv_half.matmul(&mid).matmul(&a_inv_half).symmetrized())
}

/// Relative growth of `‖P‖_F` that counts as divergence.
pub const NEWTON_DIVERGENCE: f64 = 1e6;

/// Iterates Newton-Schulz from `P₀`. Converges to `(Hsq)^{-1/2}` when the
/// eigenvalues of `H·P₀` lie in `(0, (√17 − 1)/2)`.
pub fn newton_fit(hsq: &Matrix, p0: &Matrix, iters: usize) -> Result<Matrix> {
    let limit = NEWTON_DIVERGENCE * p0.frobenius_norm();
    let mut p = p0.clone();
    for t in 0..iters {
        p = newton_schulz_step(&p, hsq)?;
        let norm = p.frobenius_norm();
        if !(norm <= limit) {
            return Err(Error::Diverged(t + 1));
        }
    }
    Ok(p)
}

/// `P + P𝓔 + 𝓔P` with `𝓔 = −μ(Phhᵀ + hhᵀP − vvᵀP⁻¹ − P⁻¹vvᵀ)`.
pub fn spd_manifold_step(p: &Matrix, pair: &HvpPair, mu: f64) -> Result<Matrix> {
    check_mu(mu)?;
    let w = precond_inv_v(p, pair)?;
    let ph = p.matvec(&pair.h);
    let mut e = Matrix::zeros(p.rows(), p.cols());
    e.add_outer(-mu, &ph, &pair.h);
    e.add_outer(-mu, &pair.h, &ph);
    e.add_outer(mu, &pair.v, &w);
    e.add_outer(mu, &w, &pair.v);
    let pe = p.matmul(&e);
    let mut out = p.clone();
    out += &pe;
    out += &pe.transpose();
    Ok(out)
}

/// `(I − ρvhᵀ)P(I − ρhvᵀ) + ρvvᵀ`, `ρ = 1/vᵀh`.
pub fn bfgs_step(p: &Matrix, pair: &HvpPair) -> Result<Matrix> {
    let n = p.ensure_square()?;
    pair.check_dim(n)?;
    let (v, h) = (&pair.v, &pair.h);
    let curv = dot(v, h);
    if !(curv > 0.0) {
        return Err(Error::Curvature(curv));
    }
    let rho = 1.0 / curv;
    // Expanded: P − ρ(v(Ph)ᵀ + (Ph)vᵀ) + (ρ²·hᵀPh + ρ)vvᵀ.
    let ph = p.matvec(h);
    let hph = dot(h, &ph);
    let mut out = p.clone();
    out.add_outer(-rho, v, &ph);
    out.add_outer(-rho, &ph, v);
    out.add_outer(rho * rho * hph + rho, v, v);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: f64) -> Matrix {
        Matrix::from_diag(&[x])
    }

    fn pair(v: f64, h: f64) -> HvpPair {
        HvpPair::new(vec![v], vec![h]).unwrap()
    }

    #[test]
    fn euclid_scalar() {
        let p = euclid_sgd_step(&s(1.0), &pair(1.0, 4.0), 0.01).unwrap();
        assert!((p[(0, 0)] - 0.85).abs() < 1e-15);
        let p = euclid_sgd_step(&s(0.25), &pair(1.0, 4.0), 0.5).unwrap();
        assert_eq!(p[(0, 0)], 0.25);
    }

    #[test]
    fn running_closed_form_examples() {
        let mut st = RunningClosedFormState::new(&s(1.0), DEFAULT_EMA_CLIP).unwrap();
        let p = st.step(&[2.0]).unwrap();
        assert!((p[(0, 0)] - 2.5f64.powf(-0.5)).abs() < 1e-15);

        let mut st = RunningClosedFormState::new(&Matrix::identity(3), DEFAULT_EMA_CLIP).unwrap();
        let p = st.step(&[1.0, 0.0, 0.0]).unwrap();
        let expect = Matrix::from_diag(&[1.0, 2f64.sqrt(), 2f64.sqrt()]);
        assert!((&p - &expect).max_abs() < 1e-14);

        assert_eq!(
            RunningClosedFormState::new(&Matrix::zeros(2, 2), 0.9).unwrap_err(),
            Error::NotPositiveDefinite
        );
        let st = RunningClosedFormState::from_accumulator(Matrix::zeros(2, 2), 0.9).unwrap();
        assert_eq!(st.preconditioner().unwrap_err(), Error::NotPositiveDefinite);
    }

    #[test]
    fn ema_clip_caps_memory() {
        let mut st = RunningClosedFormState::new(&s(1.0), 0.5).unwrap();
        for _ in 0..10 {
            st.update(&[2.0]).unwrap();
        }
        // γ = 0.5 from the first step: accumulator → 4 geometrically.
        assert!((st.accumulator()[(0, 0)] - 4.0).abs() <= 3.0 * 0.5f64.powi(10) + 1e-15);
    }

    #[test]
    fn riccati_examples() {
        let a = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let p = riccati_solve(&a, &a).unwrap();
        assert!((&p - &Matrix::identity(2)).max_abs() < 1e-14);
        assert!((riccati_solve(&s(1.0), &s(4.0)).unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
        let p = riccati_solve(&Matrix::from_diag(&[9.0, 2.0]), &Matrix::from_diag(&[1.0, 8.0])).unwrap();
        assert!((&p - &Matrix::from_diag(&[3.0, 0.5])).max_abs() < 1e-14);
        assert!(riccati_solve(&s(1.0), &s(-1.0)).is_err());
    }

    #[test]
    fn newton_examples() {
        let i = Matrix::identity(3);
        assert_eq!(newton_fit(&i, &i, 7).unwrap(), i);
        // Escapes once |p| > √5; 1.7 falls back inside the region.
        assert!(matches!(newton_fit(&s(1.0), &s(2.5), 50), Err(Error::Diverged(_))));
        let p = newton_fit(&s(1.0), &s(1.7), 50).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spd_manifold_scalar() {
        let p = spd_manifold_step(&s(1.0), &pair(1.0, 2.0), 0.01).unwrap();
        assert!((p[(0, 0)] - 0.88).abs() < 1e-15);
        assert!((spd_manifold_step(&s(0.5), &pair(1.0, 2.0), 0.3).unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bfgs_examples() {
        let p = bfgs_step(&s(1.0), &pair(1.0, 4.0)).unwrap();
        assert_eq!(p[(0, 0)], 0.25);
        assert_eq!(bfgs_step(&s(0.25), &pair(1.0, 4.0)).unwrap()[(0, 0)], 0.25);
        assert!(matches!(bfgs_step(&s(1.0), &pair(-1.0, 1.0)), Err(Error::Curvature(_))));
    }

    #[test]
    fn bfgs_secant() {
        let p = Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let pr = HvpPair::new(vec![1.0, -0.5], vec![0.7, 0.2]).unwrap();
        let q = bfgs_step(&p, &pr).unwrap();
        let r = q.matvec(&pr.h);
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] + 0.5).abs() < 1e-14);
    }
}
