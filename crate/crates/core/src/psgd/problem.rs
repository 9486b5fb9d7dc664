use crate::error::{dim_err, Error, Result};
use crate::matrix::{dot, norm_inf, Matrix};

/// A differentiable objective over `θ ∈ ℝⁿ`.
pub trait Problem {
    fn dim(&self) -> usize;

    fn loss(&self, theta: &[f64]) -> f64;

    fn grad(&self, theta: &[f64]) -> Vec<f64>;

    /// Both at once, for problems that share work between them.
    fn loss_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        (self.loss(theta), self.grad(theta))
    }

    /// Exact `∇²f(θ)·v`, when available.
    fn hvp(&self, _theta: &[f64], _v: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Central difference `(∇f(θ + δv) − ∇f(θ − δv)) / 2δ`.
pub fn fd_hvp<P: Problem + ?Sized>(problem: &P, theta: &[f64], v: &[f64], delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {delta}")));
    }
    if theta.len() != problem.dim() || v.len() != problem.dim() {
        return Err(dim_err("probe length", problem.dim(), v.len()));
    }
    let plus: Vec<f64> = theta.iter().zip(v).map(|(t, v)| t + delta * v).collect();
    let minus: Vec<f64> = theta.iter().zip(v).map(|(t, v)| t - delta * v).collect();
    let gp = problem.grad(&plus);
    let gm = problem.grad(&minus);
    Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * delta)).collect())
}

/// `1e-5·(1 + ‖θ‖∞)`.
pub fn default_fd_delta(theta: &[f64]) -> f64 {
    1e-5 * (1.0 + norm_inf(theta))
}

/// `f(θ) = ½θᵀHθ`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    hess: Matrix,
}

impl Quadratic {
    pub fn new(hess: Matrix) -> Result<Self> {
        let n = hess.ensure_square()?;
        if n == 0 {
            return Err(Error::Empty);
        }
        Ok(Self { hess })
    }

    pub fn hessian(&self) -> &Matrix {
        &self.hess
    }
}

impl Problem for Quadratic {
    fn dim(&self) -> usize {
        self.hess.rows()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        0.5 * dot(theta, &self.hess.matvec(theta))
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        self.hess.matvec(theta)
    }

    fn hvp(&self, _theta: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        Some(self.hess.matvec(v))
    }
}
