//! Preconditioned SGD, `θ ← θ − μ_θ·P·g`, with `P` fitted online from
//! Hessian-vector products or from gradient or momentum whitening.

mod problem;
mod trd;

pub use problem::{default_fd_delta, fd_hvp, Problem, Quadratic};
pub use trd::{Tensor3, TrdProblem};

use crate::crit::{damp_hvp, DampingConfig, HvpPair};
use crate::error::{Error, Result};
use crate::matrix::{all_finite, dot};
use crate::precond::{PrecondSpec, Preconditioner};
use crate::rng::SeededRng;

/// What the preconditioner is fitted on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMode {
    /// `(v, Hv)` pairs, exact or by finite differences.
    Hvp,
    /// `(v, g)`: `P → (E[ggᵀ])^{-1/2}`.
    WhitenGrad,
    /// `(v, m)` with `m` an EMA of gradients; θ moves along `Pm`.
    WhitenMomentum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub mode: FitMode,
    pub theta_lr: f64,
    pub precond_lr: f64,
    pub momentum_beta: f64,
    /// `None` picks [`default_fd_delta`] at each step.
    pub fd_delta: Option<f64>,
    pub update_prob: f64,
    /// Discount of the Lipschitz trackers.
    pub tracker_beta: f64,
    pub damping: DampingConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            mode: FitMode::Hvp,
            theta_lr: 0.5,
            precond_lr: 0.1,
            momentum_beta: 0.9,
            fd_delta: None,
            update_prob: 1.0,
            tracker_beta: 0.9,
            damping: DampingConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, x: f64| Err(Error::InvalidArgument(format!("{what} out of range: {x}")));
        if !(self.theta_lr > 0.0) || !self.theta_lr.is_finite() {
            return bad("theta_lr", self.theta_lr);
        }
        if !(self.precond_lr > 0.0) || !self.precond_lr.is_finite() {
            return bad("precond_lr", self.precond_lr);
        }
        if !(0.0..1.0).contains(&self.momentum_beta) {
            return bad("momentum_beta", self.momentum_beta);
        }
        if !(0.0..=1.0).contains(&self.update_prob) {
            return bad("update_prob", self.update_prob);
        }
        if !(0.0..=1.0).contains(&self.tracker_beta) {
            return bad("tracker_beta", self.tracker_beta);
        }
        if let Some(d) = self.fd_delta {
            if !(d > 0.0) {
                return bad("fd_delta", d);
            }
        }
        Ok(())
    }
}

/// `√((1+β)/(1−β))`: how much smaller μ_θ should be when stepping along
/// whitened momentum instead of whitened gradients.
pub fn momentum_lr_divisor(beta: f64) -> f64 {
    ((1.0 + beta) / (1.0 - beta)).sqrt()
}

/// `(h₁ᵀh₁/n)^{-1/4}`, the scale of `Q₀ = sI`. A zero `h₁` gives `1` and a
/// raised flag.
pub fn init_scale(h1: &[f64]) -> (f64, bool) {
    let energy = dot(h1, h1) / h1.len().max(1) as f64;
    if !(energy > 0.0) || !energy.is_finite() {
        return (1.0, true);
    }
    (energy.powf(-0.25), false)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Loss at θ before the step.
    pub loss: f64,
    pub precond_updated: bool,
    /// Set on the step that initialized `P` from a zero vector.
    pub init_degenerate: bool,
}

#[derive(Clone, Debug)]
pub struct Psgd {
    cfg: OptimizerConfig,
    spec: PrecondSpec,
    precond: Option<Preconditioner>,
    momentum: Vec<f64>,
    rng: SeededRng,
    steps: usize,
}

impl Psgd {
    /// `P` is built lazily from the first pair with [`init_scale`].
    pub fn new(spec: PrecondSpec, cfg: OptimizerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, spec, precond: None, momentum: Vec::new(), rng: SeededRng::new(seed), steps: 0 })
    }

    /// Starts from an explicit preconditioner.
    pub fn with_preconditioner(precond: Preconditioner, cfg: OptimizerConfig, seed: u64) -> Result<Self> {
        let mut out = Self::new(PrecondSpec::Gl, cfg, seed)?;
        out.precond = Some(precond);
        Ok(out)
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn preconditioner(&self) -> Option<&Preconditioner> {
        self.precond.as_ref()
    }

    /// Current momentum (empty outside whiten-momentum mode).
    pub fn momentum(&self) -> &[f64] {
        &self.momentum
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn fit_pair<P: Problem + ?Sized>(&mut self, problem: &P, theta: &[f64], g: &[f64]) -> Result<HvpPair> {
        let n = theta.len();
        let v = self.rng.normal_vec(n);
        match self.cfg.mode {
            FitMode::Hvp => {
                let h = match problem.hvp(theta, &v) {
                    Some(h) => h,
                    None => {
                        let delta = self.cfg.fd_delta.unwrap_or_else(|| default_fd_delta(theta));
                        fd_hvp(problem, theta, &v, delta)?
                    }
                };
                let pair = HvpPair::new(v, h)?;
                Ok(damp_hvp(&pair, &self.cfg.damping, &mut self.rng))
            }
            FitMode::WhitenGrad => HvpPair::new(v, g.to_vec()),
            FitMode::WhitenMomentum => HvpPair::new(v, self.momentum.clone()),
        }
    }

    pub fn step<P: Problem + ?Sized>(&mut self, problem: &P, theta: &mut [f64]) -> Result<StepStats> {
        let n = problem.dim();
        if theta.len() != n {
            return Err(crate::error::dim_err("theta length", n, theta.len()));
        }
        let (loss, g) = problem.loss_grad(theta);
        if !loss.is_finite() || !all_finite(&g) {
            return Err(Error::Diverged(self.steps));
        }
        if self.cfg.mode == FitMode::WhitenMomentum {
            let b = self.cfg.momentum_beta;
            if self.momentum.is_empty() {
                self.momentum = vec![0.0; n];
            }
            self.momentum.iter_mut().zip(&g).for_each(|(m, g)| *m = b * *m + (1.0 - b) * g);
        }
        let mut stats = StepStats { loss, precond_updated: false, init_degenerate: false };
        let wants_update = self.precond.is_none() || self.rng.uniform() < self.cfg.update_prob;
        if wants_update {
            let pair = self.fit_pair(problem, theta, &g)?;
            if self.precond.is_none() {
                let (scale, degenerate) = init_scale(&pair.h);
                stats.init_degenerate = degenerate;
                self.precond = Some(Preconditioner::new(&self.spec, n, scale, self.cfg.tracker_beta, &mut self.rng)?);
            }
            if let Some(p) = self.precond.as_mut() {
                p.update(&pair, self.cfg.precond_lr)?;
            }
            stats.precond_updated = true;
        }
        let dir = match self.cfg.mode {
            FitMode::WhitenMomentum => &self.momentum,
            _ => &g,
        };
        let pg = self.precond.as_ref().map_or_else(|| Ok(dir.clone()), |p| p.apply(dir))?;
        let lr = self.cfg.theta_lr;
        theta.iter_mut().zip(&pg).for_each(|(t, d)| *t -= lr * d);
        self.steps += 1;
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    #[test]
    fn init_scale_examples() {
        assert_eq!(init_scale(&[2.0, 0.0, 0.0, 0.0]), (1.0, false));
        assert_eq!(init_scale(&[4.0, 4.0, -4.0, 4.0]), (0.5, false));
        assert_eq!(init_scale(&[16.0]), (0.25, false));
        assert_eq!(init_scale(&[1.0, -1.0, 1.0]), (1.0, false));
        assert_eq!(init_scale(&[0.0, 0.0]), (1.0, true));
    }

    #[test]
    fn fd_hvp_is_exact_on_quadratics() {
        let h = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let q = Quadratic::new(h.clone()).unwrap();
        let v = [0.3, -1.2];
        for delta in [1e-3, 1.0, 7.0] {
            let got = fd_hvp(&q, &[5.0, -2.0], &v, delta).unwrap();
            let want = h.matvec(&v);
            assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        assert_eq!(fd_hvp(&q, &[1.0, 1.0], &[0.0, 0.0], 1e-5).unwrap(), vec![0.0, 0.0]);
        assert!(fd_hvp(&q, &[1.0, 1.0], &v, 0.0).is_err());
    }

    #[test]
    fn frozen_identity_is_plain_sgd() {
        let h = Matrix::from_diag(&[1.0, 4.0]);
        let q = Quadratic::new(h.clone()).unwrap();
        let cfg = OptimizerConfig { update_prob: 0.0, theta_lr: 0.1, ..Default::default() };
        let p = Preconditioner::new(&PrecondSpec::Gl, 2, 1.0, 0.9, &mut SeededRng::new(0)).unwrap();
        let mut opt = Psgd::with_preconditioner(p, cfg, 1).unwrap();
        let mut theta = vec![1.0, 1.0];
        let mut plain = theta.clone();
        for _ in 0..20 {
            let st = opt.step(&q, &mut theta).unwrap();
            assert!(!st.precond_updated);
            let g = h.matvec(&plain);
            plain.iter_mut().zip(&g).for_each(|(t, g)| *t -= 0.1 * g);
            assert_eq!(theta, plain);
        }
    }

    #[test]
    fn nonfinite_loss_is_divergence() {
        let q = Quadratic::new(Matrix::identity(1)).unwrap();
        let mut opt = Psgd::new(PrecondSpec::Gl, OptimizerConfig::default(), 0).unwrap();
        assert_eq!(opt.step(&q, &mut [f64::INFINITY]).unwrap_err(), Error::Diverged(0));
    }

    #[test]
    fn config_validation() {
        let bad = OptimizerConfig { momentum_beta: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig { theta_lr: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(OptimizerConfig::default().validate().is_ok());
        assert!((momentum_lr_divisor(0.9) - 19f64.sqrt()).abs() < 1e-15);
    }
}
