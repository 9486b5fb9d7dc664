mod common;

use std::cell::RefCell;

use common::random_spd;
use hessfit_core::crit::{fitting_error, DampingConfig};
use hessfit_core::lie_fit::TriangularMode;
use hessfit_core::matrix::{norm_inf, Matrix};
use hessfit_core::precond::PrecondSpec;
use hessfit_core::psgd::{fd_hvp, FitMode, OptimizerConfig, Problem, Psgd, Quadratic, Tensor3, TrdProblem};
use hessfit_core::rng::SeededRng;
use proptest::prelude::*;

fn small_trd(seed: u64) -> (TrdProblem, Vec<f64>) {
    let mut rng = SeededRng::new(seed);
    let dims = (3, 4, 2);
    let data = rng.normal_vec(24);
    let p = TrdProblem::new(Tensor3::new(dims, data).unwrap(), 2).unwrap();
    let theta = rng.normal_vec(p.dim());
    (p, theta)
}

/// Exact directional derivative of the TRD gradient, written out term by
/// term from the loss.
fn trd_hvp_oracle(p: &TrdProblem, theta: &[f64], dir: &[f64]) -> Vec<f64> {
    let (ni, nj, nk) = p.tensor().dims();
    let r = p.rank();
    let at = |t: &[f64], block: usize, q: usize, idx: usize| {
        let off = [0, r * ni, r * (ni + nj)][block];
        t[off + q + r * idx]
    };
    let mut out = vec![0.0; theta.len()];
    for i in 0..ni {
        for j in 0..nj {
            for k in 0..nk {
                let mut res = p.tensor().get(i, j, k);
                let mut dres = 0.0;
                for q in 0..r {
                    let (x, y, z) = (at(theta, 0, q, i), at(theta, 1, q, j), at(theta, 2, q, k));
                    let (dx, dy, dz) = (at(dir, 0, q, i), at(dir, 1, q, j), at(dir, 2, q, k));
                    res -= x * y * z;
                    dres -= dx * y * z + x * dy * z + x * y * dz;
                }
                for q in 0..r {
                    let (x, y, z) = (at(theta, 0, q, i), at(theta, 1, q, j), at(theta, 2, q, k));
                    let (dx, dy, dz) = (at(dir, 0, q, i), at(dir, 1, q, j), at(dir, 2, q, k));
                    out[q + r * i] += -2.0 * (dres * y * z + res * (dy * z + y * dz));
                    out[r * ni + q + r * j] += -2.0 * (dres * x * z + res * (dx * z + x * dz));
                    out[r * (ni + nj) + q + r * k] += -2.0 * (dres * x * y + res * (dx * y + x * dy));
                }
            }
        }
    }
    out
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trd_grad_matches_finite_differences(seed in any::<u64>()) {
        let (p, theta) = small_trd(seed);
        let g = p.grad(&theta);
        let fd: Vec<f64> = (0..theta.len()).map(|i| {
            let d = 1e-6 * (1.0 + theta[i].abs());
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[i] += d;
            b[i] -= d;
            (p.loss(&a) - p.loss(&b)) / (2.0 * d)
        }).collect();
        prop_assert!(rel_err(&g, &fd) <= 1e-5);
    }

    #[test]
    fn fd_hvp_matches_analytic_on_trd(seed in any::<u64>()) {
        let (p, theta) = small_trd(seed);
        let v = SeededRng::new(seed ^ 1).normal_vec(theta.len());
        let delta = 1e-5 * (1.0 + norm_inf(&theta));
        let fd = fd_hvp(&p, &theta, &v, delta).unwrap();
        prop_assert!(rel_err(&fd, &trd_hvp_oracle(&p, &theta, &v)) <= 1e-5);
    }
}

#[test]
fn quadratic_hvp_mode_locks_on_then_descends() {
    let mut rng = SeededRng::new(5);
    let hess = random_spd(8, 100.0, &mut rng);
    let q = Quadratic::new(hess.clone()).unwrap();
    let cfg = OptimizerConfig { theta_lr: 0.3, precond_lr: 0.5, damping: DampingConfig::NONE, ..Default::default() };
    let mut opt = Psgd::new(PrecondSpec::Gl, cfg, 7).unwrap();
    let mut theta = rng.normal_vec(8);
    let mut locked = false;
    let mut prev = f64::INFINITY;
    for _ in 0..3000 {
        let st = opt.step(&q, &mut theta).unwrap();
        if locked {
            assert!(st.loss <= prev, "{} > {prev}", st.loss);
        }
        prev = st.loss;
        let p = opt.preconditioner().unwrap().dense_p();
        if !locked && fitting_error(&p, &hess) < 0.1 {
            locked = true;
        }
    }
    assert!(locked);
    assert!(prev < 1e-20);
}

/// Gradient is a fresh `H·w`, `w ∼ N(0, I)`, whatever θ is.
struct GradientStream {
    hess: Matrix,
    rng: RefCell<SeededRng>,
}

impl Problem for GradientStream {
    fn dim(&self) -> usize {
        self.hess.rows()
    }

    fn loss(&self, _theta: &[f64]) -> f64 {
        0.0
    }

    fn grad(&self, _theta: &[f64]) -> Vec<f64> {
        let w = self.rng.borrow_mut().normal_vec(self.hess.rows());
        self.hess.matvec(&w)
    }
}

#[test]
fn gradient_whitening_fits_inverse_root_covariance() {
    let mut rng = SeededRng::new(8);
    let hess = random_spd(5, 10.0, &mut rng);
    let stream = GradientStream { hess: hess.clone(), rng: RefCell::new(SeededRng::new(9)) };
    for spec in [PrecondSpec::Gl, PrecondSpec::Triangular(TriangularMode::Approx)] {
        let cfg = OptimizerConfig { mode: FitMode::WhitenGrad, theta_lr: 1e-12, precond_lr: 0.005, ..Default::default() };
        let mut opt = Psgd::new(spec.clone(), cfg, 10).unwrap();
        let mut theta = vec![0.0; 5];
        for _ in 0..60_000 {
            opt.step(&stream, &mut theta).unwrap();
        }
        // E[ggᵀ] = H², so P should approach H⁻¹.
        let err = fitting_error(&opt.preconditioner().unwrap().dense_p(), &hess);
        assert!(err < 0.1, "{spec:?} {err}");
    }
}

#[test]
fn momentum_variance_scales_by_beta_factor() {
    let mut rng = SeededRng::new(11);
    let hess = random_spd(4, 5.0, &mut rng);
    let cov = hess.matmul(&hess);
    let stream = GradientStream { hess, rng: RefCell::new(SeededRng::new(12)) };
    let beta = 0.9;
    let cfg = OptimizerConfig { mode: FitMode::WhitenMomentum, theta_lr: 1e-12, momentum_beta: beta, update_prob: 0.0, ..Default::default() };
    let mut opt = Psgd::new(PrecondSpec::Diagonal, cfg, 13).unwrap();
    let mut theta = vec![0.0; 4];
    let mut acc = Matrix::zeros(4, 4);
    let (burn, total) = (200, 200_000);
    for t in 0..total {
        opt.step(&stream, &mut theta).unwrap();
        if t >= burn {
            let m = opt.momentum();
            acc.add_outer(1.0, m, m);
        }
    }
    let est = acc.scaled((1.0 + beta) / (1.0 - beta) / (total - burn) as f64);
    let rel = (&est - &cov).frobenius_norm() / cov.frobenius_norm();
    assert!(rel < 0.1, "{rel}");
}
