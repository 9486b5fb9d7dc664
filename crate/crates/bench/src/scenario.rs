//! Scenario configs, the registry of `(scenario, method)` pairs, and the
//! runner that turns a config into a convergence curve.

use std::collections::BTreeMap;
use std::time::Instant;

use hessfit_core::classic_fit::{bfgs_step, euclid_sgd_step, spd_manifold_step, RunningClosedFormState};
use hessfit_core::crit::{damp_hvp, fitting_error, DampingConfig, HvpPair};
use hessfit_core::matkit::{newton_schulz_step, sym_condition, sym_sqrt};
use hessfit_core::precond::{PrecondSpec, Preconditioner};
use hessfit_core::psgd::{OptimizerConfig, Problem, Psgd, TrdProblem};
use hessfit_core::rng::SeededRng;
use hessfit_core::{Error, Matrix};

use crate::curve::{should_log, CurvePoint};
use crate::error::{BenchError, BenchResult};
use crate::hessians::{hilb64reg, hilbert3, tridiag, HessianKind, TimeVaryingHessian};
use crate::method::Method;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Fig1,
    Fig2a,
    Fig2b,
    Fig2c,
    Fig3,
    Fig4,
    Custom,
}

impl Scenario {
    pub const ALL: [Scenario; 7] =
        [Self::Fig1, Self::Fig2a, Self::Fig2b, Self::Fig2c, Self::Fig3, Self::Fig4, Self::Custom];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fig1 => "fig1",
            Self::Fig2a => "fig2a",
            Self::Fig2b => "fig2b",
            Self::Fig2c => "fig2c",
            Self::Fig3 => "fig3",
            Self::Fig4 => "fig4",
            Self::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }

    /// Methods with a registered config.
    pub fn methods(self) -> &'static [Method] {
        use Method::*;
        match self {
            Self::Fig1 => &[Euclid, ClosedForm, Spd, Gl, Newton],
            Self::Fig2a | Self::Fig2b | Self::Fig2c => &[Gl, Tri, ClosedForm, Bfgs],
            Self::Fig3 => &[Gl, Qeq, Quad1, Quad2, Qep],
            Self::Fig4 => &[Gd, Lra, Kron, Quad1],
            Self::Custom => &Method::ALL,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub method: Method,
    pub n: usize,
    pub iters: usize,
    pub seed: u64,
    /// Fitting step size (θ step size for gd).
    pub mu: f64,
    /// Lipschitz tracker discount.
    pub beta: f64,
    pub sigma_eps: f64,
    /// Record elapsed time per point. Off by default so output is reproducible.
    pub timing: bool,
    pub extra: BTreeMap<String, String>,
}

/// Time-varying scenario size.
const TIME_VARYING_N: usize = 50;
/// Hessian-fitting scenarios start from `P₀ = I`, Newton from `0.02·I`.
const NEWTON_P0: f64 = 0.02;
/// Condition numbers are costly; fig3 logs every 100th iteration.
const KAPPA_EVERY: usize = 100;

impl ScenarioConfig {
    /// Registered defaults for a pair.
    pub fn registered(scenario: Scenario, method: Method) -> BenchResult<Self> {
        if !scenario.methods().contains(&method) {
            return Err(BenchError::Unsupported { scenario: scenario.name().into(), method: method.name().into() });
        }
        use Method::*;
        let mut cfg = Self {
            scenario,
            method,
            n: 0,
            iters: 1,
            seed: 0,
            mu: 1.0,
            beta: 0.0,
            sigma_eps: 0.0,
            timing: false,
            extra: BTreeMap::new(),
        };
        match scenario {
            Scenario::Fig1 => {
                cfg.n = 3;
                cfg.iters = if method == Newton { 30 } else { 20_000 };
                cfg.mu = match method {
                    Euclid => 0.1,
                    Spd => 0.001,
                    _ => 1.0,
                };
                if method == ClosedForm {
                    cfg.extra.insert("ema_clip".into(), "1".into());
                }
            }
            Scenario::Fig2a | Scenario::Fig2b | Scenario::Fig2c => {
                cfg.n = 50;
                cfg.iters = match scenario {
                    Scenario::Fig2a => 400_000,
                    Scenario::Fig2b => 50_000,
                    _ => 5_000,
                };
                if scenario == Scenario::Fig2b {
                    cfg.sigma_eps = 0.01;
                    cfg.mu = 0.1;
                }
            }
            Scenario::Fig3 => {
                cfg.n = 64;
                cfg.iters = 100_000;
                cfg.beta = 1.0;
                cfg.mu = if matches!(method, Gl | Qep) { 1.0 } else { 0.1 };
            }
            Scenario::Fig4 => {
                cfg.n = TRD_RANK * (TRD_DIMS.0 + TRD_DIMS.1 + TRD_DIMS.2);
                cfg.iters = TRD_ITERS;
                cfg.beta = 0.9;
                cfg.mu = if method == Gd { TRD_GD_GRID[2] } else { TRD_THETA_LR };
            }
            Scenario::Custom => {
                cfg.n = 50;
                cfg.iters = 1_000;
                cfg.mu = if method == Gd { 0.1 } else { 1.0 };
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> BenchResult<()> {
        if self.iters == 0 {
            return Err(BenchError::Config("iters must be at least 1".into()));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(BenchError::Config(format!("mu must be positive, got {}", self.mu)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(BenchError::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.sigma_eps >= 0.0) {
            return Err(BenchError::Config(format!("sigma_eps must be nonnegative, got {}", self.sigma_eps)));
        }
        Ok(())
    }

    fn extra_f64(&self, key: &str, default: f64) -> BenchResult<f64> {
        match self.extra.get(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| BenchError::Config(format!("`{key}` is not a number: {s}"))),
        }
    }

    pub fn hessian_kind(&self) -> BenchResult<HessianKind> {
        match self.scenario {
            Scenario::Fig1 => Ok(HessianKind::Hilbert3),
            Scenario::Fig2a | Scenario::Fig2b => Ok(HessianKind::Tridiag50),
            Scenario::Fig2c => Ok(HessianKind::TimeVarying),
            Scenario::Fig3 => Ok(HessianKind::Hilb64Reg),
            Scenario::Fig4 => Err(BenchError::Config("fig4 has no Hessian stream".into())),
            Scenario::Custom => match self.extra.get("hessian") {
                None => Ok(HessianKind::Tridiag50),
                Some(s) => HessianKind::parse(s).ok_or_else(|| BenchError::Config(format!("unknown hessian `{s}`"))),
            },
        }
    }
}

/// One row of `hessfit list`.
pub fn registry() -> Vec<ScenarioConfig> {
    Scenario::ALL
        .into_iter()
        .filter(|s| *s != Scenario::Custom)
        .flat_map(|s| s.methods().iter().map(move |&m| ScenarioConfig::registered(s, m).expect("registered pair")))
        .collect()
}

/// A curve plus its divergence verdict: a fitter failure, a non-finite
/// metric, or a final metric above the starting one.
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub points: Vec<CurvePoint>,
    pub diverged: bool,
}

impl Run {
    pub fn last_metric(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.metric)
    }

    /// First logged iteration with metric at or below `target`.
    pub fn first_below(&self, target: f64) -> Option<usize> {
        self.points.iter().find(|p| !p.diverged && p.metric <= target).map(|p| p.iter)
    }

    /// Metric at the last logged iteration not after `iter`.
    pub fn metric_at(&self, iter: usize) -> Option<f64> {
        self.points.iter().take_while(|p| p.iter <= iter).last().filter(|p| !p.diverged).map(|p| p.metric)
    }
}

struct Recorder {
    start: Option<Instant>,
    points: Vec<CurvePoint>,
}

impl Recorder {
    fn new(timing: bool) -> Self {
        Self { start: timing.then(Instant::now), points: Vec::new() }
    }

    fn wall(&self) -> u64 {
        self.start.map_or(0, |s| s.elapsed().as_nanos() as u64)
    }

    /// Returns false when the metric is no longer finite and the run must stop.
    fn push(&mut self, iter: usize, metric: f64) -> bool {
        let diverged = !metric.is_finite();
        self.points.push(CurvePoint { iter, metric, wall_ns: self.wall(), diverged });
        !diverged
    }

    fn fail(&mut self, iter: usize) {
        self.points.push(CurvePoint { iter, metric: f64::INFINITY, wall_ns: self.wall(), diverged: true });
    }

    fn finish(self) -> Run {
        // Ending worse than the start also counts.
        let diverged = match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.diverged || b.metric > a.metric,
            _ => false,
        };
        Run { points: self.points, diverged }
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> BenchResult<Run> {
    cfg.validate()?;
    if !cfg.scenario.methods().contains(&cfg.method) {
        return Err(BenchError::Unsupported { scenario: cfg.scenario.name().into(), method: cfg.method.name().into() });
    }
    match cfg.scenario {
        Scenario::Fig4 => run_trd(cfg),
        _ => run_fitting(cfg),
    }
}

/// Source of `(v, h)` pairs and of the matching target.
#[allow(clippy::large_enum_variant)]
enum Stream {
    Fixed { hess: Matrix, sigma: f64, target: Matrix },
    TimeVarying(TimeVaryingHessian),
    /// `h = H^{1/2}w`: gradient whitening with covariance `H`.
    Whiten { cov: Matrix, root: Matrix },
}

impl Stream {
    fn new(cfg: &ScenarioConfig, rng: &mut SeededRng) -> BenchResult<Self> {
        let kind = cfg.hessian_kind()?;
        if let (Scenario::Custom, Some(d)) = (cfg.scenario, kind.fixed_dim()) {
            if cfg.n != d {
                return Err(BenchError::Config(format!("{} is {d}×{d}, got n = {}", kind.name(), cfg.n)));
            }
        }
        let fixed = |hess: Matrix| -> BenchResult<Stream> {
            let mut sum = hess.matmul(&hess);
            sum.add_diag(cfg.sigma_eps * cfg.sigma_eps);
            let target = sym_sqrt(&sum.symmetrized())?;
            Ok(Stream::Fixed { hess, sigma: cfg.sigma_eps, target })
        };
        match (cfg.scenario, kind) {
            (Scenario::Fig3, _) => {
                let cov = hilb64reg();
                let root = sym_sqrt(&cov)?;
                Ok(Stream::Whiten { cov, root })
            }
            (_, HessianKind::Hilbert3) => fixed(hilbert3()),
            (Scenario::Custom, HessianKind::Tridiag50) => fixed(tridiag(cfg.n.max(1))),
            (_, HessianKind::Tridiag50) => fixed(tridiag(50)),
            (_, HessianKind::Hilb64Reg) => fixed(hilb64reg()),
            (_, HessianKind::TimeVarying) => {
                let n = if cfg.scenario == Scenario::Custom { cfg.n.max(1) } else { TIME_VARYING_N };
                Ok(Stream::TimeVarying(TimeVaryingHessian::new(n, rng.fork())))
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            Self::Fixed { hess, .. } => hess.rows(),
            Self::TimeVarying(tv) => tv.current().rows(),
            Self::Whiten { cov, .. } => cov.rows(),
        }
    }

    fn pair(&self, rng: &mut SeededRng) -> hessfit_core::Result<HvpPair> {
        let n = self.dim();
        let v = rng.normal_vec(n);
        match self {
            Self::Fixed { hess, sigma, .. } => {
                let clean = HvpPair::exact(hess, v)?;
                let noise = DampingConfig { eta: *sigma, machine_eps: 0.0 };
                Ok(damp_hvp(&clean, &noise, rng))
            }
            Self::TimeVarying(tv) => HvpPair::exact(tv.current(), v),
            Self::Whiten { root, .. } => {
                let w = rng.normal_vec(n);
                HvpPair::new(v, root.matvec(&w))
            }
        }
    }

    /// `(H² + σ²I)` as seen by Newton-Schulz.
    fn hsq(&self) -> Matrix {
        match self {
            Self::Fixed { target, .. } => target.matmul(target),
            Self::TimeVarying(tv) => tv.current().matmul(tv.current()),
            Self::Whiten { cov, .. } => cov.clone(),
        }
    }

    fn metric(&self, p: &Matrix) -> hessfit_core::Result<f64> {
        match self {
            Self::Fixed { target, .. } => Ok(fitting_error(p, target)),
            Self::TimeVarying(tv) => Ok(fitting_error(p, tv.current())),
            Self::Whiten { cov, .. } => sym_condition(&p.matmul(cov).matmul(p).symmetrized()),
        }
    }

    fn advance(&mut self) {
        if let Self::TimeVarying(tv) = self {
            tv.advance();
        }
    }
}

#[allow(clippy::large_enum_variant)]
enum Fitter {
    Euclid { p: Matrix, mu: f64 },
    ClosedForm(RunningClosedFormState),
    Spd { p: Matrix, mu: f64 },
    Newton { p: Matrix },
    Bfgs { p: Matrix },
    Lie { precond: Preconditioner, mu: f64 },
}

/// Largest divisor of `n` not above `√n`, for a square-ish Kronecker split.
pub fn kron_split(n: usize) -> (usize, usize) {
    let m1 = (1..=n).take_while(|d| d * d <= n).filter(|d| n.is_multiple_of(*d)).last().unwrap_or(1);
    (m1, n / m1)
}

impl Fitter {
    fn new(cfg: &ScenarioConfig, n: usize, rng: &mut SeededRng) -> BenchResult<Self> {
        let p0 = cfg.extra_f64("p0", 1.0)?;
        let eye = Matrix::scaled_identity(n, p0);
        Ok(match cfg.method {
            Method::Euclid => Self::Euclid { p: eye, mu: cfg.mu },
            Method::ClosedForm => Self::ClosedForm(RunningClosedFormState::new(&eye, cfg.extra_f64("ema_clip", 0.999)?)?),
            Method::Spd => Self::Spd { p: eye, mu: cfg.mu },
            Method::Newton => Self::Newton { p: Matrix::scaled_identity(n, cfg.extra_f64("p0", NEWTON_P0)?) },
            Method::Bfgs => Self::Bfgs { p: eye },
            Method::Gd => return Err(BenchError::Unsupported { scenario: cfg.scenario.name().into(), method: "gd".into() }),
            m => {
                let mut spec = m.precond_spec().expect("lie method");
                if let PrecondSpec::Kron { mode, .. } = spec {
                    let (m1, m2) = kron_split(n);
                    spec = PrecondSpec::Kron { m1, m2, mode };
                }
                // P₀ = I means Q₀ = I; the direct-P rule takes P₀ itself.
                let precond = Preconditioner::new(&spec, n, p0.sqrt(), cfg.beta, rng)?;
                Self::Lie { precond, mu: cfg.mu }
            }
        })
    }

    fn fit(&mut self, pair: &HvpPair, hsq: &Matrix) -> hessfit_core::Result<()> {
        match self {
            Self::Euclid { p, mu } => *p = euclid_sgd_step(p, pair, *mu)?,
            Self::ClosedForm(st) => st.update(&pair.h)?,
            Self::Spd { p, mu } => *p = spd_manifold_step(p, pair, *mu)?.symmetrized(),
            Self::Newton { p } => *p = newton_schulz_step(p, hsq)?,
            Self::Bfgs { p } => match bfgs_step(p, pair) {
                Ok(next) => *p = next,
                // No curvature information in this pair: keep P.
                Err(Error::Curvature(_)) => {}
                Err(e) => return Err(e),
            },
            Self::Lie { precond, mu } => precond.update(pair, *mu)?,
        }
        Ok(())
    }

    fn preconditioner(&self) -> hessfit_core::Result<Matrix> {
        match self {
            Self::Euclid { p, .. } | Self::Spd { p, .. } | Self::Newton { p } | Self::Bfgs { p } => Ok(p.clone()),
            Self::ClosedForm(st) => st.preconditioner(),
            Self::Lie { precond, .. } => Ok(precond.dense_p()),
        }
    }
}

fn run_fitting(cfg: &ScenarioConfig) -> BenchResult<Run> {
    let mut rng = SeededRng::new(cfg.seed);
    let mut stream = Stream::new(cfg, &mut rng)?;
    let n = stream.dim();
    let mut fitter = Fitter::new(cfg, n, &mut rng)?;
    let mut rec = Recorder::new(cfg.timing);
    let logs = |t: usize| if cfg.scenario == Scenario::Fig3 { t.is_multiple_of(KAPPA_EVERY) } else { should_log(t) };
    let record = |rec: &mut Recorder, t: usize, f: &Fitter, s: &Stream| -> bool {
        match f.preconditioner().and_then(|p| s.metric(&p)) {
            Ok(m) => rec.push(t, m),
            Err(_) => {
                rec.fail(t);
                false
            }
        }
    };
    if !record(&mut rec, 0, &fitter, &stream) {
        return Ok(rec.finish());
    }
    let newton = cfg.method == Method::Newton;
    for t in 1..=cfg.iters {
        let step = if newton {
            fitter.fit(&HvpPair::new(vec![0.0; n], vec![0.0; n])?, &stream.hsq())
        } else {
            stream.pair(&mut rng).and_then(|pair| fitter.fit(&pair, &Matrix::zeros(0, 0)))
        };
        if step.is_err() {
            rec.fail(t);
            break;
        }
        if (logs(t) || t == cfg.iters) && !record(&mut rec, t, &fitter, &stream) {
            break;
        }
        stream.advance();
    }
    Ok(rec.finish())
}

/// Planted tensor rank decomposition instance.
pub const TRD_DIMS: (usize, usize, usize) = (20, 50, 100);
pub const TRD_RANK: usize = 10;
pub const TRD_ITERS: usize = 2_000;
/// θ step size for the PSGD variants.
pub const TRD_THETA_LR: f64 = 0.02;
/// Preconditioner step size for the PSGD variants.
pub const TRD_PRECOND_LR: f64 = 0.1;
/// Step sizes tried for plain gradient descent.
pub const TRD_GD_GRID: [f64; 5] = [1e-5, 3e-5, 1e-4, 3e-4, 1e-3];
/// Scale of the two small factors in the near-saddle start.
const TRD_SADDLE_SCALE: f64 = 1e-3;

/// Planted problem and its near-saddle start: `x = y = 10⁻³·noise`,
/// `z ∼ N(0, 1)`.
pub fn trd_instance(seed: u64) -> hessfit_core::Result<(TrdProblem, Vec<f64>)> {
    let mut rng = SeededRng::new(seed);
    let (problem, _) = TrdProblem::planted(TRD_DIMS, TRD_RANK, &mut rng)?;
    let (i, j, _) = TRD_DIMS;
    let small = TRD_RANK * (i + j);
    let theta = (0..problem.dim())
        .map(|k| if k < small { TRD_SADDLE_SCALE * rng.normal() } else { rng.normal() })
        .collect();
    Ok((problem, theta))
}

fn trd_spec(method: Method) -> PrecondSpec {
    let (i, j, k) = TRD_DIMS;
    let r = TRD_RANK;
    match method {
        Method::Kron => {
            let mode = hessfit_core::sparse_fit::KronMode::Qr;
            PrecondSpec::Blocks(
                [i, j, k].into_iter().map(|m| (r * m, PrecondSpec::Kron { m1: r, m2: m, mode })).collect(),
            )
        }
        m => m.precond_spec().expect("psgd method"),
    }
}

fn run_trd(cfg: &ScenarioConfig) -> BenchResult<Run> {
    let (problem, mut theta) = trd_instance(cfg.seed)?;
    let mut rec = Recorder::new(cfg.timing);
    let mut opt = match cfg.method {
        Method::Gd => None,
        m => {
            let ocfg = OptimizerConfig {
                theta_lr: cfg.mu,
                precond_lr: cfg.extra_f64("precond_lr", TRD_PRECOND_LR)?,
                tracker_beta: cfg.beta,
                ..OptimizerConfig::default()
            };
            Some(Psgd::new(trd_spec(m), ocfg, cfg.seed ^ 0x5eed)?)
        }
    };
    for t in 0..=cfg.iters {
        let loss = match &mut opt {
            Some(opt) if t < cfg.iters => match opt.step(&problem, &mut theta) {
                Ok(st) => st.loss,
                Err(_) => {
                    rec.fail(t);
                    break;
                }
            },
            None if t < cfg.iters => {
                let (loss, g) = problem.loss_grad(&theta);
                theta.iter_mut().zip(&g).for_each(|(x, g)| *x -= cfg.mu * g);
                loss
            }
            _ => problem.loss(&theta),
        };
        // Each step reports the loss before it moved θ.
        if (should_log(t) || t == cfg.iters) && !rec.push(t, loss) {
            break;
        }
    }
    Ok(rec.finish())
}
