//! Fitters for a factor `Q` with `P = QᵀQ`: SGD on GL(n), SGD on the upper
//! triangular group, and the inverse-free rules that never solve with `Q`.

use crate::crit::HvpPair;
use crate::error::{Error, Result};
use crate::matkit::{
    inverse, procrustes_rotate, qr_upper_approx, qr_upper_factor, solve_upper_transposed,
    RotationOrder,
};
use crate::matrix::{dot, Matrix};
use crate::rng::SeededRng;

/// Running step-size normalizer `L = max(βL + (1 − β)ℓ, ℓ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzTracker {
    value: f64,
    beta: f64,
}

impl LipschitzTracker {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("beta must lie in [0, 1], got {beta}")));
        }
        Ok(Self { value: 0.0, beta })
    }

    pub fn with_value(beta: f64, value: f64) -> Result<Self> {
        let mut t = Self::new(beta)?;
        t.value = value.max(0.0);
        Ok(t)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn update(&mut self, ell: f64) -> Result<f64> {
        if !(ell > 0.0) || !ell.is_finite() {
            return Err(Error::InvalidSample(ell));
        }
        self.value = (self.beta * self.value + (1.0 - self.beta) * ell).max(ell);
        Ok(self.value)
    }

    /// `μ/L` after folding in `ℓ`, or `None` for an uninformative zero sample.
    pub(crate) fn rate(&mut self, mu: f64, ell: f64) -> Result<Option<f64>> {
        if ell == 0.0 {
            return Ok(None);
        }
        Ok(Some(mu / self.update(ell)?))
    }
}

fn check_rate(mu: f64) -> Result<()> {
    if !mu.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite step size {mu}")));
    }
    Ok(())
}

/// Dense `Q ∈ GL(n)` with its inverse kept current by rank-one corrections.
#[derive(Clone, Debug)]
pub struct DenseQState {
    q: Matrix,
    qinv: Matrix,
    tracker: LipschitzTracker,
    since_check: usize,
    reinversions: usize,
}

/// Steps between checks of `‖Q·Q⁻¹ − I‖_F`.
pub const DRIFT_CHECK_EVERY: usize = 64;
const WOODBURY_FLOOR: f64 = 1e-12;

impl DenseQState {
    pub fn new(q: Matrix, beta: f64) -> Result<Self> {
        q.ensure_square()?;
        let qinv = inverse(&q)?;
        Ok(Self { q, qinv, tracker: LipschitzTracker::new(beta)?, since_check: 0, reinversions: 0 })
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn qinv(&self) -> &Matrix {
        &self.qinv
    }

    pub fn tracker(&self) -> &LipschitzTracker {
        &self.tracker
    }

    /// How often the drift guard or a tiny denominator forced an LU inverse.
    pub fn reinversions(&self) -> usize {
        self.reinversions
    }

    pub fn preconditioner(&self) -> Matrix {
        self.q.tr_matmul(&self.q)
    }

    pub fn set_q(&mut self, q: Matrix) -> Result<()> {
        self.qinv = inverse(&q)?;
        self.q = q;
        Ok(())
    }

    fn sample(&self, pair: &HvpPair) -> Result<(Vec<f64>, Vec<f64>)> {
        pair.check_dim(self.q.rows())?;
        Ok((self.q.matvec(&pair.h), self.qinv.tr_matvec(&pair.v)))
    }

    pub fn step(&mut self, pair: &HvpPair, mu: f64) -> Result<()> {
        check_rate(mu)?;
        let (a, b) = self.sample(pair)?;
        match self.tracker.rate(mu, dot(&a, &a) + dot(&b, &b))? {
            Some(c) => self.apply(&a, &b, c),
            None => Ok(()),
        }
    }

    /// One update with a fixed `μ/L`, bypassing the tracker.
    pub fn step_with_rate(&mut self, pair: &HvpPair, rate: f64) -> Result<()> {
        check_rate(rate)?;
        let (a, b) = self.sample(pair)?;
        self.apply(&a, &b, rate)
    }

    fn apply(&mut self, a: &[f64], b: &[f64], c: f64) -> Result<()> {
        let n = self.q.rows();
        // Q ← (I − c·aaᵀ + c·bbᵀ)Q
        let qta = self.q.tr_matvec(a);
        let qtb = self.q.tr_matvec(b);
        self.q.add_outer(-c, a, &qta);
        self.q.add_outer(c, b, &qtb);

        // Q⁻¹ ← Q⁻¹M⁻¹, peeling the b term first (its denominator is ≥ 1).
        let bb = dot(b, b);
        let db = 1.0 + c * bb;
        let mut fallback = db.abs() < WOODBURY_FLOOR;
        if !fallback {
            let qib = self.qinv.matvec(b);
            self.qinv.add_outer(-c / db, &qib, b);
            let ba = dot(b, a);
            let y: Vec<f64> = a.iter().zip(b).map(|(ai, bi)| ai - c * ba / db * bi).collect();
            let da = 1.0 - c * dot(a, &y);
            if da.abs() < WOODBURY_FLOOR {
                fallback = true;
            } else {
                let qia = self.qinv.matvec(a);
                self.qinv.add_outer(c / da, &qia, &y);
            }
        }
        self.since_check += 1;
        if !fallback && self.since_check >= DRIFT_CHECK_EVERY {
            self.since_check = 0;
            let mut r = self.q.matmul(&self.qinv);
            r.add_diag(-1.0);
            fallback = !(r.frobenius_norm() <= 1e-6 * (n as f64).sqrt());
        }
        if fallback {
            self.qinv = inverse(&self.q)?;
            self.reinversions += 1;
            self.since_check = 0;
        }
        if !self.q.is_finite() {
            return Err(Error::NonFinite("gl factor"));
        }
        Ok(())
    }
}

/// How `[M]_R` is formed in the triangular fitter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TriangularMode {
    /// Householder QR of `M`.
    ExactQr,
    /// `I + triu(Δ) + triu(Δ, 1)`.
    Approx,
    /// `I + triu(Δ)`, the large-step variant.
    TriuOnly,
}

/// Upper-triangular `Q` with nonzero diagonal.
#[derive(Clone, Debug)]
pub struct TriangularQState {
    q: Matrix,
    tracker: LipschitzTracker,
    mode: TriangularMode,
}

/// `A·B` for upper-triangular `A` and `B`.
fn upper_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let ar = a.row(i);
        let orow = out.row_mut(i);
        for k in i..n {
            let aik = ar[k];
            if aik == 0.0 {
                continue;
            }
            for (o, bkj) in orow[k..].iter_mut().zip(&b.row(k)[k..]) {
                *o += aik * bkj;
            }
        }
    }
    out
}

impl TriangularQState {
    pub fn new(q: Matrix, beta: f64, mode: TriangularMode) -> Result<Self> {
        q.ensure_square()?;
        if !q.is_upper_triangular() {
            return Err(Error::InvalidArgument("triangular fitter needs an upper-triangular Q".into()));
        }
        if q.diag().contains(&0.0) {
            return Err(Error::Singular);
        }
        Ok(Self { q, tracker: LipschitzTracker::new(beta)?, mode })
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn mode(&self) -> TriangularMode {
        self.mode
    }

    pub fn tracker(&self) -> &LipschitzTracker {
        &self.tracker
    }

    pub fn preconditioner(&self) -> Matrix {
        self.q.tr_matmul(&self.q)
    }

    fn sample(&self, pair: &HvpPair) -> Result<(Vec<f64>, Vec<f64>)> {
        pair.check_dim(self.q.rows())?;
        let a = self.q.matvec(&pair.h);
        let b = solve_upper_transposed(&self.q, &pair.v)?;
        Ok((a, b))
    }

    pub fn step(&mut self, pair: &HvpPair, mu: f64) -> Result<()> {
        check_rate(mu)?;
        let (a, b) = self.sample(pair)?;
        match self.tracker.rate(mu, dot(&a, &a) + dot(&b, &b))? {
            Some(c) => self.apply(&a, &b, c),
            None => Ok(()),
        }
    }

    pub fn step_with_rate(&mut self, pair: &HvpPair, rate: f64) -> Result<()> {
        check_rate(rate)?;
        let (a, b) = self.sample(pair)?;
        self.apply(&a, &b, rate)
    }

    fn apply(&mut self, a: &[f64], b: &[f64], c: f64) -> Result<()> {
        let n = self.q.rows();
        let mut delta = Matrix::zeros(n, n);
        delta.add_outer(-c, a, a);
        delta.add_outer(c, b, b);
        let r = match self.mode {
            TriangularMode::ExactQr => {
                delta.add_diag(1.0);
                qr_upper_factor(&delta)?
            }
            TriangularMode::Approx => qr_upper_approx(&delta, false),
            TriangularMode::TriuOnly => qr_upper_approx(&delta, true),
        };
        let q = upper_matmul(&r, &self.q);
        if q.diag().contains(&0.0) {
            return Err(Error::Singular);
        }
        if !q.is_finite() {
            return Err(Error::NonFinite("triangular factor"));
        }
        self.q = q;
        Ok(())
    }
}

/// The inverse-free update rules. Each names its local coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InverseFreeRule {
    /// `Q − c·Q(PhhᵀP − vvᵀ)`, coordinate `dQ = Q𝓔Q`.
    Qeq,
    /// `Q − c·(PhhᵀP − vvᵀ)Q`, coordinate `dQ = Q^½𝓔Q^{3/2}`, with a
    /// Procrustes rotation and symmetrization every `rotate_every` steps.
    Quad1 { rotate_every: usize, order: RotationOrder },
    /// `M·Q·M` with `M = I − (c/2)(PhhᵀP − vvᵀ)`.
    Quad2,
    /// `Q − c·Q(PhhᵀP − vvᵀ)QᵀQ`.
    Qep,
    /// The quad1 rule run on `P` itself. The state holds `P`, not `Q`.
    Quad3 { rotate_every: usize, order: RotationOrder },
}

pub const DEFAULT_ROTATE_EVERY: usize = 32;

impl InverseFreeRule {
    pub fn quad1() -> Self {
        Self::Quad1 { rotate_every: DEFAULT_ROTATE_EVERY, order: RotationOrder::Third }
    }

    pub fn quad3() -> Self {
        Self::Quad3 { rotate_every: DEFAULT_ROTATE_EVERY, order: RotationOrder::Third }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Qeq => "qeq",
            Self::Quad1 { .. } => "quad1",
            Self::Quad2 => "quad2",
            Self::Qep => "qep",
            Self::Quad3 { .. } => "quad3",
        }
    }
}

#[derive(Clone, Debug)]
pub struct InverseFreeState {
    q: Matrix,
    tracker: LipschitzTracker,
    rule: InverseFreeRule,
    steps: usize,
}

/// Per-sample vectors of one inverse-free update.
struct Sample {
    /// `Ph` (or `Q·Ph` for qep).
    x: Vec<f64>,
    /// `v` (or `Qv` for qep).
    y: Vec<f64>,
}

impl InverseFreeState {
    pub fn new(q: Matrix, beta: f64, rule: InverseFreeRule) -> Result<Self> {
        q.ensure_square()?;
        if let InverseFreeRule::Quad1 { rotate_every: 0, .. } | InverseFreeRule::Quad3 { rotate_every: 0, .. } = rule {
            return Err(Error::InvalidArgument("rotate_every must be positive".into()));
        }
        Ok(Self { q, tracker: LipschitzTracker::new(beta)?, rule, steps: 0 })
    }

    /// The stored factor (`P` itself for quad3).
    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn rule(&self) -> InverseFreeRule {
        self.rule
    }

    pub fn tracker(&self) -> &LipschitzTracker {
        &self.tracker
    }

    pub fn preconditioner(&self) -> Matrix {
        match self.rule {
            InverseFreeRule::Quad3 { .. } => self.q.clone(),
            _ => self.q.tr_matmul(&self.q),
        }
    }

    /// `Pg` without forming `P`.
    pub fn apply_preconditioner(&self, g: &[f64]) -> Vec<f64> {
        match self.rule {
            InverseFreeRule::Quad3 { .. } => self.q.matvec(g),
            _ => self.q.tr_matvec(&self.q.matvec(g)),
        }
    }

    fn sample(&self, pair: &HvpPair) -> Result<Sample> {
        pair.check_dim(self.q.rows())?;
        let q = &self.q;
        let ph = match self.rule {
            InverseFreeRule::Quad3 { .. } => q.matvec(&pair.h),
            _ => q.tr_matvec(&q.matvec(&pair.h)),
        };
        Ok(match self.rule {
            InverseFreeRule::Qep => Sample { x: q.matvec(&ph), y: q.matvec(&pair.v) },
            _ => Sample { x: ph, y: pair.v.clone() },
        })
    }

    pub fn step(&mut self, pair: &HvpPair, mu: f64) -> Result<()> {
        check_rate(mu)?;
        let s = self.sample(pair)?;
        match self.tracker.rate(mu, dot(&s.x, &s.x) + dot(&s.y, &s.y))? {
            Some(c) => self.apply(&s, c),
            None => {
                self.steps += 1;
                Ok(())
            }
        }
    }

    pub fn step_with_rate(&mut self, pair: &HvpPair, rate: f64) -> Result<()> {
        check_rate(rate)?;
        let s = self.sample(pair)?;
        self.apply(&s, rate)
    }

    fn apply(&mut self, s: &Sample, c: f64) -> Result<()> {
        let (x, y) = (&s.x, &s.y);
        let q = &mut self.q;
        match self.rule {
            InverseFreeRule::Qeq => {
                let qx = q.matvec(x);
                let qy = q.matvec(y);
                q.add_outer(-c, &qx, x);
                q.add_outer(c, &qy, y);
            }
            InverseFreeRule::Quad1 { .. } | InverseFreeRule::Quad3 { .. } => {
                let qtx = q.tr_matvec(x);
                let qty = q.tr_matvec(y);
                q.add_outer(-c, x, &qtx);
                q.add_outer(c, y, &qty);
            }
            InverseFreeRule::Quad2 => {
                let h = 0.5 * c;
                let qtx = q.tr_matvec(x);
                let qty = q.tr_matvec(y);
                q.add_outer(-h, x, &qtx);
                q.add_outer(h, y, &qty);
                let qx = q.matvec(x);
                let qy = q.matvec(y);
                q.add_outer(-h, &qx, x);
                q.add_outer(h, &qy, y);
            }
            InverseFreeRule::Qep => {
                // x = Q·Ph, y = Qv: Q ← Q − c[x(Qᵀx)ᵀ − y(Qᵀy)ᵀ]
                let qtx = q.tr_matvec(x);
                let qty = q.tr_matvec(y);
                q.add_outer(-c, x, &qtx);
                q.add_outer(c, y, &qty);
            }
        }
        self.steps += 1;
        if let InverseFreeRule::Quad1 { rotate_every, order } | InverseFreeRule::Quad3 { rotate_every, order } =
            self.rule
        {
            if self.steps.is_multiple_of(rotate_every) {
                *q = procrustes_rotate(q, order)?.symmetrized();
            }
        }
        if !q.is_finite() {
            return Err(Error::NonFinite("inverse-free factor"));
        }
        Ok(())
    }
}

pub const DEFAULT_PROBE_TRIALS: usize = 256;

/// Smallest sampled value of `tr(𝓔²(QH²Qᵀ + 3Q⁻ᵀQ⁻¹))` over random symmetric
/// directions with `tr(𝓔²) = 1`.
pub fn strong_convexity_probe(q: &Matrix, h: &Matrix, trials: usize, rng: &mut SeededRng) -> Result<f64> {
    let n = q.ensure_square()?;
    if h.rows() != n || h.cols() != n {
        return Err(crate::error::dim_err("hessian size", n, h.rows()));
    }
    let qi = inverse(q)?;
    let qh = q.matmul(h);
    let mut a = qh.matmul_tr(&qh);
    a.axpy_mut(3.0, &qi.tr_matmul(&qi));
    let mut best = f64::INFINITY;
    for _ in 0..trials.max(1) {
        let e = rng.normal_matrix(n, n).symmetrized();
        let norm = e.frobenius_norm();
        if norm == 0.0 {
            continue;
        }
        let e = e.scaled(1.0 / norm);
        // tr(𝓔²A) = Σ (𝓔²)_ij A_ji
        let e2 = e.matmul(&e);
        let val: f64 = e2.as_slice().iter().zip(a.transpose().as_slice()).map(|(x, y)| x * y).sum();
        best = best.min(val);
    }
    Ok(best)
}
