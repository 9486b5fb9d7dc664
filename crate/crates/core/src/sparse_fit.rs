//! Structured factors for large problems: diagonal, two-factor Kronecker, and
//! low-rank plus diagonal (LRA).

use crate::crit::HvpPair;
use crate::error::{dim_err, Error, Result};
use crate::lie_fit::LipschitzTracker;
use crate::matkit::{
    estimate_spectral_norm, qr_upper_factor, solve_upper_transposed, Lu, DEFAULT_SUBSPACE_DIM,
    DEFAULT_SUBSPACE_ITERS,
};
use crate::matrix::{norm2, Matrix};
use crate::rng::SeededRng;

/// Smallest magnitude a diagonal entry may take.
pub const DIAG_FLOOR: f64 = 1e-30;

fn clamp_nonzero(x: &mut [f64]) {
    for q in x.iter_mut() {
        if q.abs() < DIAG_FLOOR {
            *q = if q.is_sign_negative() { -DIAG_FLOOR } else { DIAG_FLOOR };
        }
    }
}

fn check_finite_rate(mu: f64) -> Result<()> {
    if !mu.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite step size {mu}")));
    }
    Ok(())
}

/// `Q = diag(q)`.
#[derive(Clone, Debug)]
pub struct DiagonalQ {
    q: Vec<f64>,
    tracker: LipschitzTracker,
}

impl DiagonalQ {
    pub fn new(mut q: Vec<f64>, beta: f64) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::Empty);
        }
        clamp_nonzero(&mut q);
        Ok(Self { q, tracker: LipschitzTracker::new(beta)? })
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn dense_q(&self) -> Matrix {
        Matrix::from_diag(&self.q)
    }

    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.q.len() {
            return Err(dim_err("gradient length", self.q.len(), g.len()));
        }
        Ok(self.q.iter().zip(g).map(|(q, g)| q * q * g).collect())
    }

    /// `(q·h)²` and `(v/q)²`.
    fn sample(&self, pair: &HvpPair) -> Result<(Vec<f64>, Vec<f64>)> {
        pair.check_dim(self.q.len())?;
        let a2 = self.q.iter().zip(&pair.h).map(|(q, h)| (q * h) * (q * h)).collect();
        let b2 = self.q.iter().zip(&pair.v).map(|(q, v)| (v / q) * (v / q)).collect();
        Ok((a2, b2))
    }

    pub fn step(&mut self, pair: &HvpPair, mu: f64) -> Result<()> {
        check_finite_rate(mu)?;
        let (a2, b2) = self.sample(pair)?;
        let ell = a2.iter().zip(&b2).map(|(a, b)| a + b).fold(0.0, f64::max);
        if let Some(c) = self.tracker.rate(mu, ell)? {
            self.apply_update(&a2, &b2, c);
        }
        Ok(())
    }

    pub fn step_with_rate(&mut self, pair: &HvpPair, rate: f64) -> Result<()> {
        check_finite_rate(rate)?;
        let (a2, b2) = self.sample(pair)?;
        self.apply_update(&a2, &b2, rate);
        Ok(())
    }

    fn apply_update(&mut self, a2: &[f64], b2: &[f64], c: f64) {
        for ((q, a), b) in self.q.iter_mut().zip(a2).zip(b2) {
            *q -= c * (a - b) * *q;
        }
        clamp_nonzero(&mut self.q);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KronMode {
    /// Triangular factors, `[·]_R` by QR, inverses by triangular solves.
    Qr,
    /// General factors updated as `Q − c·Q(·)` without any solve.
    InverseFree,
}

/// `Q = Q₂ ⊗ Q₁` acting on `vec(X)` with `X` of shape `m₁ × m₂` (column-major).
#[derive(Clone, Debug)]
pub struct KronQ {
    q1: Matrix,
    q2: Matrix,
    t1: LipschitzTracker,
    t2: LipschitzTracker,
    mode: KronMode,
    rng: SeededRng,
}

fn uvec(x: &[f64], m1: usize, m2: usize) -> Result<Matrix> {
    Matrix::from_col_major(m1, m2, x)
}

/// `Y` with `Qᵀ·Y = B` for upper-triangular `Q`, column by column.
fn solve_upper_transposed_cols(q: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(b.rows(), b.cols());
    for j in 0..b.cols() {
        out.set_col(j, &solve_upper_transposed(q, &b.col(j))?);
    }
    Ok(out)
}

impl KronQ {
    pub fn new(q1: Matrix, q2: Matrix, beta: f64, mode: KronMode, seed: u64) -> Result<Self> {
        q1.ensure_square()?;
        q2.ensure_square()?;
        if mode == KronMode::Qr && !(q1.is_upper_triangular() && q2.is_upper_triangular()) {
            return Err(Error::InvalidArgument("QR-mode Kronecker factors must be upper-triangular".into()));
        }
        Ok(Self {
            q1,
            q2,
            t1: LipschitzTracker::new(beta)?,
            t2: LipschitzTracker::new(beta)?,
            mode,
            rng: SeededRng::new(seed),
        })
    }

    pub fn factors(&self) -> (&Matrix, &Matrix) {
        (&self.q1, &self.q2)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.q1.rows(), self.q2.rows())
    }

    pub fn dim(&self) -> usize {
        self.q1.rows() * self.q2.rows()
    }

    pub fn mode(&self) -> KronMode {
        self.mode
    }

    pub fn dense_q(&self) -> Matrix {
        self.q2.kron(&self.q1)
    }

    /// `vec(P₁GP₂)` with `Pᵢ = QᵢᵀQᵢ`.
    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        let (m1, m2) = self.shape();
        if g.len() != m1 * m2 {
            return Err(dim_err("gradient length", m1 * m2, g.len()));
        }
        let g = uvec(g, m1, m2)?;
        let inner = self.q1.matmul(&g).matmul_tr(&self.q2);
        Ok(self.q1.tr_matmul(&inner).matmul(&self.q2).vec_col_major())
    }

    /// `(A, B)` of the current mode.
    fn sample(&self, pair: &HvpPair) -> Result<(Matrix, Matrix)> {
        let (m1, m2) = self.shape();
        pair.check_dim(m1 * m2)?;
        let x = uvec(&pair.h, m1, m2)?;
        let vt = uvec(&pair.v, m1, m2)?.transpose();
        match self.mode {
            KronMode::Qr => {
                let a = self.q1.matmul(&x).matmul_tr(&self.q2);
                // B = Q₂⁻ᵀ Vᵀ Q₁⁻¹, i.e. Bᵀ = Q₁⁻ᵀ (Q₂⁻ᵀ Vᵀ)ᵀ.
                let c = solve_upper_transposed_cols(&self.q2, &vt)?;
                let b = solve_upper_transposed_cols(&self.q1, &c.transpose())?.transpose();
                Ok((a, b))
            }
            KronMode::InverseFree => {
                let p1 = self.q1.tr_matmul(&self.q1);
                let p2 = self.q2.tr_matmul(&self.q2);
                Ok((p1.matmul(&x).matmul(&p2), vt))
            }
        }
    }

    /// The two symmetric error matrices and their normalizers.
    fn errors(a: &Matrix, b: &Matrix) -> [(Matrix, Matrix); 2] {
        let aat = a.matmul_tr(a);
        let btb = b.tr_matmul(b);
        let ata = a.tr_matmul(a);
        let bbt = b.matmul_tr(b);
        [(&aat - &btb, &aat + &btb), (&ata - &bbt, &ata + &bbt)]
    }

    fn norm(&mut self, m: &Matrix) -> Result<f64> {
        let k = DEFAULT_SUBSPACE_DIM.min(m.rows());
        estimate_spectral_norm(m, k, DEFAULT_SUBSPACE_ITERS, &mut self.rng)
    }

    pub fn step(&mut self, pair: &HvpPair, mu: f64) -> Result<()> {
        check_finite_rate(mu)?;
        let (a, b) = self.sample(pair)?;
        let [(e1, s1), (e2, s2)] = Self::errors(&a, &b);
        let l1 = self.norm(&s1)?;
        let l2 = self.norm(&s2)?;
        let c1 = self.t1.rate(mu, l1)?;
        let c2 = self.t2.rate(mu, l2)?;
        self.apply_update(&e1, &e2, c1.unwrap_or(0.0), c2.unwrap_or(0.0))
    }

    pub fn step_with_rate(&mut self, pair: &HvpPair, rate: f64) -> Result<()> {
        check_finite_rate(rate)?;
        let (a, b) = self.sample(pair)?;
        let [(e1, _), (e2, _)] = Self::errors(&a, &b);
        self.apply_update(&e1, &e2, rate, rate)
    }

    fn apply_update(&mut self, e1: &Matrix, e2: &Matrix, c1: f64, c2: f64) -> Result<()> {
        let (q1, q2) = match self.mode {
            KronMode::Qr => {
                let mut m1 = e1.scaled(-c1);
                m1.add_diag(1.0);
                let mut m2 = e2.scaled(-c2);
                m2.add_diag(1.0);
                (
                    qr_upper_factor(&m1)?.matmul(&self.q1).triu(0),
                    qr_upper_factor(&m2)?.matmul(&self.q2).triu(0),
                )
            }
            KronMode::InverseFree => {
                let q1 = &self.q1 - &self.q1.matmul(e1).scaled(c1);
                let q2 = &self.q2 - &self.q2.matmul(e2).scaled(c2);
                (q1, q2)
            }
        };
        if !q1.is_finite() || !q2.is_finite() {
            return Err(Error::NonFinite("kronecker factor"));
        }
        self.q1 = q1;
        self.q2 = q2;
        Ok(())
    }
}

/// `Q = (I + UVᵀ)·diag(d)`.
#[derive(Clone, Debug)]
pub struct LraQ {
    d: Vec<f64>,
    u: Matrix,
    v: Matrix,
    td: LipschitzTracker,
    tu: LipschitzTracker,
    tv: LipschitzTracker,
    update_u_next: bool,
    steps: usize,
    balance_every: usize,
    balance_mu: f64,
}

pub const DEFAULT_LRA_RANK: usize = 10;
pub const DEFAULT_BALANCE_EVERY: usize = 100;
pub const DEFAULT_BALANCE_MU: f64 = 0.25;
const GROUP_EXIT_FLOOR: f64 = 1e-12;

/// Per-sample quantities shared by the `d`, `U` and `V` updates.
struct LraSample {
    a: Vec<f64>,
    b: Vec<f64>,
    /// `h·(Ph)`
    hph: Vec<f64>,
    /// `v·(P⁻¹v)`
    vpv: Vec<f64>,
}

impl LraQ {
    pub fn new(d: Vec<f64>, u: Matrix, v: Matrix, beta: f64) -> Result<Self> {
        let n = d.len();
        if n == 0 {
            return Err(Error::Empty);
        }
        if u.rows() != n || v.rows() != n {
            return Err(dim_err("low-rank factor rows", n, u.rows().min(v.rows())));
        }
        if u.cols() != v.cols() {
            return Err(dim_err("low-rank factor rank", u.cols(), v.cols()));
        }
        let mut d = d;
        clamp_nonzero(&mut d);
        let st = Self {
            d,
            u,
            v,
            td: LipschitzTracker::new(beta)?,
            tu: LipschitzTracker::new(beta)?,
            tv: LipschitzTracker::new(beta)?,
            update_u_next: true,
            steps: 0,
            balance_every: DEFAULT_BALANCE_EVERY,
            balance_mu: DEFAULT_BALANCE_MU,
        };
        if st.rank() > 0 {
            st.capacitance()?;
        }
        Ok(st)
    }

    /// `d = scale·1` with `U`, `V` of rank `r` drawn at entry size `1e-3/√n`.
    pub fn with_rank(n: usize, rank: usize, scale: f64, beta: f64, rng: &mut SeededRng) -> Result<Self> {
        let s = 1e-3 / (n as f64).sqrt();
        let u = rng.normal_matrix(n, rank).scaled(s);
        let v = rng.normal_matrix(n, rank).scaled(s);
        Self::new(vec![scale; n], u, v, beta)
    }

    pub fn set_balance(&mut self, every: usize, mu: f64) -> Result<()> {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::InvalidArgument(format!("balance step must lie in (0, 1), got {mu}")));
        }
        self.balance_every = every;
        self.balance_mu = mu;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn dense_q(&self) -> Matrix {
        let n = self.dim();
        let mut m = self.u.matmul_tr(&self.v);
        m.add_diag(1.0);
        Matrix::from_fn(n, n, |i, j| m[(i, j)] * self.d[j])
    }

    /// `I + VᵀU` and its LU; fails when the factor leaves the group.
    fn capacitance(&self) -> Result<(Matrix, Lu)> {
        let mut c = self.v.tr_matmul(&self.u);
        c.add_diag(1.0);
        let lu = Lu::new(&c).map_err(|_| Error::GroupExit(0.0))?;
        let det = lu.det();
        if !(det.abs() >= GROUP_EXIT_FLOOR) {
            return Err(Error::GroupExit(det));
        }
        Ok((c, lu))
    }

    /// `x + L·(Rᵀx)` for `n×r` factors `L`, `R`.
    fn plus_low_rank(l: &Matrix, r: &Matrix, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        if l.cols() > 0 {
            let t = r.tr_matvec(x);
            for (yi, li) in y.iter_mut().zip(l.matvec(&t)) {
                *yi += li;
            }
        }
        y
    }

    fn q_mul(&self, x: &[f64]) -> Vec<f64> {
        let dx: Vec<f64> = self.d.iter().zip(x).map(|(d, x)| d * x).collect();
        Self::plus_low_rank(&self.u, &self.v, &dx)
    }

    fn qt_mul(&self, y: &[f64]) -> Vec<f64> {
        let z = Self::plus_low_rank(&self.v, &self.u, y);
        self.d.iter().zip(z).map(|(d, z)| d * z).collect()
    }

    /// `Pg = Qᵀ(Qg)`.
    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.dim() {
            return Err(dim_err("gradient length", self.dim(), g.len()));
        }
        Ok(self.qt_mul(&self.q_mul(g)))
    }

    fn sample(&self, pair: &HvpPair) -> Result<LraSample> {
        pair.check_dim(self.dim())?;
        let a = self.q_mul(&pair.h);
        let x: Vec<f64> = pair.v.iter().zip(&self.d).map(|(v, d)| v / d).collect();
        let (b, y) = if self.rank() == 0 {
            (x.clone(), x)
        } else {
            let (cap, lu) = self.capacitance()?;
            let lu_t = Lu::new(&cap.transpose()).map_err(|_| Error::GroupExit(0.0))?;
            // b = (I + VUᵀ)⁻¹x = x − V(I + UᵀV)⁻¹Uᵀx
            let s = lu_t.solve(&self.u.tr_matvec(&x))?;
            let b: Vec<f64> = x.iter().zip(self.v.matvec(&s)).map(|(x, vs)| x - vs).collect();
            // (I + UVᵀ)⁻¹b = b − U(I + VᵀU)⁻¹Vᵀb
            let w = lu.solve(&self.v.tr_matvec(&b))?;
            let y = b.iter().zip(self.u.matvec(&w)).map(|(b, uw)| b - uw).collect();
            (b, y)
        };
        let ph = self.qt_mul(&a);
        let hph = pair.h.iter().zip(&ph).map(|(h, p)| h * p).collect();
        let vpv = pair.v.iter().zip(&y).zip(&self.d).map(|((v, y), d)| v * y / d).collect();
        Ok(LraSample { a, b, hph, vpv })
    }

    fn max_abs(x: &[f64]) -> f64 {
        x.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖a‖‖WWᵀa‖ + ‖b‖‖WWᵀb‖`.
    fn low_rank_ell(w: &Matrix, a: &[f64], b: &[f64]) -> f64 {
        let proj = |x: &[f64]| norm2(&w.matvec(&w.tr_matvec(x)));
        norm2(a) * proj(a) + norm2(b) * proj(b)
    }

    pub fn step(&mut self, pair: &HvpPair, mu: f64) -> Result<()> {
        check_finite_rate(mu)?;
        let s = self.sample(pair)?;
        let ell_d = Self::max_abs(&s.hph) + Self::max_abs(&s.vpv);
        let cd = self.td.rate(mu, ell_d)?;
        let cw = if self.rank() == 0 {
            None
        } else if self.update_u_next {
            self.tu.rate(mu, Self::low_rank_ell(&self.v, &s.a, &s.b))?
        } else {
            self.tv.rate(mu, Self::low_rank_ell(&self.u, &s.a, &s.b))?
        };
        self.apply_update(&s, cd.unwrap_or(0.0), cw.unwrap_or(0.0))
    }

    pub fn step_with_rate(&mut self, pair: &HvpPair, rate: f64) -> Result<()> {
        check_finite_rate(rate)?;
        let s = self.sample(pair)?;
        self.apply_update(&s, rate, rate)
    }

    fn apply_update(&mut self, s: &LraSample, cd: f64, cw: f64) -> Result<()> {
        let (a, b) = (&s.a, &s.b);
        if self.rank() > 0 && cw != 0.0 {
            if self.update_u_next {
                // U ← U − c(aaᵀ − bbᵀ)·V(I + VᵀU)
                let mut w = self.v.matmul(&self.v.tr_matmul(&self.u));
                w += &self.v;
                let aw = w.tr_matvec(a);
                let bw = w.tr_matvec(b);
                self.u.add_outer(-cw, a, &aw);
                self.u.add_outer(cw, b, &bw);
            } else {
                // V ← V − c(I + VUᵀ)(aaᵀ − bbᵀ)U
                let mut g = Matrix::zeros(self.dim(), self.rank());
                g.add_outer(1.0, a, &self.u.tr_matvec(a));
                g.add_outer(-1.0, b, &self.u.tr_matvec(b));
                let vug = self.v.matmul(&self.u.tr_matmul(&g));
                g += &vug;
                self.v.axpy_mut(-cw, &g);
            }
        }
        if self.rank() > 0 {
            self.update_u_next = !self.update_u_next;
        }
        for ((d, hp), vp) in self.d.iter_mut().zip(&s.hph).zip(&s.vpv) {
            *d *= 1.0 - cd * (hp - vp);
        }
        clamp_nonzero(&mut self.d);
        self.steps += 1;
        if self.rank() > 0 && self.balance_every > 0 && self.steps.is_multiple_of(self.balance_every) {
            let (u, v) = lra_balance(&self.u, &self.v, self.balance_mu)?;
            self.u = u;
            self.v = v;
        }
        if !self.u.is_finite() || !self.v.is_finite() || !self.d.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("lra factor"));
        }
        if self.rank() > 0 {
            self.capacitance()?;
        }
        Ok(())
    }
}

/// One gradient step toward the balanced representation of `UVᵀ`.
pub fn lra_balance(u: &Matrix, v: &Matrix, mu: f64) -> Result<(Matrix, Matrix)> {
    if u.rows() != v.rows() || u.cols() != v.cols() {
        return Err(dim_err("balance factor shape", u.cols(), v.cols()));
    }
    let utu = u.tr_matmul(u);
    let vtv = v.tr_matmul(v);
    let scale = utu.trace() + vtv.trace();
    if scale == 0.0 {
        return Ok((u.clone(), v.clone()));
    }
    let e = (&utu - &vtv).scaled(1.0 / scale);
    let e2 = e.matmul(&e).scaled(0.5 * mu * mu);
    let mut left = &e2 - &e.scaled(mu);
    left.add_diag(1.0);
    let mut right = &e2 + &e.scaled(mu);
    right.add_diag(1.0);
    Ok((u.matmul(&left), v.matmul(&right)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(v: f64, h: f64) -> HvpPair {
        HvpPair::new(vec![v], vec![h]).unwrap()
    }

    #[test]
    fn diag_examples() {
        let mut st = DiagonalQ::new(vec![1.0], 0.0).unwrap();
        st.step(&pair(1.0, 4.0), 1.0).unwrap();
        assert!((st.q()[0] - 2.0 / 17.0).abs() <= 1e-15);
        let mut st = DiagonalQ::new(vec![1.0; 3], 0.0).unwrap();
        st.step(&HvpPair::new(vec![1.0, 2.0, -1.0], vec![1.0, 2.0, -1.0]).unwrap(), 1.0).unwrap();
        assert_eq!(st.q(), &[1.0; 3]);
        assert_eq!(st.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn diag_zero_guard() {
        let st = DiagonalQ::new(vec![0.0, -0.0, 2.0], 0.0).unwrap();
        assert_eq!(st.q(), &[DIAG_FLOOR, -DIAG_FLOOR, 2.0]);
    }

    #[test]
    fn kron_identity_fixed_point() {
        for mode in [KronMode::Qr, KronMode::InverseFree] {
            let mut st = KronQ::new(Matrix::identity(2), Matrix::identity(3), 0.0, mode, 1).unwrap();
            let v: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
            st.step(&HvpPair::new(v.clone(), v).unwrap(), 1.0).unwrap();
            assert!((&st.dense_q() - &Matrix::identity(6)).max_abs() < 1e-14, "{mode:?}");
        }
    }

    #[test]
    fn balance_examples() {
        let (u, v) = lra_balance(&Matrix::from_diag(&[1.0]), &Matrix::from_diag(&[0.0]), 0.25).unwrap();
        assert_eq!(u[(0, 0)], 0.78125);
        assert_eq!(v[(0, 0)], 0.0);
        let z = Matrix::zeros(3, 2);
        let (u, v) = lra_balance(&z, &z, 0.2).unwrap();
        assert_eq!((u, v), (z.clone(), z));
    }

    #[test]
    fn lra_rank_zero_scalar() {
        let mut st = LraQ::new(vec![1.0], Matrix::zeros(1, 0), Matrix::zeros(1, 0), 0.0).unwrap();
        st.step(&pair(1.0, 4.0), 1.0).unwrap();
        assert!((st.d()[0] - 2.0 / 17.0).abs() <= 1e-15);
    }

    #[test]
    fn lra_group_exit() {
        let u = Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![-1.0], vec![0.0]]).unwrap();
        assert!(matches!(LraQ::new(vec![1.0, 1.0], u, v, 0.0), Err(Error::GroupExit(_))));
    }
}
