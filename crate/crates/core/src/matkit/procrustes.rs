//! Online rotations pulling a square factor toward its symmetric polar part.

use crate::error::Result;
use crate::matkit::norms::{estimate_spectral_norm_refined, DEFAULT_SUBSPACE_DIM};
use crate::matrix::Matrix;
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RotationOrder {
    Second,
    Third,
    Fourth,
}

impl RotationOrder {
    pub fn from_degree(k: u32) -> Option<Self> {
        match k {
            2 => Some(Self::Second),
            3 => Some(Self::Third),
            4 => Some(Self::Fourth),
            _ => None,
        }
    }

    /// Normalized step clamp `a‖R‖ ≤ μ_max`.
    pub fn max_step(self) -> f64 {
        match self {
            Self::Second => 0.25,
            Self::Third => 5.0 / 8.0,
            Self::Fourth => 1.1,
        }
    }

    /// Polynomial coefficients of `Ω = Σ c_k (aR)^k` for k = 0..=order.
    pub fn coefficients(self) -> Vec<f64> {
        match self {
            Self::Second => vec![1.0, 1.0, 0.5],
            Self::Third => vec![1.0, 1.0, 0.5, 0.125],
            Self::Fourth => {
                let r2 = std::f64::consts::SQRT_2;
                vec![1.0, 1.0, 0.5, (2.0 - r2) / 4.0, (3.0 - 2.0 * r2) / 8.0]
            }
        }
    }

    fn degree(self) -> usize {
        self.coefficients().len() - 1
    }
}

const NORM_SEED: u64 = 0x0d1a_9a1e;
const NORM_REFINE_TOL: f64 = 1e-9;
const NORM_REFINE_STEPS: usize = 500;

/// Rotates `Q` by a truncated-series approximation of `e^{aR}`, `R = Qᵀ − Q`,
/// with the step `a` from a line search on `tr(ΩQ)`.
pub fn procrustes_rotate(q: &Matrix, order: RotationOrder) -> Result<Matrix> {
    let n = q.ensure_square()?;
    let r = &q.transpose() - q;
    if r.max_abs() == 0.0 {
        return Ok(q.clone());
    }

    // Powers Rᵏ Q and their traces.
    let deg = order.degree();
    let mut terms = Vec::with_capacity(deg);
    let mut cur = r.matmul(q);
    for k in 1..=deg {
        if k > 1 {
            cur = r.matmul(&cur);
        }
        terms.push(cur.clone());
    }
    let t: Vec<f64> = terms.iter().map(Matrix::trace).collect();
    if !(t[0] > 0.0) {
        return Ok(q.clone());
    }

    // The clamp carries the truncation-error guarantee, so the one-step
    // subspace estimate is refined by power iteration before use.
    let mut rng = SeededRng::new(NORM_SEED);
    let k = DEFAULT_SUBSPACE_DIM.min(n);
    let r_norm = estimate_spectral_norm_refined(&r, k, 1, NORM_REFINE_TOL, NORM_REFINE_STEPS, &mut rng)?;
    let a = line_search(order, &t, order.max_step() / r_norm);

    let coeffs = order.coefficients();
    let mut out = q.clone();
    let mut ak = 1.0;
    for (i, term) in terms.iter().enumerate() {
        ak *= a;
        out.axpy_mut(coeffs[i + 1] * ak, term);
    }
    Ok(out)
}

fn line_search(order: RotationOrder, t: &[f64], a_max: f64) -> f64 {
    let second = |t1: f64, t2: f64| if t2 >= 0.0 { a_max } else { (-t1 / t2).min(a_max) };
    match order {
        RotationOrder::Second => second(t[0], t[1]),
        RotationOrder::Third => {
            let (t1, t2, t3) = (t[0], t[1], t[2]);
            if t3.abs() <= f64::MIN_POSITIVE || t3 > 0.0 {
                return second(t1, t2);
            }
            // Positive root of 0.375·t3·a² + t2·a + t1 = 0, in the form that
            // avoids cancellation.
            let disc = (t2 * t2 - 1.5 * t1 * t3).max(0.0);
            let q = -0.5 * (t2 + t2.signum() * disc.sqrt());
            let roots = [q / (0.375 * t3), t1 / q];
            match roots.into_iter().find(|a| *a > 0.0 && a.is_finite()) {
                Some(a) => a.min(a_max),
                None => a_max,
            }
        }
        RotationOrder::Fourth => {
            let c = order.coefficients();
            let df = |a: f64| t[0] + a * t[1] + 3.0 * c[3] * a * a * t[2] + 4.0 * c[4] * a * a * a * t[3];
            first_root(df, a_max).unwrap_or(a_max)
        }
    }
}

/// Smallest root of `f` on `(0, hi]` given `f(0) > 0`, by grid scan then bisection.
fn first_root(f: impl Fn(f64) -> f64, hi: f64) -> Option<f64> {
    const GRID: usize = 64;
    let mut lo = 0.0;
    for i in 1..=GRID {
        let x = hi * i as f64 / GRID as f64;
        if f(x) <= 0.0 {
            let (mut a, mut b) = (lo, x);
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                if f(m) > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            return Some(a);
        }
        lo = x;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_is_fixed() {
        let q = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        for order in [RotationOrder::Second, RotationOrder::Third, RotationOrder::Fourth] {
            assert_eq!(procrustes_rotate(&q, order).unwrap(), q);
        }
    }

    #[test]
    fn quarter_turn_second_order() {
        let q = Matrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let out = procrustes_rotate(&q, RotationOrder::Second).unwrap();
        let want = [0.25, -0.96875, 0.96875, 0.25];
        for (a, b) in out.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{out:?}");
        }
        assert!((out.trace() - 0.5).abs() < 1e-12);
    }
}
