//! Hessians of the benchmark scenarios.

use hessfit_core::matkit::hilbert;
use hessfit_core::rng::SeededRng;
use hessfit_core::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianKind {
    Hilbert3,
    Tridiag50,
    Hilb64Reg,
    TimeVarying,
}

impl HessianKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Hilbert3 => "hilbert3",
            Self::Tridiag50 => "tridiag50",
            Self::Hilb64Reg => "hilb64reg",
            Self::TimeVarying => "timevarying",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Hilbert3, Self::Tridiag50, Self::Hilb64Reg, Self::TimeVarying]
            .into_iter()
            .find(|k| k.name() == s)
    }

    /// Size of the fixed matrices; the others scale with the config.
    pub fn fixed_dim(self) -> Option<usize> {
        match self {
            Self::Hilbert3 => Some(3),
            Self::Hilb64Reg => Some(64),
            Self::Tridiag50 | Self::TimeVarying => None,
        }
    }
}

pub fn hilbert3() -> Matrix {
    hilbert(3)
}

/// 50×50 with unit diagonal and 0.5 on the first off-diagonals.
pub fn tridiag50() -> Matrix {
    tridiag(50)
}

pub fn tridiag(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 1.0,
        1 => 0.5,
        _ => 0.0,
    })
}

/// `hilb(64) + 10⁻⁶I`.
pub fn hilb64reg() -> Matrix {
    let mut h = hilbert(64);
    h.add_diag(1e-6);
    h
}

/// `H₀ = ¼·11ᵀ`, then `H ← H + uuᵀ` with `uᵢ ∼ U(0, 1)` per step.
#[derive(Clone, Debug)]
pub struct TimeVaryingHessian {
    h: Matrix,
    rng: SeededRng,
}

impl TimeVaryingHessian {
    pub fn new(n: usize, rng: SeededRng) -> Self {
        Self { h: Matrix::from_fn(n, n, |_, _| 0.25), rng }
    }

    pub fn current(&self) -> &Matrix {
        &self.h
    }

    pub fn advance(&mut self) {
        let u = self.rng.uniform_vec(self.h.rows());
        self.h.add_outer(1.0, &u, &u);
    }
}

/// Fixed Hessian for the static kinds. The time-varying kind returns `H₀`.
pub fn make_hessian(kind: HessianKind) -> Matrix {
    match kind {
        HessianKind::Hilbert3 => hilbert3(),
        HessianKind::Tridiag50 => tridiag50(),
        HessianKind::Hilb64Reg => hilb64reg(),
        HessianKind::TimeVarying => TimeVaryingHessian::new(50, SeededRng::new(0)).current().clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hessfit_core::matkit::sym_eigvals;

    #[test]
    fn hilbert_entries() {
        let h = hilbert3();
        assert_eq!(h[(0, 0)], 1.0);
        assert_eq!(h[(2, 2)], 0.2);
        assert_eq!(h[(0, 2)], 1.0 / 3.0);
    }

    #[test]
    fn tridiag_spectrum_inside_open_interval() {
        let ev = sym_eigvals(&tridiag50()).unwrap();
        assert!(ev.iter().all(|&l| l > 0.0 && l < 2.0));
    }

    #[test]
    fn regularized_hilbert_floor() {
        let ev = sym_eigvals(&hilb64reg()).unwrap();
        assert!(ev.iter().cloned().fold(f64::INFINITY, f64::min) >= 1e-6 * (1.0 - 1e-6));
    }

    #[test]
    fn time_varying_grows_by_outer_products() {
        let mut tv = TimeVaryingHessian::new(4, SeededRng::new(1));
        assert!(tv.current().as_slice().iter().all(|&x| x == 0.25));
        tv.advance();
        let h = tv.current();
        assert!(h.asymmetry() == 0.0);
        assert!((0..4).all(|i| h[(i, i)] >= 0.25 && h[(i, i)] <= 1.25));
    }
}
