//! One type over every fitted preconditioner form, so the optimizer and the
//! benchmarks can treat them uniformly.

use crate::crit::HvpPair;
use crate::error::{dim_err, Error, Result};
use crate::lie_fit::{DenseQState, InverseFreeRule, InverseFreeState, TriangularMode, TriangularQState};
use crate::matrix::Matrix;
use crate::rng::SeededRng;
use crate::sparse_fit::{DiagonalQ, KronMode, KronQ, LraQ};

/// Which form to build, before its size and scale are known.
#[derive(Clone, Debug, PartialEq)]
pub enum PrecondSpec {
    Gl,
    Triangular(TriangularMode),
    InverseFree(InverseFreeRule),
    Diagonal,
    /// Kronecker factors of sizes `m1 × m2` over a column-major `m1 × m2` view.
    Kron { m1: usize, m2: usize, mode: KronMode },
    Lra { rank: usize },
    /// Direct sum over consecutive blocks of the parameter vector.
    Blocks(Vec<(usize, PrecondSpec)>),
}

impl PrecondSpec {
    /// Dimension fixed by the layout itself, if any.
    pub fn fixed_dim(&self) -> Option<usize> {
        match self {
            Self::Kron { m1, m2, .. } => Some(m1 * m2),
            Self::Blocks(blocks) => Some(blocks.iter().map(|(n, _)| n).sum()),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Preconditioner {
    Gl(DenseQState),
    Triangular(TriangularQState),
    InverseFree(InverseFreeState),
    Diagonal(DiagonalQ),
    Kron(KronQ),
    Lra(LraQ),
    Blocks(Vec<Preconditioner>),
}

impl Preconditioner {
    /// Builds `Q₀ = scale·I` (or `P₀ = scale²·I` for the direct-P rule).
    pub fn new(spec: &PrecondSpec, n: usize, scale: f64, beta: f64, rng: &mut SeededRng) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty);
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("initial scale must be positive, got {scale}")));
        }
        if let Some(m) = spec.fixed_dim() {
            if m != n {
                return Err(dim_err("preconditioner dimension", m, n));
            }
        }
        let q0 = Matrix::scaled_identity(n, scale);
        Ok(match spec {
            PrecondSpec::Gl => Self::Gl(DenseQState::new(q0, beta)?),
            PrecondSpec::Triangular(mode) => Self::Triangular(TriangularQState::new(q0, beta, *mode)?),
            PrecondSpec::InverseFree(rule) => {
                let init = match rule {
                    InverseFreeRule::Quad3 { .. } => Matrix::scaled_identity(n, scale * scale),
                    _ => q0,
                };
                Self::InverseFree(InverseFreeState::new(init, beta, *rule)?)
            }
            PrecondSpec::Diagonal => Self::Diagonal(DiagonalQ::new(vec![scale; n], beta)?),
            PrecondSpec::Kron { m1, m2, mode } => {
                // Split the scale evenly between the factors.
                let s = scale.sqrt();
                let q1 = Matrix::scaled_identity(*m1, s);
                let q2 = Matrix::scaled_identity(*m2, s);
                Self::Kron(KronQ::new(q1, q2, beta, *mode, rng.next_seed())?)
            }
            PrecondSpec::Lra { rank } => {
                Self::Lra(LraQ::with_rank(n, (*rank).min(n), scale, beta, rng)?)
            }
            PrecondSpec::Blocks(blocks) => Self::Blocks(
                blocks
                    .iter()
                    .map(|(m, s)| Self::new(s, *m, scale, beta, rng))
                    .collect::<Result<_>>()?,
            ),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gl(s) => s.q().rows(),
            Self::Triangular(s) => s.q().rows(),
            Self::InverseFree(s) => s.q().rows(),
            Self::Diagonal(s) => s.dim(),
            Self::Kron(s) => s.dim(),
            Self::Lra(s) => s.dim(),
            Self::Blocks(bs) => bs.iter().map(Self::dim).sum(),
        }
    }

    /// One fitting step with normalized step size `mu`.
    pub fn update(&mut self, pair: &HvpPair, mu: f64) -> Result<()> {
        match self {
            Self::Gl(s) => s.step(pair, mu),
            Self::Triangular(s) => s.step(pair, mu),
            Self::InverseFree(s) => s.step(pair, mu),
            Self::Diagonal(s) => s.step(pair, mu),
            Self::Kron(s) => s.step(pair, mu),
            Self::Lra(s) => s.step(pair, mu),
            Self::Blocks(bs) => {
                pair.check_dim(bs.iter().map(Self::dim).sum())?;
                let mut at = 0;
                for b in bs {
                    let m = b.dim();
                    let sub = HvpPair::new(pair.v[at..at + m].to_vec(), pair.h[at..at + m].to_vec())?;
                    b.update(&sub, mu)?;
                    at += m;
                }
                Ok(())
            }
        }
    }

    /// `Pg`.
    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.dim() {
            return Err(dim_err("gradient length", self.dim(), g.len()));
        }
        match self {
            Self::Gl(s) => Ok(qtq(s.q(), g)),
            Self::Triangular(s) => Ok(qtq(s.q(), g)),
            Self::InverseFree(s) => Ok(s.apply_preconditioner(g)),
            Self::Diagonal(s) => s.apply(g),
            Self::Kron(s) => s.apply(g),
            Self::Lra(s) => s.apply(g),
            Self::Blocks(bs) => {
                let mut out = Vec::with_capacity(g.len());
                let mut at = 0;
                for b in bs {
                    let m = b.dim();
                    out.extend(b.apply(&g[at..at + m])?);
                    at += m;
                }
                Ok(out)
            }
        }
    }

    /// Dense `P`. Costs `O(n³)` for the structured forms.
    pub fn dense_p(&self) -> Matrix {
        let from_q = |q: &Matrix| q.tr_matmul(q);
        match self {
            Self::Gl(s) => s.preconditioner(),
            Self::Triangular(s) => s.preconditioner(),
            Self::InverseFree(s) => s.preconditioner(),
            Self::Diagonal(s) => from_q(&s.dense_q()),
            Self::Kron(s) => from_q(&s.dense_q()),
            Self::Lra(s) => from_q(&s.dense_q()),
            Self::Blocks(bs) => {
                let n = self.dim();
                let mut p = Matrix::zeros(n, n);
                let mut at = 0;
                for b in bs {
                    let pb = b.dense_p();
                    for i in 0..pb.rows() {
                        for j in 0..pb.cols() {
                            p[(at + i, at + j)] = pb[(i, j)];
                        }
                    }
                    at += pb.rows();
                }
                p
            }
        }
    }
}

fn qtq(q: &Matrix, g: &[f64]) -> Vec<f64> {
    q.tr_matvec(&q.matvec(g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<PrecondSpec> {
        vec![
            PrecondSpec::Gl,
            PrecondSpec::Triangular(TriangularMode::Approx),
            PrecondSpec::InverseFree(InverseFreeRule::quad3()),
            PrecondSpec::InverseFree(InverseFreeRule::Qep),
            PrecondSpec::Diagonal,
            PrecondSpec::Kron { m1: 2, m2: 3, mode: KronMode::Qr },
            PrecondSpec::Lra { rank: 2 },
            PrecondSpec::Blocks(vec![(2, PrecondSpec::Gl), (4, PrecondSpec::Diagonal)]),
        ]
    }

    #[test]
    fn initial_preconditioner_is_scaled_identity() {
        let mut rng = SeededRng::new(1);
        for spec in specs() {
            let p = Preconditioner::new(&spec, 6, 0.5, 0.9, &mut rng).unwrap();
            let dense = p.dense_p();
            let mut expect = Matrix::scaled_identity(6, 0.25);
            if let PrecondSpec::Lra { .. } = spec {
                // low-rank part is tiny but nonzero
                assert!((&dense - &expect).max_abs() < 1e-4);
                continue;
            }
            assert!((&dense - &expect).max_abs() < 1e-15, "{spec:?}");
            let g = rng.normal_vec(6);
            let pg = p.apply(&g).unwrap();
            expect = Matrix::scaled_identity(6, 0.25);
            let want = expect.matvec(&g);
            assert!(pg.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-15));
        }
    }

    #[test]
    fn apply_matches_dense_after_updates() {
        let mut rng = SeededRng::new(2);
        let hess = Matrix::from_fn(6, 6, |i, j| if i == j { 2.0 } else { 0.3 / (1.0 + (i + j) as f64) });
        for spec in specs() {
            let mut p = Preconditioner::new(&spec, 6, 1.0, 0.9, &mut rng).unwrap();
            for _ in 0..50 {
                p.update(&HvpPair::exact(&hess, rng.normal_vec(6)).unwrap(), 0.1).unwrap();
            }
            let g = rng.normal_vec(6);
            let want = p.dense_p().matvec(&g);
            let got = p.apply(&g).unwrap();
            assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12), "{spec:?}");
        }
    }

    #[test]
    fn rejects_mismatched_dimension() {
        let mut rng = SeededRng::new(3);
        let spec = PrecondSpec::Kron { m1: 2, m2: 2, mode: KronMode::Qr };
        assert!(Preconditioner::new(&spec, 5, 1.0, 0.9, &mut rng).is_err());
        assert!(Preconditioner::new(&PrecondSpec::Gl, 3, 0.0, 0.9, &mut rng).is_err());
    }
}
