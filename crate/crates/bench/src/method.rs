use hessfit_core::lie_fit::{InverseFreeRule, TriangularMode};
use hessfit_core::precond::PrecondSpec;
use hessfit_core::sparse_fit::{KronMode, DEFAULT_LRA_RANK};

/// Every fitter the runner knows, plus plain gradient descent for the
/// optimizer comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Euclid,
    ClosedForm,
    Spd,
    Newton,
    Bfgs,
    Gl,
    Tri,
    TriApprox,
    TriTriu,
    Qeq,
    Quad1,
    Quad2,
    Qep,
    Quad3,
    Diag,
    Kron,
    Lra,
    Gd,
}

impl Method {
    pub const ALL: [Method; 18] = [
        Self::Euclid,
        Self::ClosedForm,
        Self::Spd,
        Self::Newton,
        Self::Bfgs,
        Self::Gl,
        Self::Tri,
        Self::TriApprox,
        Self::TriTriu,
        Self::Qeq,
        Self::Quad1,
        Self::Quad2,
        Self::Qep,
        Self::Quad3,
        Self::Diag,
        Self::Kron,
        Self::Lra,
        Self::Gd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Euclid => "euclid",
            Self::ClosedForm => "closed-form",
            Self::Spd => "spd",
            Self::Newton => "newton",
            Self::Bfgs => "bfgs",
            Self::Gl => "gl",
            Self::Tri => "tri",
            Self::TriApprox => "tri-approx",
            Self::TriTriu => "tri-triu",
            Self::Qeq => "qeq",
            Self::Quad1 => "quad1",
            Self::Quad2 => "quad2",
            Self::Qep => "qep",
            Self::Quad3 => "quad3",
            Self::Diag => "diag",
            Self::Kron => "kron",
            Self::Lra => "lra",
            Self::Gd => "gd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Lie-group form behind this method, when it has one. Kronecker
    /// shapes depend on the problem and are filled in by the caller.
    pub fn precond_spec(self) -> Option<PrecondSpec> {
        Some(match self {
            Self::Gl => PrecondSpec::Gl,
            Self::Tri => PrecondSpec::Triangular(TriangularMode::ExactQr),
            Self::TriApprox => PrecondSpec::Triangular(TriangularMode::Approx),
            Self::TriTriu => PrecondSpec::Triangular(TriangularMode::TriuOnly),
            Self::Qeq => PrecondSpec::InverseFree(InverseFreeRule::Qeq),
            Self::Quad1 => PrecondSpec::InverseFree(InverseFreeRule::quad1()),
            Self::Quad2 => PrecondSpec::InverseFree(InverseFreeRule::Quad2),
            Self::Qep => PrecondSpec::InverseFree(InverseFreeRule::Qep),
            Self::Quad3 => PrecondSpec::InverseFree(InverseFreeRule::quad3()),
            Self::Diag => PrecondSpec::Diagonal,
            Self::Kron => PrecondSpec::Kron { m1: 0, m2: 0, mode: KronMode::Qr },
            Self::Lra => PrecondSpec::Lra { rank: DEFAULT_LRA_RANK },
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
        }
        assert_eq!(Method::parse("adam"), None);
    }
}
