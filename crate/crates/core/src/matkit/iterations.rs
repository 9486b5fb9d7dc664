use crate::error::{Error, Result};
use crate::matrix::Matrix;

fn same_square(a: &Matrix, b: &Matrix) -> Result<usize> {
    let n = a.ensure_square()?;
    if b.rows() != n || b.cols() != n {
        return Err(Error::Dimension(format!(
            "expected {n}x{n}, got {}x{}",
            b.rows(),
            b.cols()
        )));
    }
    Ok(n)
}

/// One Newton-Schulz step toward `(H²)^{-1/2}`: `1.5P − 0.5·P·H²·P²`.
pub fn newton_schulz_step(p: &Matrix, hsq: &Matrix) -> Result<Matrix> {
    same_square(p, hsq)?;
    let php = p.matmul(hsq).matmul(p);
    let mut out = p.scaled(1.5);
    out.axpy_mut(-0.5, &php.matmul(p));
    Ok(out)
}

/// One inverse fourth-root step: `Q − 0.25(PAP − I)Q`.
pub fn inverse_fourth_root_step(q: &Matrix, p: &Matrix, a: &Matrix) -> Result<Matrix> {
    same_square(q, p)?;
    same_square(q, a)?;
    let mut e = p.matmul(a).matmul(p);
    e.add_diag(-1.0);
    let mut out = q.clone();
    out.axpy_mut(-0.25, &e.matmul(q));
    Ok(out)
}
