use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, Matrix};
use crate::rng::SeededRng;

/// Cheap two-sided bracket on the spectral norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormBounds {
    pub lower: f64,
    pub upper: f64,
}

pub const DEFAULT_SUBSPACE_DIM: usize = 32;
pub const DEFAULT_SUBSPACE_ITERS: usize = 4;

fn row_sq_norms(a: &Matrix) -> Vec<f64> {
    (0..a.rows()).map(|i| dot(a.row(i), a.row(i))).collect()
}

fn col_sq_norms(a: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; a.cols()];
    for i in 0..a.rows() {
        for (o, x) in out.iter_mut().zip(a.row(i)) {
            *o += x * x;
        }
    }
    out
}

fn argmax(x: &[f64]) -> (usize, f64) {
    x.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
}

pub fn spectral_norm_bounds(a: &Matrix) -> Result<NormBounds> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::Empty);
    }
    let (_, rmax) = argmax(&row_sq_norms(a));
    let (_, cmax) = argmax(&col_sq_norms(a));
    let alpha = rmax.max(cmax).sqrt();
    let n = a.rows().max(a.cols()) as f64;
    let sqrt_n = n.sqrt();
    let norm1 = (0..a.cols())
        .map(|j| (0..a.rows()).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let norm_inf = (0..a.rows())
        .map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let upper = [sqrt_n * alpha, a.frobenius_norm(), n * a.max_abs(), sqrt_n * norm1, sqrt_n * norm_inf]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(NormBounds { lower: alpha, upper: upper.max(alpha) })
}

/// Working orientation: returns `B` (either `A` or `Aᵀ`) and the index of the
/// column of `B` whose norm equals the row/column bound `α`.
fn oriented(a: &Matrix) -> (Matrix, usize) {
    let (ri, rmax) = argmax(&row_sq_norms(a));
    let (ci, cmax) = argmax(&col_sq_norms(a));
    if rmax > cmax {
        (a.transpose(), ri)
    } else {
        (a.clone(), ci)
    }
}

/// `‖B Bᵀ x‖ / ‖Bᵀ x‖` together with `B Bᵀ x`.
fn power_ratio(b: &Matrix, x: &[f64]) -> (f64, Vec<f64>) {
    let y = b.tr_matvec(x);
    let ny = norm2(&y);
    if ny == 0.0 {
        return (0.0, vec![0.0; x.len()]);
    }
    let z = b.matvec(&y);
    (norm2(&z) / ny, z)
}

/// Lower estimate of `‖A‖₂` from a few steps of non-orthogonalised subspace
/// iteration. The random block is reflected so its centroid points along the
/// largest row/column of `A`, so the estimate never falls below the single
/// power step started there.
pub fn estimate_spectral_norm(
    a: &Matrix,
    subspace_dim: usize,
    iters: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    Ok(subspace_estimate(a, subspace_dim, iters, rng)?.0)
}

/// Same as [`estimate_spectral_norm`], then keeps power-iterating the best
/// vector until the estimate changes by less than `rel_tol` (or `max_extra`
/// steps pass).
pub fn estimate_spectral_norm_refined(
    a: &Matrix,
    subspace_dim: usize,
    iters: usize,
    rel_tol: f64,
    max_extra: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    let (mut est, mut x, b) = subspace_estimate(a, subspace_dim, iters, rng)?;
    if est == 0.0 {
        return Ok(0.0);
    }
    for _ in 0..max_extra {
        let (r, z) = power_ratio(&b, &x);
        let done = (r - est).abs() <= rel_tol * est;
        est = est.max(r);
        let nz = norm2(&z);
        if done || nz == 0.0 {
            break;
        }
        x = z.iter().map(|v| v / nz).collect();
    }
    Ok(est)
}

fn subspace_estimate(
    a: &Matrix,
    subspace_dim: usize,
    iters: usize,
    rng: &mut SeededRng,
) -> Result<(f64, Vec<f64>, Matrix)> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::Empty);
    }
    if subspace_dim == 0 || iters == 0 {
        return Err(Error::InvalidArgument("subspace_dim and iters must be positive".into()));
    }
    let (b, j) = oriented(a);
    let m = b.rows();
    let anchor = b.col(j);
    let alpha = norm2(&anchor);
    if alpha == 0.0 {
        return Ok((0.0, anchor, b));
    }

    let (mut best, z) = power_ratio(&b, &anchor);
    let mut best_vec = unit_or(&z, &anchor);

    let k = subspace_dim.min(m);
    let mut block: Vec<Vec<f64>> = (0..k).map(|_| rng.normal_vec(m)).collect();
    align_centroid(&mut block, &anchor);

    for _ in 0..iters {
        for x in block.iter_mut() {
            let (r, z) = power_ratio(&b, x);
            let nz = norm2(&z);
            if r > best {
                best = r;
                best_vec = unit_or(&z, x);
            }
            if nz > 0.0 {
                x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi = zi / nz);
            }
        }
    }
    Ok((best, best_vec, b))
}

fn unit_or(z: &[f64], fallback: &[f64]) -> Vec<f64> {
    let nz = norm2(z);
    let src = if nz > 0.0 { z } else { fallback };
    let n = norm2(src);
    src.iter().map(|v| v / n).collect()
}

/// Householder-reflect every column so the block centroid lines up with `target`.
fn align_centroid(block: &mut [Vec<f64>], target: &[f64]) {
    let m = target.len();
    let mut c = vec![0.0; m];
    for x in block.iter() {
        c.iter_mut().zip(x).for_each(|(ci, xi)| *ci += xi);
    }
    let nc = norm2(&c);
    let nt = norm2(target);
    if nc == 0.0 || nt == 0.0 {
        return;
    }
    let u: Vec<f64> = c.iter().zip(target).map(|(ci, ti)| ci / nc - ti / nt).collect();
    let uu = dot(&u, &u);
    if uu < 1e-30 {
        return;
    }
    for x in block.iter_mut() {
        let s = 2.0 * dot(&u, x) / uu;
        x.iter_mut().zip(&u).for_each(|(xi, ui)| *xi -= s * ui);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_on_small_cases() {
        let b = spectral_norm_bounds(&Matrix::identity(4)).unwrap();
        assert_eq!(b.lower, 1.0);
        assert!(b.upper >= 1.0);

        let ones = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let b = spectral_norm_bounds(&ones).unwrap();
        assert!((b.lower - 2f64.sqrt()).abs() < 1e-15);
        assert!(b.upper >= 2.0);

        let d = Matrix::from_diag(&[3.0, 1.0]);
        assert_eq!(spectral_norm_bounds(&d).unwrap().lower, 3.0);
        assert!(spectral_norm_bounds(&Matrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn estimate_small_cases() {
        let mut rng = SeededRng::new(3);
        let e = estimate_spectral_norm(&Matrix::identity(5), 3, 2, &mut rng).unwrap();
        assert!((e - 1.0).abs() < 1e-14);
        let d = Matrix::from_diag(&[3.0, 1.0]);
        let (r, _) = power_ratio(&d, &[3.0, 0.0]);
        assert_eq!(r, 3.0);
        assert!((estimate_spectral_norm(&d, 2, 1, &mut rng).unwrap() - 3.0).abs() < 1e-14);
        assert_eq!(estimate_spectral_norm(&Matrix::zeros(3, 3), 2, 2, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn estimate_is_deterministic() {
        let a = SeededRng::new(9).normal_matrix(20, 20);
        let e1 = estimate_spectral_norm(&a, 8, 2, &mut SeededRng::new(1)).unwrap();
        let e2 = estimate_spectral_norm(&a, 8, 2, &mut SeededRng::new(1)).unwrap();
        assert_eq!(e1, e2);
    }
}
