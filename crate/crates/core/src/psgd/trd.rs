use super::problem::Problem;
use crate::error::{dim_err, Error, Result};
use crate::rng::SeededRng;

/// Dense `I×J×K` array, entry `(i, j, k)` at `(i·J + j)·K + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let len = dims.0 * dims.1 * dims.2;
        if len == 0 {
            return Err(Error::Empty);
        }
        if data.len() != len {
            return Err(dim_err("tensor data", len, data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dims.1 + j) * self.dims.2 + k]
    }
}

/// Tensor rank decomposition: `Σ(τ_ijk − Σ_r x_ri·y_rj·z_rk)²`.
///
/// `θ = (x, y, z)` with each factor stored column-major as `R × I`,
/// `R × J`, `R × K`, so entry `(r, i)` of `x` sits at `r + R·i`.
#[derive(Clone, Debug)]
pub struct TrdProblem {
    tensor: Tensor3,
    rank: usize,
}

impl TrdProblem {
    pub fn new(tensor: Tensor3, rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        Ok(Self { tensor, rank })
    }

    /// Tensor built from standard normal factors, returned with those factors.
    pub fn planted(dims: (usize, usize, usize), rank: usize, rng: &mut SeededRng) -> Result<(Self, Vec<f64>)> {
        let n = rank * (dims.0 + dims.1 + dims.2);
        let theta = rng.normal_vec(n);
        let (i, j, k) = dims;
        let placeholder = Tensor3::new(dims, vec![0.0; i * j * k])?;
        let zero = Self::new(placeholder, rank)?;
        // Model with a zero target is the negated reconstruction.
        let data = zero.residual(&theta).into_iter().map(|r| -r).collect();
        Ok((Self::new(Tensor3::new(dims, data)?, rank)?, theta))
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.tensor
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let (i, j, _) = self.tensor.dims;
        let r = self.rank;
        let (x, rest) = theta.split_at(r * i);
        let (y, z) = rest.split_at(r * j);
        (x, y, z)
    }

    /// `τ − model`, laid out like the tensor.
    fn residual(&self, theta: &[f64]) -> Vec<f64> {
        let (ni, nj, nk) = self.tensor.dims;
        let r = self.rank;
        let (x, y, z) = self.split(theta);
        let mut res = self.tensor.data.clone();
        let mut xy = vec![0.0; r];
        for i in 0..ni {
            for j in 0..nj {
                for q in 0..r {
                    xy[q] = x[q + r * i] * y[q + r * j];
                }
                let row = &mut res[(i * nj + j) * nk..(i * nj + j + 1) * nk];
                for (k, out) in row.iter_mut().enumerate() {
                    let zk = &z[r * k..r * (k + 1)];
                    *out -= xy.iter().zip(zk).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        res
    }

    fn grad_from_residual(&self, theta: &[f64], res: &[f64]) -> Vec<f64> {
        let (ni, nj, nk) = self.tensor.dims;
        let r = self.rank;
        let (x, y, z) = self.split(theta);
        let mut gx = vec![0.0; r * ni];
        let mut gy = vec![0.0; r * nj];
        let mut gz = vec![0.0; r * nk];
        // s_q = Σ_k res_ijk z_qk, shared by the x and y gradients.
        let mut s = vec![0.0; r];
        for i in 0..ni {
            for j in 0..nj {
                s.iter_mut().for_each(|v| *v = 0.0);
                let row = &res[(i * nj + j) * nk..(i * nj + j + 1) * nk];
                for (k, &e) in row.iter().enumerate() {
                    let zk = &z[r * k..r * (k + 1)];
                    for q in 0..r {
                        s[q] += e * zk[q];
                    }
                    let gzk = &mut gz[r * k..r * (k + 1)];
                    for q in 0..r {
                        gzk[q] -= 2.0 * e * x[q + r * i] * y[q + r * j];
                    }
                }
                for q in 0..r {
                    gx[q + r * i] -= 2.0 * s[q] * y[q + r * j];
                    gy[q + r * j] -= 2.0 * s[q] * x[q + r * i];
                }
            }
        }
        gx.extend(gy);
        gx.extend(gz);
        gx
    }
}

impl Problem for TrdProblem {
    fn dim(&self) -> usize {
        let (i, j, k) = self.tensor.dims;
        self.rank * (i + j + k)
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        self.residual(theta).iter().map(|e| e * e).sum()
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        self.loss_grad(theta).1
    }

    fn loss_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let res = self.residual(theta);
        let loss = res.iter().map(|e| e * e).sum();
        (loss, self.grad_from_residual(theta, &res))
    }
}
