//! Elementwise and per-column primitives with their backward passes.

use super::matrix::{Matrix, Scalar};
use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

/// Whether normalization layers use batch statistics or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn leaky_relu<T: Scalar>(x: &Matrix<T>, slope: T) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { v * slope })
}

/// Gradient through leaky ReLU given the pre-activation `x`.
///
/// The derivative at exactly zero is taken as `slope`.
pub fn leaky_relu_backward<T: Scalar>(x: &Matrix<T>, dy: &Matrix<T>, slope: T) -> Result<Matrix<T>> {
    x.zip_map(dy, |v, g| if v > T::zero() { g } else { g * slope })
}

pub fn sigmoid<T: Scalar>(z: &Matrix<T>) -> Matrix<T> {
    z.map(sigmoid_scalar)
}

pub fn sigmoid_scalar<T: Scalar>(z: T) -> T {
    // Two branches so neither exp() overflows.
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Gradient through the sigmoid given its output `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Matrix<T>, dy: &Matrix<T>) -> Result<Matrix<T>> {
    y.zip_map(dy, |s, g| g * s * (T::one() - s))
}

/// Row-wise softmax with max-shift.
pub fn softmax<T: Scalar>(z: &Matrix<T>) -> Matrix<T> {
    let mut out = z.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Gradient through a row-wise softmax given its output `p`.
pub fn softmax_backward<T: Scalar>(p: &Matrix<T>, dp: &Matrix<T>) -> Result<Matrix<T>> {
    if p.shape() != dp.shape() {
        return Err(Error::Shape {
            op: "softmax_backward",
            left: p.shape(),
            right: dp.shape(),
        });
    }
    let mut out = Matrix::zeros(p.rows(), p.cols());
    for i in 0..p.rows() {
        let (pr, gr) = (p.row(i), dp.row(i));
        let inner: T = pr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for (o, (&pv, &gv)) in out.row_mut(i).iter_mut().zip(pr.iter().zip(gr)) {
            *o = pv * (gv - inner);
        }
    }
    Ok(out)
}

/// Batch normalization parameters and running statistics for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

/// Values saved by a batchnorm forward pass for its backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    mode: Mode,
    x_hat: Matrix<T>,
    inv_std: Vec<T>,
}

/// Per-column statistics of one training batch.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub d_input: Matrix<T>,
    pub d_gamma: Vec<T>,
    pub d_beta: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
            running_mean: vec![T::zero(); dim],
            running_var: vec![T::one(); dim],
            momentum: T::lit(DEFAULT_BN_MOMENTUM),
            eps: T::lit(DEFAULT_BN_EPS),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes per column and, in train mode, folds the batch statistics
    /// into the running estimates.
    pub fn forward(&mut self, x: &Matrix<T>, mode: Mode) -> Result<(Matrix<T>, BatchNormCache<T>)> {
        let (y, cache, stats) = self.normalize(x, mode)?;
        if let Some(stats) = stats {
            self.update_running(&stats);
        }
        Ok((y, cache))
    }

    /// Normalization without touching running statistics. Train mode uses the
    /// biased batch variance and also returns the batch statistics.
    pub fn normalize(&self, x: &Matrix<T>, mode: Mode) -> Result<(Matrix<T>, BatchNormCache<T>, Option<BatchStats<T>>)> {
        let (n, d) = x.shape();
        if d != self.dim() {
            return Err(Error::Dim {
                what: "batchnorm input columns".into(),
                expected: self.dim(),
                actual: d,
            });
        }
        let (mean, inv_std, stats) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "batchnorm in train mode needs a batch of at least 2, got {n}"
                    )));
                }
                let nf = T::from_usize(n).unwrap();
                let mean: Vec<T> = x.col_sums().into_iter().map(|s| s / nf).collect();
                let mut var = vec![T::zero(); d];
                for r in x.iter_rows() {
                    for ((v, &xv), &m) in var.iter_mut().zip(r).zip(&mean) {
                        let c = xv - m;
                        *v = *v + c * c;
                    }
                }
                for v in &mut var {
                    *v = *v / nf;
                }
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var,
                    count: n,
                };
                (mean, inv_std, Some(stats))
            }
            Mode::Eval => (
                self.running_mean.clone(),
                self.running_var
                    .iter()
                    .map(|&v| T::one() / (v + self.eps).sqrt())
                    .collect(),
                None,
            ),
        };
        let mut x_hat = x.clone();
        let mut y = Matrix::zeros(n, d);
        for i in 0..n {
            let xr = x_hat.row_mut(i);
            for j in 0..d {
                xr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let yr = y.row_mut(i);
            for j in 0..d {
                yr[j] = self.gamma[j] * x_hat[(i, j)] + self.beta[j];
            }
        }
        Ok((y, BatchNormCache { mode, x_hat, inv_std }, stats))
    }

    /// Exponential moving average update; the running variance tracks the
    /// unbiased batch variance.
    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let nf = T::from_usize(stats.count).unwrap();
        let unbias = nf / (nf - T::one());
        let keep = T::one() - self.momentum;
        for j in 0..self.dim() {
            self.running_mean[j] = keep * self.running_mean[j] + self.momentum * stats.mean[j];
            self.running_var[j] = keep * self.running_var[j] + self.momentum * stats.var[j] * unbias;
        }
    }

    pub fn backward(&self, cache: &BatchNormCache<T>, dy: &Matrix<T>) -> Result<BatchNormGrads<T>> {
        let (n, d) = dy.shape();
        if cache.x_hat.shape() != (n, d) {
            return Err(Error::Shape {
                op: "batchnorm_backward",
                left: cache.x_hat.shape(),
                right: dy.shape(),
            });
        }
        let mut d_gamma = vec![T::zero(); d];
        let mut d_beta = vec![T::zero(); d];
        for i in 0..n {
            for j in 0..d {
                let g = dy[(i, j)];
                d_gamma[j] = d_gamma[j] + g * cache.x_hat[(i, j)];
                d_beta[j] = d_beta[j] + g;
            }
        }
        let mut d_input = Matrix::zeros(n, d);
        match cache.mode {
            Mode::Eval => {
                for i in 0..n {
                    for j in 0..d {
                        d_input[(i, j)] = dy[(i, j)] * self.gamma[j] * cache.inv_std[j];
                    }
                }
            }
            Mode::Train => {
                // dx = γ·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
                let nf = T::from_usize(n).unwrap();
                for i in 0..n {
                    for j in 0..d {
                        let scale = self.gamma[j] * cache.inv_std[j] / nf;
                        d_input[(i, j)] =
                            scale * (nf * dy[(i, j)] - d_beta[j] - cache.x_hat[(i, j)] * d_gamma[j]);
                    }
                }
            }
        }
        Ok(BatchNormGrads {
            d_input,
            d_gamma,
            d_beta,
        })
    }

    pub fn cast<U: Scalar>(&self) -> BatchNorm<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from(*x).unwrap()).collect();
        BatchNorm {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            momentum: U::from(self.momentum).unwrap(),
            eps: U::from(self.eps).unwrap(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_values_and_gradient() {
        let x = Matrix::from_rows(&[[3.0f32, -1.0]]).unwrap();
        let y = leaky_relu(&x, 0.2);
        assert_eq!(y.as_slice(), &[3.0, -0.2]);
        let g = leaky_relu_backward(&x, &Matrix::filled(1, 2, 1.0), 0.2).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 0.2]);
    }

    #[test]
    fn softmax_closed_forms() {
        let p = softmax(&Matrix::from_rows(&[[0.0f64, 0.0], [2f64.ln(), 0.0]]).unwrap());
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert!((p[(1, 0)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[(1, 1)] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariant_and_stable() {
        let z = Matrix::from_rows(&[[1.0f64, -2.0, 0.5]]).unwrap();
        let shifted = z.map(|v| v + 1000.0);
        let (a, b) = (softmax(&z), softmax(&shifted));
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        let sum: f64 = b.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_symmetry_and_limits() {
        assert_eq!(sigmoid_scalar(0.0f32), 0.5);
        assert_eq!(sigmoid_scalar(200.0f32), 1.0);
        assert_eq!(sigmoid_scalar(-200.0f32), 0.0);
        for z in [-5.0f64, -0.3, 0.7, 12.0] {
            assert!((sigmoid_scalar(z) + sigmoid_scalar(-z) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn batchnorm_two_point_column() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.eps = 0.0;
        let (y, _) = bn.forward(&Matrix::from_rows(&[[1.0], [3.0]]).unwrap(), Mode::Train).unwrap();
        assert_eq!(y.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn batchnorm_constant_column_is_zero() {
        let mut bn = BatchNorm::<f32>::new(2);
        let x = Matrix::from_rows(&[[4.0, 1.0], [4.0, 2.0], [4.0, 3.0]]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for i in 0..3 {
            assert_eq!(y[(i, 0)], 0.0);
        }
    }

    #[test]
    fn batchnorm_eval_with_default_stats_is_near_identity() {
        let mut bn = BatchNorm::<f32>::new(3);
        let x = Matrix::from_rows(&[[0.5, -2.0, 7.0]]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Eval).unwrap();
        for (a, b) in y.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0));
        }
        // Eval mode never touches running statistics.
        assert_eq!(bn.running_mean, vec![0.0; 3]);
    }

    #[test]
    fn batchnorm_rejects_single_sample_in_train_mode() {
        let mut bn = BatchNorm::<f32>::new(2);
        let err = bn.forward(&Matrix::zeros(1, 2), Mode::Train).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn batchnorm_updates_running_stats_by_ema() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.forward(&Matrix::from_rows(&[[1.0], [3.0]]).unwrap(), Mode::Train).unwrap();
        // mean 2, unbiased variance 2
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut rng = crate::numerics::Rng::new(11);
        for batch in [16, 40, 128] {
            let x = rng.gaussian(3.0, 2.5, batch, 6).unwrap();
            let bn = BatchNorm::<f32>::new(6);
            let (y, _, _) = bn.normalize(&x, Mode::Train).unwrap();
            for j in 0..6 {
                let col: Vec<f64> = (0..batch).map(|i| f64::from(y[(i, j)])).collect();
                let mean = col.iter().sum::<f64>() / batch as f64;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / batch as f64;
                assert!(mean.abs() <= 1e-5, "batch {batch} col {j}: mean {mean}");
                // eps = 1e-5 shrinks the variance by about var / (var + eps)
                assert!((var - 1.0).abs() <= 1e-4, "batch {batch} col {j}: var {var}");
            }
        }
    }
}
