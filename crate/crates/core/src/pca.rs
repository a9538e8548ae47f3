//! Principal directions by power iteration with deflation, for 2-D exports.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const PCA_TOL: f64 = 1e-9;
pub const PCA_MAX_ITER: usize = 1000;

/// Fitted projection onto the leading principal directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalue of each direction.
    pub variances: Vec<f64>,
}

impl Pca {
    /// Fits `k` directions to the rows of `points`.
    ///
    /// Directions past the rank of the data are still returned, chosen
    /// orthogonal to the earlier ones with zero variance.
    pub fn fit(points: &Matrix, k: usize) -> Result<Self> {
        let (n, d) = (points.rows(), points.cols());
        if n < 3 {
            return Err(Error::InvalidArgument(format!("PCA needs at least 3 points, got {n}")));
        }
        if k == 0 || k > d {
            return Err(Error::InvalidArgument(format!("cannot fit {k} components in {d} dimensions")));
        }
        let mut mean = vec![0.0f64; d];
        for row in points.iter_rows() {
            mean.iter_mut().zip(row).for_each(|(m, &x)| *m += f64::from(x));
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = vec![0.0f64; d * d];
        let mut centered = vec![0.0f64; d];
        for row in points.iter_rows() {
            centered.iter_mut().zip(row.iter().zip(&mean)).for_each(|(c, (&x, m))| *c = f64::from(x) - m);
            for i in 0..d {
                let ci = centered[i];
                for j in 0..d {
                    cov[i * d + j] += ci * centered[j];
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= n as f64);
        let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
        let negligible = trace.max(f64::MIN_POSITIVE) * 1e-12;

        let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut variances = Vec::with_capacity(k);
        for c in 0..k {
            let v = match power_iteration(&cov, d, c, &components, negligible) {
                Some(v) => v,
                None => orthogonal_fill(d, &components),
            };
            let lambda = rayleigh(&cov, d, &v).max(0.0);
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] -= lambda * v[i] * v[j];
                }
            }
            components.push(v);
            variances.push(lambda);
        }
        Ok(Self {
            mean,
            components,
            variances,
        })
    }

    pub fn project(&self, x: &[f32]) -> Vec<f64> {
        self.components
            .iter()
            .map(|v| v.iter().zip(x.iter().zip(&self.mean)).map(|(vi, (&xi, m))| vi * (f64::from(xi) - m)).sum())
            .collect()
    }
}

fn mat_vec(a: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d).map(|i| a[i * d..(i + 1) * d].iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

fn rayleigh(a: &[f64], d: usize, v: &[f64]) -> f64 {
    mat_vec(a, d, v).iter().zip(v).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
    }
}

/// Leading eigenvector of the (deflated) covariance, or `None` when what is
/// left of it is numerically zero.
fn power_iteration(cov: &[f64], d: usize, salt: usize, previous: &[Vec<f64>], negligible: f64) -> Option<Vec<f64>> {
    // Fixed, non-symmetric start so the result does not depend on any RNG.
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + ((i + salt) % 7) as f64 * 0.1 + i as f64 * 1e-3).collect();
    orthogonalize(&mut v, previous);
    let n0 = norm(&v);
    if n0 == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n0);
    for _ in 0..PCA_MAX_ITER {
        let mut w = mat_vec(cov, d, &v);
        orthogonalize(&mut w, previous);
        let nw = norm(&w);
        if nw <= negligible {
            return None;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        v = w;
        if delta <= PCA_TOL {
            break;
        }
    }
    Some(v)
}

/// First standard basis vector that survives Gram-Schmidt against `previous`.
fn orthogonal_fill(d: usize, previous: &[Vec<f64>]) -> Vec<f64> {
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        orthogonalize(&mut e, previous);
        // second pass keeps the result orthogonal to working precision
        orthogonalize(&mut e, previous);
        let n = norm(&e);
        if n > 1e-6 {
            e.iter_mut().for_each(|x| *x /= n);
            return e;
        }
    }
    unreachable!("fewer components than dimensions always leaves a free direction")
}
