use super::matrix::Scalar;
use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Adam moment buffers for a list of parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed state for blocks of the given sizes.
    pub fn new(block_sizes: &[usize]) -> Self {
        Self {
            first_moment: block_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moment: block_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
            beta1: T::lit(DEFAULT_BETA1),
            beta2: T::lit(DEFAULT_BETA2),
            eps: T::lit(DEFAULT_EPS),
        }
    }

    /// One bias-corrected Adam update.
    ///
    /// `names` labels the blocks for error reporting. Nothing is modified
    /// when any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], names: &[String], lr: T) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::Dim {
                what: "adam parameter block count".into(),
                expected: self.first_moment.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for (b, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first_moment[b].len() {
                return Err(Error::Dim {
                    what: format!("adam block `{}`", block_name(names, b)),
                    expected: self.first_moment[b].len(),
                    actual: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(block_name(names, b)));
            }
        }
        self.step += 1;
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[b];
            let v = &mut self.second_moment[b];
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

fn block_name(names: &[String], b: usize) -> String {
    names.get(b).cloned().unwrap_or_else(|| format!("block {b}"))
}
