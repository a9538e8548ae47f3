//! Cross-entropy, binary cross-entropy, and cosine-distance losses, each with
//! its gradient, plus the discriminator and generator objectives built from
//! them.
//!
//! The cross-entropy gradients are fused with the output activation: they are
//! taken with respect to the pre-softmax / pre-sigmoid logits.

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Scalar};

/// Probabilities entering a log are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;
/// Floor on the norm product in the cosine distance.
pub const CDL_EPS: f64 = 1e-8;

const ROW_SUM_TOL: f64 = 1e-5;

/// A loss value and its gradient with respect to the differentiated input.
#[derive(Clone, Debug)]
pub struct LossValue<T = f32> {
    pub value: T,
    pub grad: Matrix<T>,
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    let c = T::lit(PROB_CLAMP);
    p.max(c).min(T::one() - c)
}

fn check_shapes<T: Scalar>(op: &'static str, a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn check_one_hot<T: Scalar>(target: &Matrix<T>) -> Result<()> {
    for (i, row) in target.iter_rows().enumerate() {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::InvalidArgument(format!("target row {i} is not one-hot")));
        }
    }
    Ok(())
}

/// One-hot rows for class indices.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Matrix<T>> {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidArgument(format!(
                "class index {l} out of range for {classes} classes"
            )));
        }
        m[(i, l)] = T::one();
    }
    Ok(m)
}

fn cce_value<T: Scalar>(predicted: &Matrix<T>, target: &Matrix<T>) -> T {
    let n = T::from_usize(predicted.rows().max(1)).unwrap();
    let mut total = T::zero();
    for (p, t) in predicted.as_slice().iter().zip(target.as_slice()) {
        if *t != T::zero() {
            total = total - *t * clamp_prob(*p).ln();
        }
    }
    total / n
}

/// Categorical cross-entropy of softmax probabilities against one-hot targets.
///
/// The gradient is with respect to the softmax logits: `(P - T) / N`.
pub fn cce<T: Scalar>(predicted: &Matrix<T>, target: &Matrix<T>) -> Result<LossValue<T>> {
    check_shapes("cce", predicted, target)?;
    check_one_hot(target)?;
    for (i, row) in predicted.iter_rows().enumerate() {
        let s: T = row.iter().copied().sum();
        if (s - T::one()).abs() > T::lit(ROW_SUM_TOL) {
            return Err(Error::InvalidArgument(format!(
                "predicted row {i} sums to {s:?}, not 1"
            )));
        }
    }
    let n = T::from_usize(predicted.rows().max(1)).unwrap();
    let grad = predicted.zip_map(target, |p, t| (p - t) / n)?;
    Ok(LossValue {
        value: cce_value(predicted, target),
        grad,
    })
}

/// Categorical cross-entropy over independent sigmoid outputs.
///
/// Rows need not sum to one. The gradient is with respect to the sigmoid
/// logits: `-T (1 - P) / N`.
pub fn cce_sigmoid<T: Scalar>(predicted: &Matrix<T>, target: &Matrix<T>) -> Result<LossValue<T>> {
    check_shapes("cce_sigmoid", predicted, target)?;
    check_one_hot(target)?;
    let n = T::from_usize(predicted.rows().max(1)).unwrap();
    let grad = predicted.zip_map(target, |p, t| -t * (T::one() - p) / n)?;
    Ok(LossValue {
        value: cce_value(predicted, target),
        grad,
    })
}

/// Binary cross-entropy of sigmoid probabilities against `{0, 1}` targets.
///
/// The gradient (an `N x 1` matrix) is with respect to the sigmoid logits:
/// `(P - T) / N`.
pub fn bce<T: Scalar>(predicted: &[T], target: &[T]) -> Result<LossValue<T>> {
    if predicted.len() != target.len() {
        return Err(Error::Shape {
            op: "bce",
            left: (predicted.len(), 1),
            right: (target.len(), 1),
        });
    }
    if let Some(t) = target.iter().find(|&&t| t != T::zero() && t != T::one()) {
        return Err(Error::InvalidArgument(format!("bce target {t:?} is not 0 or 1")));
    }
    let n = T::from_usize(predicted.len().max(1)).unwrap();
    let mut total = T::zero();
    for (&p, &t) in predicted.iter().zip(target) {
        let p = clamp_prob(p);
        total = total - (t * p.ln() + (T::one() - t) * (T::one() - p).ln());
    }
    let grad = predicted.iter().zip(target).map(|(&p, &t)| (p - t) / n).collect();
    Ok(LossValue {
        value: total / n,
        grad: Matrix::from_vec(predicted.len(), 1, grad)?,
    })
}

/// Binary cross-entropy against a constant target.
pub fn bce_const<T: Scalar>(predicted: &[T], target: T) -> Result<LossValue<T>> {
    bce(predicted, &vec![target; predicted.len()])
}

/// Mean cosine distance between paired rows; the gradient is with respect to `a`.
pub fn cdl<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, eps: T) -> Result<LossValue<T>> {
    check_shapes("cdl", a, b)?;
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument("cdl eps must be > 0".into()));
    }
    let n = T::from_usize(a.rows().max(1)).unwrap();
    let mut total = T::zero();
    let mut grad = Matrix::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        let (ar, br) = (a.row(i), b.row(i));
        let ab = dot(ar, br);
        let na = dot(ar, ar).sqrt();
        let nb = dot(br, br).sqrt();
        let denom = na * nb;
        let g = grad.row_mut(i);
        if denom > eps {
            let cos = ab / denom;
            total = total + (T::one() - cos);
            // d cos / d a = b / (|a||b|) - cos · a / |a|²
            for j in 0..ar.len() {
                g[j] = -(br[j] / denom - cos * ar[j] / (na * na)) / n;
            }
        } else {
            total = total + (T::one() - ab / eps);
            for j in 0..ar.len() {
                g[j] = -br[j] / eps / n;
            }
        }
    }
    Ok(LossValue {
        value: total / n,
        grad,
    })
}

/// Cosine similarity with the same norm floor as [`cdl`].
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> T {
    let denom = (dot(a, a).sqrt() * dot(b, b).sqrt()).max(T::lit(CDL_EPS));
    dot(a, b) / denom
}

/// Output of [`discriminator_loss`]; gradients are with respect to the
/// discriminator logits on the real and fake batches.
#[derive(Clone, Debug)]
pub struct DiscriminatorLoss<T = f32> {
    pub value: T,
    pub real: LossValue<T>,
    pub fake: LossValue<T>,
}

/// `BCE(real, 1) + BCE(fake, 0)`.
pub fn discriminator_loss<T: Scalar>(real_out: &[T], fake_out: &[T]) -> Result<DiscriminatorLoss<T>> {
    let real = bce_const(real_out, T::one())?;
    let fake = bce_const(fake_out, T::zero())?;
    Ok(DiscriminatorLoss {
        value: real.value + fake.value,
        real,
        fake,
    })
}

/// Per-term weights of the generator objective. The defaults (all 1) give
/// the plain unweighted sum; zero weights drop terms for ablations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub cosine: f64,
    pub discriminator: f64,
    pub classifier: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cosine: 1.0,
            discriminator: 1.0,
            classifier: 1.0,
        }
    }
}

/// Generator objective with its three components reported separately.
///
/// Component values are unweighted. Gradients already carry their weight:
/// `d_generated` is the cosine term's gradient with respect to the generated
/// features; `d_disc_logits` and `d_class_logits` are to be pushed back
/// through the (frozen) discriminator and classifier.
#[derive(Clone, Debug)]
pub struct GeneratorLoss<T = f32> {
    pub total: T,
    pub cosine: T,
    pub discriminator: T,
    pub classifier: T,
    pub d_generated: Matrix<T>,
    pub d_disc_logits: Matrix<T>,
    pub d_class_logits: Matrix<T>,
}

/// `w_cos·CDL(x̃, t) + w_disc·BCE(D(x̃), 1) + w_cls·CCE(C(x̃), y)`.
///
/// `class_out` holds softmax probabilities unless `sigmoid_classifier` is set.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss<T: Scalar>(
    generated: &Matrix<T>,
    true_embed: &Matrix<T>,
    disc_out: &[T],
    class_out: &Matrix<T>,
    labels: &[usize],
    weights: &LossWeights,
    sigmoid_classifier: bool,
) -> Result<GeneratorLoss<T>> {
    let n = generated.rows();
    if disc_out.len() != n || class_out.rows() != n || labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "generator loss batch sizes disagree: generated {n}, discriminator {}, classifier {}, labels {}",
            disc_out.len(),
            class_out.rows(),
            labels.len()
        )));
    }
    let cos = cdl(generated, true_embed, T::lit(CDL_EPS))?;
    let adv = bce_const(disc_out, T::one())?;
    let target = one_hot(labels, class_out.cols())?;
    let cls = if sigmoid_classifier {
        cce_sigmoid(class_out, &target)?
    } else {
        cce(class_out, &target)?
    };
    let (wc, wd, wl) = (
        T::lit(weights.cosine),
        T::lit(weights.discriminator),
        T::lit(weights.classifier),
    );
    Ok(GeneratorLoss {
        total: wc * cos.value + wd * adv.value + wl * cls.value,
        cosine: cos.value,
        discriminator: adv.value,
        classifier: cls.value,
        d_generated: cos.grad.scale(wc),
        d_disc_logits: adv.grad.scale(wd),
        d_class_logits: cls.grad.scale(wl),
    })
}
