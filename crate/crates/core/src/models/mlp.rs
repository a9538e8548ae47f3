use crate::error::{Error, Result};
use crate::numerics::ops::DEFAULT_LEAKY_SLOPE;
use crate::numerics::{
    leaky_relu, leaky_relu_backward, matmul, matmul_nt, matmul_tn, sigmoid, softmax, BatchNorm, BatchNormCache,
    BatchStats, Matrix, Mode, Rng, Scalar,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    LeakyRelu,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::LeakyRelu => 1,
            Activation::Sigmoid => 2,
            Activation::Softmax => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::None,
            1 => Activation::LeakyRelu,
            2 => Activation::Sigmoid,
            3 => Activation::Softmax,
            _ => return None,
        })
    }

    fn is_output_only(self) -> bool {
        matches!(self, Activation::Sigmoid | Activation::Softmax)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub batchnorm: bool,
    pub activation: Activation,
}

/// Layer widths and per-layer flags of a fully connected network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub layers: Vec<LayerSpec>,
}

impl MlpSpec {
    /// Hidden layers are `Linear -> BatchNorm -> LeakyReLU`; the last layer is
    /// linear followed by `output`.
    pub fn hidden_bn_leaky(widths: &[usize], output: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument("an MLP needs at least input and output widths".into()));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                batchnorm: i != last,
                activation: if i == last { output } else { Activation::LeakyRelu },
            })
            .collect();
        let spec = Self { layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("MLP has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::InvalidArgument(format!("layer {i} has a zero dimension")));
            }
            if i + 1 < self.layers.len() && l.activation.is_output_only() {
                return Err(Error::InvalidArgument(format!(
                    "layer {i}: {:?} is only allowed on the output layer",
                    l.activation
                )));
            }
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::Dim {
                    what: format!("input of layer {}", i + 1),
                    expected: w[0].out_dim,
                    actual: w[1].in_dim,
                });
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Number of trainable scalars (weights, biases, batchnorm scale/shift).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_dim * l.out_dim + l.out_dim + if l.batchnorm { 2 * l.out_dim } else { 0 })
            .sum()
    }
}

/// One fully connected layer. `weight` is `in_dim x out_dim`, so a batch
/// maps as `x * weight + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T = f32> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub bn: Option<BatchNorm<T>>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn spec(&self) -> LayerSpec {
        LayerSpec {
            in_dim: self.weight.rows(),
            out_dim: self.weight.cols(),
            batchnorm: self.bn.is_some(),
            activation: self.activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T = f32> {
    pub layers: Vec<Layer<T>>,
    pub leaky_slope: T,
}

#[derive(Clone, Debug)]
struct LayerCache<T> {
    input: Matrix<T>,
    bn: Option<BatchNormCache<T>>,
    pre_activation: Matrix<T>,
}

/// Result of a forward pass. `logits` is the last layer's pre-activation,
/// `output` the activated result; backward passes start from the gradient
/// with respect to `logits`.
#[derive(Clone, Debug)]
pub struct Forward<T = f32> {
    pub logits: Matrix<T>,
    pub output: Matrix<T>,
    cache: Vec<LayerCache<T>>,
}

/// Parameter gradients, in the block order of [`Mlp::param_blocks`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads<T = f32> {
    pub blocks: Vec<Vec<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Fan-in scaled uniform initialization: weights and biases drawn from
    /// `U(-1/sqrt(in), 1/sqrt(in))`; batchnorm starts as the identity.
    pub fn init(spec: &MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                let bound = 1.0 / (l.in_dim as f64).sqrt();
                let mut draw = || T::lit(rng.uniform(-bound, bound));
                let weight = Matrix::from_vec(l.in_dim, l.out_dim, (0..l.in_dim * l.out_dim).map(|_| draw()).collect())?;
                let bias = (0..l.out_dim).map(|_| draw()).collect();
                Ok(Layer {
                    weight,
                    bias,
                    bn: l.batchnorm.then(|| BatchNorm::new(l.out_dim)),
                    activation: l.activation,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            leaky_slope: T::lit(DEFAULT_LEAKY_SLOPE),
        })
    }

    pub fn spec(&self) -> MlpSpec {
        MlpSpec {
            layers: self.layers.iter().map(Layer::spec).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.cols()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    /// Forward pass; train mode folds batch statistics into running stats.
    pub fn forward(&mut self, x: &Matrix<T>, mode: Mode) -> Result<Forward<T>> {
        let (fwd, stats) = self.run(x, mode)?;
        for (layer, s) in self.layers.iter_mut().zip(stats) {
            if let (Some(bn), Some(s)) = (layer.bn.as_mut(), s) {
                bn.update_running(&s);
            }
        }
        Ok(fwd)
    }

    /// Eval-mode forward pass; a pure function of weights and input.
    pub fn forward_eval(&self, x: &Matrix<T>) -> Result<Forward<T>> {
        Ok(self.run(x, Mode::Eval)?.0)
    }

    /// Activated output in eval mode.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward_eval(x)?.output)
    }

    fn run(&self, x: &Matrix<T>, mode: Mode) -> Result<(Forward<T>, Vec<Option<BatchStats<T>>>)> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dim {
                what: "network input".into(),
                expected: self.input_dim(),
                actual: x.cols(),
            });
        }
        let mut cache = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = matmul(&h, &layer.weight)?;
            z.add_row_vector(&layer.bias)?;
            let (z, bn_cache) = match &layer.bn {
                Some(bn) => {
                    let (y, c, s) = bn.normalize(&z, mode)?;
                    stats.push(s);
                    (y, Some(c))
                }
                None => {
                    stats.push(None);
                    (z, None)
                }
            };
            let out = match layer.activation {
                Activation::None => z.clone(),
                Activation::LeakyRelu => leaky_relu(&z, self.leaky_slope),
                Activation::Sigmoid => sigmoid(&z),
                Activation::Softmax => softmax(&z),
            };
            cache.push(LayerCache {
                input: std::mem::replace(&mut h, out),
                bn: bn_cache,
                pre_activation: z,
            });
        }
        let logits = cache.last().expect("at least one layer").pre_activation.clone();
        Ok((
            Forward {
                logits,
                output: h,
                cache,
            },
            stats,
        ))
    }

    /// Backpropagates `d_logits` (gradient w.r.t. the last pre-activation).
    ///
    /// Returns the input gradient and, when `param_grads` is set, the
    /// parameter gradients.
    pub fn backward(&self, fwd: &Forward<T>, d_logits: &Matrix<T>, param_grads: bool) -> Result<(Matrix<T>, Option<MlpGrads<T>>)> {
        if d_logits.shape() != fwd.logits.shape() {
            return Err(Error::Shape {
                op: "mlp_backward",
                left: fwd.logits.shape(),
                right: d_logits.shape(),
            });
        }
        let mut per_layer: Vec<Vec<Vec<T>>> = Vec::with_capacity(self.layers.len());
        let mut d = d_logits.clone();
        for (i, (layer, c)) in self.layers.iter().zip(&fwd.cache).enumerate().rev() {
            if i + 1 < self.layers.len() && layer.activation == Activation::LeakyRelu {
                d = leaky_relu_backward(&c.pre_activation, &d, self.leaky_slope)?;
            }
            let mut bn_blocks = None;
            if let (Some(bn), Some(bc)) = (&layer.bn, &c.bn) {
                let g = bn.backward(bc, &d)?;
                bn_blocks = Some((g.d_gamma, g.d_beta));
                d = g.d_input;
            }
            if param_grads {
                let mut blocks = vec![matmul_tn(&c.input, &d)?.into_vec(), d.col_sums()];
                if let Some((gg, gb)) = bn_blocks {
                    blocks.push(gg);
                    blocks.push(gb);
                }
                per_layer.push(blocks);
            }
            d = matmul_nt(&d, &layer.weight)?;
        }
        let grads = param_grads.then(|| MlpGrads {
            blocks: per_layer.into_iter().rev().flatten().collect(),
        });
        Ok((d, grads))
    }

    /// Trainable blocks: per layer weight, bias, then batchnorm gamma and beta.
    pub fn param_blocks(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
            if let Some(bn) = &l.bn {
                out.push(bn.gamma.as_slice());
                out.push(bn.beta.as_slice());
            }
        }
        out
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
            if let Some(bn) = &mut l.bn {
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push(format!("layer{i}.weight"));
            out.push(format!("layer{i}.bias"));
            if l.bn.is_some() {
                out.push(format!("layer{i}.bn.gamma"));
                out.push(format!("layer{i}.bn.beta"));
            }
        }
        out
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.param_blocks().iter().map(|b| b.len()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.block_sizes().iter().sum()
    }

    /// Flattened copy of all trainable parameters.
    pub fn flat_params(&self) -> Vec<T> {
        self.param_blocks().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dim {
                what: "flat parameter vector".into(),
                expected: self.param_count(),
                actual: flat.len(),
            });
        }
        let mut off = 0;
        for block in self.param_blocks_mut() {
            block.copy_from_slice(&flat[off..off + block.len()]);
            off += block.len();
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.cast(),
                    bias: l.bias.iter().map(|v| U::from(*v).unwrap()).collect(),
                    bn: l.bn.as_ref().map(BatchNorm::cast),
                    activation: l.activation,
                })
                .collect(),
            leaky_slope: U::from(self.leaky_slope).unwrap(),
        }
    }
}

impl<T: Scalar> Mlp<T> {
    /// Signature of the piece of the piecewise-linear activations a forward
    /// pass landed on: a hash of the sign of every leaky ReLU input.
    pub fn kink_pattern(&self, fwd: &Forward<T>) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (layer, c) in self.layers.iter().zip(&fwd.cache) {
            if layer.activation == Activation::LeakyRelu {
                for v in c.pre_activation.as_slice() {
                    (*v > T::zero()).hash(&mut h);
                }
            }
        }
        h.finish()
    }
}

impl Mlp<f32> {
    /// Hash over the exact bits of every parameter and running statistic.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for l in &self.layers {
            for v in l.weight.as_slice().iter().chain(&l.bias) {
                v.to_bits().hash(&mut h);
            }
            if let Some(bn) = &l.bn {
                for v in bn.gamma.iter().chain(&bn.beta).chain(&bn.running_mean).chain(&bn.running_var) {
                    v.to_bits().hash(&mut h);
                }
            }
        }
        h.finish()
    }
}
