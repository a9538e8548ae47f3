//! Generator, discriminator, and classifier networks.
//!
//! All three are fully connected stacks whose hidden layers are
//! `Linear -> BatchNorm -> LeakyReLU`:
//!
//! - generator: semantic input -> 2d -> 2d -> d, linear output
//! - discriminator: d -> d -> d/2 -> d/4 -> 1, sigmoid output
//! - classifier: d -> d -> d/2 -> C, softmax output (sigmoid optional)
//!
//! With `d = 512` this is 512->1024->1024->512, 512->512->256->128->1 and
//! 512->512->256->C. Every hidden width can be overridden through
//! [`ArchConfig`].

mod checkpoint;
mod mlp;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{Activation, Forward, Layer, LayerSpec, Mlp, MlpGrads, MlpSpec};

use crate::error::{Error, Result};
use crate::numerics::{AdamState, Matrix, Mode, Rng, Scalar};

/// Hidden widths and output head choice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    /// `Softmax` (default) or `Sigmoid` for the classifier head.
    pub classifier_output: Activation,
}

impl ArchConfig {
    /// Widths proportional to the visual feature dimension `d`.
    pub fn for_visual_dim(d: usize) -> Self {
        let d = d.max(1);
        Self {
            generator_hidden: vec![2 * d, 2 * d],
            discriminator_hidden: vec![d, (d / 2).max(1), (d / 4).max(1)],
            classifier_hidden: vec![d, (d / 2).max(1)],
            classifier_output: Activation::Softmax,
        }
    }

    pub fn generator_spec(&self, d_semantic: usize, d_visual: usize) -> Result<MlpSpec> {
        MlpSpec::hidden_bn_leaky(&widths(d_semantic, &self.generator_hidden, d_visual), Activation::None)
    }

    pub fn discriminator_spec(&self, d_visual: usize) -> Result<MlpSpec> {
        MlpSpec::hidden_bn_leaky(&widths(d_visual, &self.discriminator_hidden, 1), Activation::Sigmoid)
    }

    pub fn classifier_spec(&self, d_visual: usize, c_train: usize) -> Result<MlpSpec> {
        if !matches!(self.classifier_output, Activation::Softmax | Activation::Sigmoid) {
            return Err(Error::InvalidArgument(format!(
                "classifier output must be softmax or sigmoid, got {:?}",
                self.classifier_output
            )));
        }
        MlpSpec::hidden_bn_leaky(&widths(d_visual, &self.classifier_hidden, c_train), self.classifier_output)
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(input);
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// A network together with its optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    pub mlp: Mlp<T>,
    pub optimizer: AdamState<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new(mlp: Mlp<T>) -> Self {
        let optimizer = AdamState::new(&mlp.block_sizes());
        Self { mlp, optimizer }
    }

    /// Applies one Adam update from `grads`.
    pub fn apply(&mut self, grads: &MlpGrads<T>, lr: T) -> Result<()> {
        let names = self.mlp.block_names();
        let grad_refs: Vec<&[T]> = grads.blocks.iter().map(Vec::as_slice).collect();
        let mut params = self.mlp.param_blocks_mut();
        self.optimizer.step(&mut params, &grad_refs, &names, lr)
    }
}

/// Generator, discriminator, and classifier trained together.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub generator: Network,
    pub discriminator: Network,
    pub classifier: Network,
}

/// Builds freshly initialized networks.
pub fn init_models(d_visual: usize, d_semantic: usize, c_train: usize, arch: &ArchConfig, rng: &mut Rng) -> Result<ModelBundle> {
    if d_visual == 0 || d_semantic == 0 || c_train == 0 {
        return Err(Error::InvalidArgument(format!(
            "model dimensions must be >= 1 (visual {d_visual}, semantic {d_semantic}, classes {c_train})"
        )));
    }
    let generator = Mlp::init(&arch.generator_spec(d_semantic, d_visual)?, rng)?;
    let discriminator = Mlp::init(&arch.discriminator_spec(d_visual)?, rng)?;
    let classifier = Mlp::init(&arch.classifier_spec(d_visual, c_train)?, rng)?;
    let bundle = ModelBundle {
        generator: Network::new(generator),
        discriminator: Network::new(discriminator),
        classifier: Network::new(classifier),
    };
    bundle.validate()?;
    Ok(bundle)
}

impl ModelBundle {
    pub fn d_visual(&self) -> usize {
        self.generator.mlp.output_dim()
    }

    pub fn d_semantic(&self) -> usize {
        self.generator.mlp.input_dim()
    }

    pub fn c_train(&self) -> usize {
        self.classifier.mlp.output_dim()
    }

    pub fn sigmoid_classifier(&self) -> bool {
        self.classifier.mlp.output_activation() == Activation::Sigmoid
    }

    /// Checks that the three networks fit together.
    pub fn validate(&self) -> Result<()> {
        let d = self.d_visual();
        for (what, got) in [
            ("discriminator input", self.discriminator.mlp.input_dim()),
            ("classifier input", self.classifier.mlp.input_dim()),
        ] {
            if got != d {
                return Err(Error::Dim {
                    what: what.into(),
                    expected: d,
                    actual: got,
                });
            }
        }
        if self.discriminator.mlp.output_dim() != 1 || self.discriminator.mlp.output_activation() != Activation::Sigmoid {
            return Err(Error::InvalidArgument("discriminator must end in a single sigmoid unit".into()));
        }
        if self.generator.mlp.output_activation() != Activation::None {
            return Err(Error::InvalidArgument("generator output layer must be linear".into()));
        }
        if !matches!(self.classifier.mlp.output_activation(), Activation::Softmax | Activation::Sigmoid) {
            return Err(Error::InvalidArgument("classifier must end in softmax or sigmoid".into()));
        }
        Ok(())
    }

    /// Generated visual features for a batch of generator inputs.
    pub fn generator_forward(&mut self, input: &Matrix, mode: Mode) -> Result<Matrix> {
        Ok(self.generator.mlp.forward(input, mode)?.output)
    }

    /// Probability that each row is a real feature.
    pub fn discriminator_forward(&mut self, x: &Matrix, mode: Mode) -> Result<Vec<f32>> {
        Ok(self.discriminator.mlp.forward(x, mode)?.output.into_vec())
    }

    /// Class probabilities per row.
    pub fn classifier_forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        Ok(self.classifier.mlp.forward(x, mode)?.output)
    }

    /// Eval-mode generation without mutating the bundle.
    pub fn generate(&self, input: &Matrix) -> Result<Matrix> {
        self.generator.mlp.predict(input)
    }
}
