//! Joint training of generator, discriminator, and classifier.
//!
//! Each batch runs three updates in order:
//!
//! 1. classifier on categorical cross-entropy over the real features;
//! 2. discriminator on real versus generated features, the generated batch
//!    treated as constant;
//! 3. generator on cosine distance to the true class embedding plus the
//!    adversarial and classification terms, with the discriminator and
//!    classifier frozen and normalizing with their running statistics.
//!
//! All randomness is keyed on the global step (the optimizers' shared step
//! counter), so training resumed from a checkpoint at any step continues
//! exactly as an uninterrupted run would.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::dataset::{generator_inputs, EmbeddingTable, FeatureTable, InputMode, SemanticTable};
use crate::error::{Error, Result};
use crate::losses::{cce, cce_sigmoid, cdl, discriminator_loss, generator_loss, one_hot, GeneratorLoss, LossWeights, CDL_EPS};
use crate::models::{init_models, save_checkpoint, Activation, ArchConfig, Forward, Mlp, MlpGrads, ModelBundle};
use crate::numerics::{Matrix, Mode, Rng, Scalar};

/// Stream id offset for the per-step noise streams; shuffles use `1 + epoch`
/// and initialization uses 0.
const NOISE_STREAM_BASE: u64 = 1 << 40;

pub const METRICS_HEADER: &str = "epoch,loss_c,loss_d,loss_g,loss_g_cdl,loss_g_bce,loss_g_cce,mean_cdl_to_true";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Weight of the semantic vector in blend mode.
    pub alpha: f32,
    pub mode: InputMode,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0 disables).
    pub checkpoint_interval: usize,
    pub checkpoint_path: Option<PathBuf>,
    /// Per-term generator loss weights; zero drops a term.
    pub loss_weights: LossWeights,
    /// Hidden widths; `None` scales them to the feature dimension.
    pub arch: Option<ArchConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            batch_size: 128,
            lr: 1e-4,
            alpha: 1.0,
            mode: InputMode::Textual,
            seed: 0,
            checkpoint_interval: 0,
            checkpoint_path: None,
            loss_weights: LossWeights::default(),
            arch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be >= 2 for batch normalization".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        let w = &self.loss_weights;
        if [w.cosine, w.discriminator, w.classifier].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("loss weights must be finite and >= 0".into()));
        }
        if self.checkpoint_interval > 0 && self.checkpoint_path.is_none() {
            return Err(Error::InvalidArgument("checkpoint interval set without a checkpoint path".into()));
        }
        Ok(())
    }
}

/// Loss values from one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub classifier: f32,
    pub discriminator: f32,
    pub generator: f32,
    pub generator_cdl: f32,
    pub generator_bce: f32,
    pub generator_cce: f32,
}

impl StepLosses {
    fn is_finite(&self) -> bool {
        [
            self.classifier,
            self.discriminator,
            self.generator,
            self.generator_cdl,
            self.generator_bce,
            self.generator_cce,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Means over one epoch's batches.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_c: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_g_cdl: f64,
    pub loss_g_bce: f64,
    pub loss_g_cce: f64,
    /// Mean cosine distance between each train class's generated feature
    /// and its true embedding, after the epoch.
    pub mean_cdl_to_true: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainMetrics {
    /// `mean_cdl_to_true` before the first step of this run.
    pub initial_cdl_to_true: f64,
    pub epochs: Vec<EpochMetrics>,
}

impl TrainMetrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                e.epoch, e.loss_c, e.loss_d, e.loss_g, e.loss_g_cdl, e.loss_g_bce, e.loss_g_cce, e.mean_cdl_to_true
            );
        }
        out
    }

    pub fn final_cdl_to_true(&self) -> f64 {
        self.epochs.last().map_or(self.initial_cdl_to_true, |e| e.mean_cdl_to_true)
    }
}

/// Classifier step on real features. Returns the loss.
pub fn classifier_update(bundle: &mut ModelBundle, x: &Matrix, classes: &[usize], lr: f32) -> Result<f32> {
    let net = &mut bundle.classifier;
    let fwd = net.mlp.forward(x, Mode::Train)?;
    let target = one_hot(classes, net.mlp.output_dim())?;
    let loss = if net.mlp.output_activation() == Activation::Sigmoid {
        cce_sigmoid(&fwd.output, &target)?
    } else {
        cce(&fwd.output, &target)?
    };
    let (_, grads) = net.mlp.backward(&fwd, &loss.grad, true)?;
    net.apply(&grads.expect("requested"), lr)?;
    Ok(loss.value)
}

/// Discriminator step on a real and a generated batch. Returns the loss.
///
/// Both halves go through one forward pass, so batch normalization sees
/// their union and the running statistics describe the same mixture the
/// generator step later evaluates against.
pub fn discriminator_update(bundle: &mut ModelBundle, real: &Matrix, generated: &Matrix, lr: f32) -> Result<f32> {
    let net = &mut bundle.discriminator;
    let n_real = real.rows();
    let joint = stack_rows(real, generated)?;
    let fwd = net.mlp.forward(&joint, Mode::Train)?;
    let (p_real, p_fake) = fwd.output.as_slice().split_at(n_real);
    let loss = discriminator_loss(p_real, p_fake)?;
    let mut d_logits = loss.real.grad.into_vec();
    d_logits.extend_from_slice(loss.fake.grad.as_slice());
    let (_, grads) = net.mlp.backward(&fwd, &Matrix::from_vec(joint.rows(), 1, d_logits)?, true)?;
    net.apply(&grads.expect("requested"), lr)?;
    Ok(loss.value)
}

fn stack_rows(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::Shape {
            op: "stack_rows",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut data = Vec::with_capacity((a.rows() + b.rows()) * a.cols());
    data.extend_from_slice(a.as_slice());
    data.extend_from_slice(b.as_slice());
    Matrix::from_vec(a.rows() + b.rows(), a.cols(), data)
}

/// Generator loss and parameter gradients for a generator forward pass,
/// with the discriminator and classifier in eval mode.
pub fn generator_gradient<T: Scalar>(
    generator: &Mlp<T>,
    g_fwd: &Forward<T>,
    discriminator: &Mlp<T>,
    classifier: &Mlp<T>,
    true_embed: &Matrix<T>,
    classes: &[usize],
    weights: &LossWeights,
) -> Result<(GeneratorLoss<T>, MlpGrads<T>)> {
    let generated = &g_fwd.output;
    let d_fwd = discriminator.forward_eval(generated)?;
    let c_fwd = classifier.forward_eval(generated)?;
    let loss = generator_loss(
        generated,
        true_embed,
        d_fwd.output.as_slice(),
        &c_fwd.output,
        classes,
        weights,
        classifier.output_activation() == Activation::Sigmoid,
    )?;
    let mut d_generated = loss.d_generated.clone();
    let (from_d, _) = discriminator.backward(&d_fwd, &loss.d_disc_logits, false)?;
    let (from_c, _) = classifier.backward(&c_fwd, &loss.d_class_logits, false)?;
    d_generated.add_scaled(&from_d, T::one())?;
    d_generated.add_scaled(&from_c, T::one())?;
    let (_, grads) = generator.backward(g_fwd, &d_generated, true)?;
    Ok((loss, grads.expect("requested")))
}

/// Generator step given its train-mode forward pass. Returns the loss.
pub fn generator_update(
    bundle: &mut ModelBundle,
    g_fwd: &Forward,
    true_embed: &Matrix,
    classes: &[usize],
    weights: &LossWeights,
    lr: f32,
) -> Result<GeneratorLoss> {
    let (loss, grads) = generator_gradient(
        &bundle.generator.mlp,
        g_fwd,
        &bundle.discriminator.mlp,
        &bundle.classifier.mlp,
        true_embed,
        classes,
        weights,
    )?;
    bundle.generator.apply(&grads, lr)?;
    Ok(loss)
}

/// One batch of the three updates.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    bundle: &mut ModelBundle,
    x: &Matrix,
    labels: &[u32],
    table: &FeatureTable,
    semantics: &SemanticTable,
    embeddings: &EmbeddingTable,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<StepLosses> {
    let classes = class_indices(table, labels)?;
    let true_embed = embeddings.rows_for(labels, "true class embedding")?;
    let input = generator_inputs(cfg.mode, cfg.alpha, labels, x, semantics, rng)?;

    let loss_c = classifier_update(bundle, x, &classes, cfg.lr)?;
    let g_fwd = bundle.generator.mlp.forward(&input, Mode::Train)?;
    let loss_d = discriminator_update(bundle, x, &g_fwd.output, cfg.lr)?;
    let g = generator_update(bundle, &g_fwd, &true_embed, &classes, &cfg.loss_weights, cfg.lr)?;
    Ok(StepLosses {
        classifier: loss_c,
        discriminator: loss_d,
        generator: g.total,
        generator_cdl: g.cosine,
        generator_bce: g.discriminator,
        generator_cce: g.classifier,
    })
}

fn class_indices(table: &FeatureTable, labels: &[u32]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            table.class_index(l).ok_or_else(|| Error::MissingClass {
                what: "training class",
                labels: vec![l],
            })
        })
        .collect()
}

/// Generator input used to probe each class outside of batches.
///
/// Textual mode uses the normalized semantic vector. Visual inputs replace
/// the noise with its mean, so the probe is deterministic.
pub fn class_probe_inputs(
    mode: InputMode,
    alpha: f32,
    labels: &[u32],
    semantics: &SemanticTable,
    anchors: &EmbeddingTable,
) -> Result<Matrix> {
    let a = anchors.rows_for(labels, "class anchor")?;
    let shifted = a.map(|v| v + crate::dataset::VISUAL_NOISE_MEAN);
    match mode {
        InputMode::Textual => generator_inputs(mode, alpha, labels, &a, semantics, &mut Rng::new(0)),
        InputMode::Visual => Ok(shifted),
        InputMode::Blend => {
            let s = semantics.rows_for(labels, "semantic vector")?;
            let mut data = Vec::with_capacity(s.rows() * s.cols());
            for i in 0..s.rows() {
                data.extend(crate::dataset::blend_inputs(s.row(i), shifted.row(i), alpha)?);
            }
            Matrix::from_vec(s.rows(), s.cols(), data)
        }
    }
}

/// Training state that can be advanced step by step.
pub struct Trainer<'a> {
    pub bundle: ModelBundle,
    table: &'a FeatureTable,
    semantics: &'a SemanticTable,
    embeddings: EmbeddingTable,
    cfg: TrainConfig,
    probe_labels: Vec<u32>,
    probe_inputs: Matrix,
    probe_targets: Matrix,
    /// Shuffled order of the epoch currently in progress.
    order: Option<(u64, Vec<usize>)>,
    pending: Vec<StepLosses>,
    pub metrics: TrainMetrics,
}

impl<'a> Trainer<'a> {
    /// Fresh networks initialized from `cfg.seed`.
    pub fn new(table: &'a FeatureTable, semantics: &'a SemanticTable, cfg: TrainConfig) -> Result<Self> {
        let arch = cfg.arch.clone().unwrap_or_else(|| ArchConfig::for_visual_dim(table.dim()));
        let bundle = init_models(
            table.dim(),
            semantics.dim(),
            table.class_count(),
            &arch,
            &mut Rng::stream(cfg.seed, 0),
        )?;
        Self::resume(bundle, table, semantics, cfg)
    }

    /// Continues from an existing bundle, e.g. a loaded checkpoint.
    ///
    /// The position in the schedule comes from the optimizer step counter,
    /// so a checkpoint written after `k` steps resumes at step `k`.
    pub fn resume(bundle: ModelBundle, table: &'a FeatureTable, semantics: &'a SemanticTable, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if table.is_empty() {
            return Err(Error::InvalidArgument("training table is empty".into()));
        }
        if table.len() < 2 {
            return Err(Error::InvalidArgument("training needs at least 2 records".into()));
        }
        check_dim("generator input (semantic dim)", bundle.d_semantic(), semantics.dim())?;
        check_dim("visual feature dim", bundle.d_visual(), table.dim())?;
        check_dim("classifier output (train classes)", bundle.c_train(), table.class_count())?;
        if cfg.mode != InputMode::Textual {
            check_dim("semantic dim (visual inputs feed the generator)", bundle.d_semantic(), table.dim())?;
        }
        let classes = table.classes();
        semantics.require(&classes, "semantic vector")?;
        let steps = [&bundle.generator, &bundle.discriminator, &bundle.classifier].map(|n| n.optimizer.step);
        if steps.iter().any(|&s| s != steps[0]) {
            return Err(Error::InvalidArgument(format!("optimizer step counters disagree: {steps:?}")));
        }
        let embeddings = crate::dataset::true_class_embeddings(table)?;
        let probe_inputs = class_probe_inputs(cfg.mode, cfg.alpha, &classes, semantics, &embeddings)?;
        let probe_targets = embeddings.rows_for(&classes, "true class embedding")?;
        let mut t = Self {
            bundle,
            table,
            semantics,
            embeddings,
            cfg,
            probe_labels: classes,
            probe_inputs,
            probe_targets,
            order: None,
            pending: Vec::new(),
            metrics: TrainMetrics::default(),
        };
        t.metrics.initial_cdl_to_true = t.mean_cdl_to_true()?;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    pub fn probe_labels(&self) -> &[u32] {
        &self.probe_labels
    }

    /// Batches per epoch; a final batch smaller than 2 is dropped.
    pub fn batches_per_epoch(&self) -> usize {
        let n = self.table.len();
        let bs = self.cfg.batch_size;
        n / bs + usize::from(n % bs >= 2)
    }

    /// Steps taken so far, including those before a resume.
    pub fn global_step(&self) -> u64 {
        self.bundle.generator.optimizer.step
    }

    /// Mean cosine distance from each train class's generated feature to its
    /// true embedding.
    pub fn mean_cdl_to_true(&self) -> Result<f64> {
        let g = self.bundle.generate(&self.probe_inputs)?;
        Ok(f64::from(cdl(&g, &self.probe_targets, CDL_EPS as f32)?.value))
    }

    /// Runs the next batch of the schedule.
    pub fn step(&mut self) -> Result<StepLosses> {
        let bpe = self.batches_per_epoch() as u64;
        let global = self.global_step();
        let (epoch, batch) = (global / bpe, (global % bpe) as usize);
        if self.order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut order: Vec<usize> = (0..self.table.len()).collect();
            Rng::stream(self.cfg.seed, 1 + epoch).shuffle(&mut order);
            self.order = Some((epoch, order));
            self.pending.clear();
        }
        let order = &self.order.as_ref().expect("set above").1;
        let bs = self.cfg.batch_size;
        let idx = &order[batch * bs..((batch + 1) * bs).min(order.len())];
        let x = self.table.features().select_rows(idx);
        let labels: Vec<u32> = idx.iter().map(|&i| self.table.labels()[i]).collect();
        let mut rng = Rng::stream(self.cfg.seed, NOISE_STREAM_BASE + global);
        let losses = train_step(
            &mut self.bundle,
            &x,
            &labels,
            self.table,
            self.semantics,
            &self.embeddings,
            &self.cfg,
            &mut rng,
        )?;
        if !losses.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: epoch as usize,
                batch,
            });
        }
        self.pending.push(losses);
        if batch as u64 + 1 == bpe {
            self.finish_epoch(epoch as usize)?;
        }
        Ok(losses)
    }

    fn finish_epoch(&mut self, epoch: usize) -> Result<()> {
        let n = self.pending.len() as f64;
        let mean = |f: fn(&StepLosses) -> f32| self.pending.iter().map(|s| f64::from(f(s))).sum::<f64>() / n;
        let row = EpochMetrics {
            epoch,
            loss_c: mean(|s| s.classifier),
            loss_d: mean(|s| s.discriminator),
            loss_g: mean(|s| s.generator),
            loss_g_cdl: mean(|s| s.generator_cdl),
            loss_g_bce: mean(|s| s.generator_bce),
            loss_g_cce: mean(|s| s.generator_cce),
            mean_cdl_to_true: self.mean_cdl_to_true()?,
        };
        self.pending.clear();
        self.metrics.epochs.push(row);
        let interval = self.cfg.checkpoint_interval;
        if interval > 0 && (epoch + 1).is_multiple_of(interval) {
            if let Some(path) = &self.cfg.checkpoint_path {
                save_checkpoint(&self.bundle, path)?;
            }
        }
        Ok(())
    }

    pub fn run_steps(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            self.step()?;
        }
        Ok(())
    }

    /// Runs until `cfg.epochs` epochs have completed in total.
    pub fn run(&mut self) -> Result<()> {
        let target = self.cfg.epochs as u64 * self.batches_per_epoch() as u64;
        while self.global_step() < target {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(self) -> (ModelBundle, TrainMetrics) {
        (self.bundle, self.metrics)
    }
}

fn check_dim(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dim {
            what: what.into(),
            expected,
            actual,
        });
    }
    Ok(())
}

/// Trains fresh networks for `cfg.epochs` epochs.
pub fn train(table: &FeatureTable, semantics: &SemanticTable, cfg: &TrainConfig) -> Result<(ModelBundle, TrainMetrics)> {
    let mut t = Trainer::new(table, semantics, cfg.clone())?;
    t.run()?;
    Ok(t.finish())
}

/// Continues training `bundle` (a warm start) up to `cfg.epochs` epochs in
/// total.
pub fn train_from(
    bundle: ModelBundle,
    table: &FeatureTable,
    semantics: &SemanticTable,
    cfg: &TrainConfig,
) -> Result<(ModelBundle, TrainMetrics)> {
    let mut t = Trainer::resume(bundle, table, semantics, cfg.clone())?;
    t.run()?;
    Ok(t.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic, SyntheticSpec, SyntheticData};
    use crate::numerics::gradcheck::grad_check_piecewise;

    fn toy_data(classes: usize) -> SyntheticData {
        let spec = SyntheticSpec {
            train_classes: classes,
            test_classes: 2,
            per_class: 10,
            visual_dim: 6,
            semantic_dim: 6,
            ..SyntheticSpec::default()
        };
        make_synthetic(&spec, 3).unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            lr: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1).validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..cfg(1) },
            TrainConfig { batch_size: 1, ..cfg(1) },
            TrainConfig { lr: -1.0, ..cfg(1) },
            TrainConfig { alpha: 1.5, ..cfg(1) },
            TrainConfig {
                checkpoint_interval: 3,
                ..cfg(1)
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn short_final_batch_is_dropped_only_below_two() {
        let data = toy_data(3);
        // 30 records
        let t = Trainer::new(&data.train, &data.semantics, TrainConfig { batch_size: 8, ..cfg(1) }).unwrap();
        assert_eq!(t.batches_per_epoch(), 4);
        let t = Trainer::new(&data.train, &data.semantics, TrainConfig { batch_size: 29, ..cfg(1) }).unwrap();
        assert_eq!(t.batches_per_epoch(), 1);
        let t = Trainer::new(&data.train, &data.semantics, TrainConfig { batch_size: 28, ..cfg(1) }).unwrap();
        assert_eq!(t.batches_per_epoch(), 2);
    }

    #[test]
    fn epoch_visits_every_record_once() {
        let data = toy_data(3);
        let mut t = Trainer::new(&data.train, &data.semantics, TrainConfig { batch_size: 10, ..cfg(1) }).unwrap();
        t.step().unwrap();
        let mut order = t.order.clone().unwrap().1;
        order.sort_unstable();
        assert_eq!(order, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn zero_learning_rate_changes_nothing_but_statistics() {
        let data = toy_data(2);
        let mut t = Trainer::new(&data.train, &data.semantics, TrainConfig { lr: 0.0, ..cfg(1) }).unwrap();
        let before: Vec<Vec<f32>> = [&t.bundle.generator, &t.bundle.discriminator, &t.bundle.classifier]
            .iter()
            .map(|n| n.mlp.flat_params())
            .collect();
        let first = t.step().unwrap();
        let after: Vec<Vec<f32>> = [&t.bundle.generator, &t.bundle.discriminator, &t.bundle.classifier]
            .iter()
            .map(|n| n.mlp.flat_params())
            .collect();
        assert_eq!(before, after);
        // the same batch again gives the same classifier loss
        let mut again = Trainer::new(&data.train, &data.semantics, TrainConfig { lr: 0.0, ..cfg(1) }).unwrap();
        assert_eq!(again.step().unwrap(), first);
    }

    #[test]
    fn each_update_touches_only_its_network() {
        let data = toy_data(3);
        let mut b = init_models(6, 6, 3, &ArchConfig::for_visual_dim(6), &mut Rng::new(1)).unwrap();
        let x = data.train.features().select_rows(&[0, 5, 12, 25]);
        let labels: Vec<u32> = [0usize, 5, 12, 25].iter().map(|&i| data.train.labels()[i]).collect();
        let classes = class_indices(&data.train, &labels).unwrap();
        let emb = crate::dataset::true_class_embeddings(&data.train).unwrap();
        let fp = |b: &ModelBundle| {
            [
                b.generator.mlp.fingerprint(),
                b.discriminator.mlp.fingerprint(),
                b.classifier.mlp.fingerprint(),
            ]
        };

        let h0 = fp(&b);
        classifier_update(&mut b, &x, &classes, 1e-2).unwrap();
        let h1 = fp(&b);
        assert_eq!((h1[0], h1[1]), (h0[0], h0[1]));
        assert_ne!(h1[2], h0[2]);

        let input = generator_inputs(InputMode::Textual, 1.0, &labels, &x, &data.semantics, &mut Rng::new(0)).unwrap();
        let g_fwd = b.generator.mlp.forward(&input, Mode::Train).unwrap();
        let h2 = fp(&b);
        discriminator_update(&mut b, &x, &g_fwd.output, 1e-2).unwrap();
        let h3 = fp(&b);
        assert_eq!((h3[0], h3[2]), (h2[0], h2[2]));
        assert_ne!(h3[1], h2[1]);

        let t = emb.rows_for(&labels, "t").unwrap();
        generator_update(&mut b, &g_fwd, &t, &classes, &LossWeights::default(), 1e-2).unwrap();
        let h4 = fp(&b);
        assert_eq!((h4[1], h4[2]), (h3[1], h3[2]));
        assert_ne!(h4[0], h3[0]);
    }

    #[test]
    fn generator_gradient_matches_finite_differences_on_two_class_toy() {
        let data = toy_data(2);
        for seed in 0..5 {
            let b = init_models(6, 6, 2, &ArchConfig::for_visual_dim(6), &mut Rng::new(seed)).unwrap();
            let (g, d, c) = (
                b.generator.mlp.cast::<f64>(),
                b.discriminator.mlp.cast::<f64>(),
                b.classifier.mlp.cast::<f64>(),
            );
            let idx: Vec<usize> = (0..20).step_by(2).collect();
            let labels: Vec<u32> = idx.iter().map(|&i| data.train.labels()[i]).collect();
            let classes = class_indices(&data.train, &labels).unwrap();
            // textual inputs give only two distinct rows, which leaves some
            // batchnorm columns with variance near eps; blend keeps rows distinct
            let input = generator_inputs(
                InputMode::Blend,
                0.5,
                &labels,
                &data.train.features().select_rows(&idx),
                &data.semantics,
                &mut Rng::new(seed),
            )
            .unwrap()
            .cast::<f64>();
            let emb = crate::dataset::true_class_embeddings(&data.train).unwrap();
            let t = emb.rows_for(&labels, "t").unwrap().cast::<f64>();
            let w = LossWeights::default();
            let fwd = g.clone().forward(&input, Mode::Train).unwrap();
            let (_, grads) = generator_gradient(&g, &fwd, &d, &c, &t, &classes, &w).unwrap();
            let analytic = grads.blocks.concat();
            let mut probe = g.clone();
            let r = grad_check_piecewise(
                |p| {
                    probe.set_flat_params(p).unwrap();
                    let f = probe.clone().forward(&input, Mode::Train).unwrap();
                    let d_out = d.forward_eval(&f.output).unwrap();
                    let c_out = c.forward_eval(&f.output).unwrap();
                    let loss = generator_loss(&f.output, &t, d_out.output.as_slice(), &c_out.output, &classes, &w, false)
                        .unwrap()
                        .total;
                    let piece = probe.kink_pattern(&f) ^ d.kink_pattern(&d_out).rotate_left(21) ^ c.kink_pattern(&c_out).rotate_left(42);
                    (loss, piece)
                },
                &g.flat_params(),
                &analytic,
                1e-4,
                None,
            );
            assert!(r.checked >= r.skipped * 4, "too few smooth coordinates: {} checked, {} skipped", r.checked, r.skipped);
            let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = r.max_rel_err_floored(1e-3 * scale);
            assert!(err <= 1e-4, "seed {seed}: {err:e} (scale {scale:e})");
        }
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let data = toy_data(3);
        let (a, ma) = train(&data.train, &data.semantics, &cfg(3)).unwrap();
        let (b, mb) = train(&data.train, &data.semantics, &cfg(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_eq!(ma.epochs.len(), 3);

        // stop mid-epoch, round-trip through a checkpoint, continue
        let mut t = Trainer::new(&data.train, &data.semantics, cfg(3)).unwrap();
        t.run_steps(5).unwrap();
        let bytes = crate::models::encode_checkpoint(&t.bundle).unwrap();
        let loaded = crate::models::decode_checkpoint(&bytes).unwrap();
        let (c, _) = train_from(loaded, &data.train, &data.semantics, &cfg(3)).unwrap();
        assert_eq!(c, a);
    }

    #[test]
    fn metrics_csv_shape() {
        let data = toy_data(2);
        let (_, m) = train(&data.train, &data.semantics, &cfg(2)).unwrap();
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,"));
        assert!(m.epochs.iter().all(|e| e.loss_g.is_finite() && e.mean_cdl_to_true.is_finite()));
    }

    #[test]
    fn missing_semantics_is_reported() {
        let data = toy_data(3);
        let mut partial = crate::dataset::ClassVectors::new(6).unwrap();
        partial.insert(0, data.semantics.get(0).unwrap().to_vec()).unwrap();
        match Trainer::new(&data.train, &partial, cfg(1)) {
            Err(Error::MissingClass { labels, .. }) => assert_eq!(labels, vec![1, 2]),
            other => panic!("{:?}", other.err()),
        }
    }

    #[test]
    fn loss_mask_zeroes_a_term() {
        let data = toy_data(2);
        let masked = TrainConfig {
            loss_weights: LossWeights {
                cosine: 0.0,
                ..LossWeights::default()
            },
            ..cfg(1)
        };
        let mut t = Trainer::new(&data.train, &data.semantics, masked).unwrap();
        let s = t.step().unwrap();
        assert_eq!(s.generator, s.generator_bce + s.generator_cce);
        assert!(s.generator_cdl > 0.0);
    }

    #[test]
    fn visual_and_blend_modes_train() {
        let data = toy_data(2);
        for mode in [InputMode::Visual, InputMode::Blend] {
            let (_, m) = train(&data.train, &data.semantics, &TrainConfig { mode, alpha: 0.5, ..cfg(1) }).unwrap();
            assert_eq!(m.epochs.len(), 1);
        }
    }
}
