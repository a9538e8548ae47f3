use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use featgen::dataset::{
    average_semantics, format_raw_semantics, load_class_vectors, load_features, make_synthetic, parse_raw_semantics,
    save_class_vectors, save_features, true_class_embeddings, ClassVectors, FeatureTable, InputMode, SemanticTable,
    SyntheticSpec, SEMANTIC_MAGIC,
};
use featgen::episodic::{class_centroid, evaluate, result_row, run_episode, EvalConfig, RESULTS_HEADER};
use featgen::losses::LossWeights;
use featgen::models::{load_checkpoint, save_checkpoint};
use featgen::numerics::Matrix;
use featgen::pca::Pca;
use featgen::training::{train as run_training, train_from, TrainConfig};
use featgen::FormatError;

use crate::config::{Manifest, Resolver};
use crate::{AblateArgs, CliError, EpisodeOpts, EvalArgs, ExportArgs, SynthArgs, TrainArgs, TrainOpts};

pub const ALPHA_HEADER: &str = "alpha,accuracy,ci95";
pub const EMBEDDING_HEADER: &str = "episode,label,kind,x,y,dist_to_true";
pub const DEFAULT_ALPHAS: [f32; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Which generator loss terms stay on; the rest get weight zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossMask {
    pub cosine: bool,
    pub discriminator: bool,
    pub classifier: bool,
}

impl Default for LossMask {
    fn default() -> Self {
        Self {
            cosine: true,
            discriminator: true,
            classifier: true,
        }
    }
}

impl LossMask {
    pub fn weights(&self) -> LossWeights {
        let w = |on: bool| if on { 1.0 } else { 0.0 };
        LossWeights {
            cosine: w(self.cosine),
            discriminator: w(self.discriminator),
            classifier: w(self.classifier),
        }
    }
}

impl FromStr for LossMask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut m = Self {
            cosine: false,
            discriminator: false,
            classifier: false,
        };
        for term in s.split(',').map(str::trim) {
            let slot = match term {
                "cosine" => &mut m.cosine,
                "discriminator" => &mut m.discriminator,
                "classifier" => &mut m.classifier,
                _ => return Err(format!("unknown loss term `{term}` (cosine, discriminator, classifier)")),
            };
            if *slot {
                return Err(format!("loss term `{term}` listed twice"));
            }
            *slot = true;
        }
        Ok(m)
    }
}

impl std::fmt::Display for LossMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let on: Vec<&str> = [
            (self.cosine, "cosine"),
            (self.discriminator, "discriminator"),
            (self.classifier, "classifier"),
        ]
        .into_iter()
        .filter_map(|(b, n)| b.then_some(n))
        .collect();
        f.write_str(&on.join(","))
    }
}

/// Reads FGS1 class vectors, or raw sentence vectors averaged per class.
pub fn load_semantics(path: &Path) -> Result<SemanticTable, CliError> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(&SEMANTIC_MAGIC) {
        return Ok(ClassVectors::decode(&bytes)?);
    }
    let text = String::from_utf8(bytes).map_err(|e| {
        featgen::Error::from(FormatError::Parse {
            line: 0,
            msg: format!("neither FGS1 nor UTF-8 text: {e}"),
        })
    })?;
    Ok(average_semantics(&parse_raw_semantics(&text)?)?)
}

fn finish_run(m: &mut Manifest, out: &Path, outputs: &[PathBuf], start: Instant) -> Result<(), CliError> {
    for o in outputs {
        m.add_output(o.clone());
    }
    let path = m.write(out, start.elapsed())?;
    println!("manifest: {}", path.display());
    Ok(())
}

fn train_config(r: &mut Resolver, opts: &TrainOpts, seed: u64) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        epochs: r.get("epochs", opts.epochs, d.epochs)?,
        batch_size: r.get("batch-size", opts.batch_size, d.batch_size)?,
        lr: r.get("lr", opts.lr, d.lr)?,
        loss_weights: r.get("loss-mask", opts.loss_mask, LossMask::default())?.weights(),
        seed,
        ..d
    })
}

fn eval_config(r: &mut Resolver, opts: &EpisodeOpts, seed: u64) -> Result<EvalConfig, CliError> {
    let d = EvalConfig::default();
    Ok(EvalConfig {
        way: r.get("way", opts.way, d.way)?,
        query: r.get("query", opts.query, d.query)?,
        lambda: r.get("lambda", opts.lambda, d.lambda)?,
        generated: r.get("generated", opts.generated, d.generated)?,
        rule: r.get("rule", opts.rule, d.rule)?,
        seed,
        ..d
    })
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let mut r = Resolver::new("synth", a.common.config.as_deref())?;
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        train_classes: r.get("classes-train", a.classes_train, d.train_classes)?,
        test_classes: r.get("classes-test", a.classes_test, d.test_classes)?,
        per_class: r.get("per-class", a.per_class, d.per_class)?,
        visual_dim: r.get("visual-dim", a.visual_dim, d.visual_dim)?,
        semantic_dim: r.get("semantic-dim", a.semantic_dim, d.semantic_dim)?,
        sigma: r.get("sigma", a.sigma, d.sigma)?,
        map_seed: r.get("map-seed", a.map_seed, d.map_seed)?,
        semantic_noise: r.get("semantic-noise", a.semantic_noise, d.semantic_noise)?,
        sentences: r.get("sentences", a.sentences, d.sentences)?,
    };
    let seed = r.get("seed", a.common.seed, 0)?;
    let out = r.path_or("out-dir", a.common.out_dir, ".")?;
    let mut m = r.finish()?;
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let data = make_synthetic(&spec, seed)?;
    fs::create_dir_all(&out)?;
    let outputs = [
        out.join("train.fgf"),
        out.join("test.fgf"),
        out.join("semantics.fgs"),
        out.join("semantics.txt"),
        out.join("means.fgs"),
    ];
    save_features(&data.train, &outputs[0])?;
    save_features(&data.test, &outputs[1])?;
    save_class_vectors(&data.semantics, &outputs[2])?;
    fs::write(&outputs[3], format_raw_semantics(&data.raw_semantics))?;
    save_class_vectors(&data.means, &outputs[4])?;
    println!(
        "wrote {} train and {} test features ({} + {} classes, d = {})",
        data.train.len(),
        data.test.len(),
        spec.train_classes,
        spec.test_classes,
        spec.visual_dim
    );
    finish_run(&mut m, &out, &outputs, start)
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let mut r = Resolver::new("train", a.common.config.as_deref())?;
    let features = r.path("features", a.features)?;
    let semantics = r.path("semantics", a.semantics)?;
    let warm_start = r.optional_path("warm-start", a.warm_start)?;
    let seed = r.get("seed", a.common.seed, 0)?;
    let mut cfg = train_config(&mut r, &a.opts, seed)?;
    cfg.mode = r.get("mode", a.mode, cfg.mode)?;
    cfg.alpha = r.get("alpha", a.alpha, cfg.alpha)?;
    cfg.checkpoint_interval = r.get("checkpoint-interval", a.checkpoint_interval, 0)?;
    let out = r.path_or("out-dir", a.common.out_dir, ".")?;
    let mut m = r.finish()?;

    let model_path = out.join("model.fgck");
    let metrics_path = out.join("metrics.csv");
    if cfg.checkpoint_interval > 0 {
        cfg.checkpoint_path = Some(model_path.clone());
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let table = load_features(&features)?;
    let sem = load_semantics(&semantics)?;
    fs::create_dir_all(&out)?;
    let (bundle, metrics) = match &warm_start {
        Some(p) => train_from(load_checkpoint(p)?, &table, &sem, &cfg)?,
        None => run_training(&table, &sem, &cfg)?,
    };
    save_checkpoint(&bundle, &model_path)?;
    fs::write(&metrics_path, metrics.to_csv())?;
    println!(
        "mean train-class cosine distance to true embeddings: {:.4} -> {:.4}",
        metrics.initial_cdl_to_true,
        metrics.final_cdl_to_true()
    );
    finish_run(&mut m, &out, &[model_path, metrics_path], start)
}

fn check_semantics_cover(table: &FeatureTable, sem: &SemanticTable, mode: InputMode) -> Result<(), CliError> {
    if mode != InputMode::Visual {
        sem.require(&table.classes(), "semantic vector")?;
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let mut r = Resolver::new("eval", a.common.config.as_deref())?;
    let checkpoint = r.path("checkpoint", a.checkpoint)?;
    let features = r.path("features", a.features)?;
    let semantics = r.path("semantics", a.semantics)?;
    let seed = r.get("seed", a.common.seed, 0)?;
    let mut base = eval_config(&mut r, &a.episode, seed)?;
    let shots = r.list("shot", a.shot, vec![1])?;
    base.episodes = r.get("episodes", a.episodes, base.episodes)?;
    base.input_mode = r.get("mode", a.mode, base.input_mode)?;
    base.alpha = r.get("alpha", a.alpha, base.alpha)?;
    let out = r.path_or("out-dir", a.common.out_dir, ".")?;
    let mut m = r.finish()?;
    for &shot in &shots {
        EvalConfig { shot, ..base.clone() }
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }

    let table = load_features(&features)?;
    let sem = load_semantics(&semantics)?;
    let bundle = load_checkpoint(&checkpoint)?;
    check_semantics_cover(&table, &sem, base.input_mode)?;
    let mut csv = format!("{RESULTS_HEADER}\n");
    for &shot in &shots {
        let cfg = EvalConfig { shot, ..base.clone() };
        let augmented = evaluate(&table, Some(&sem), Some(&bundle), &cfg)?;
        let baseline = evaluate(&table, None, None, &cfg.baseline())?;
        let _ = writeln!(csv, "{}", result_row(&cfg.baseline(), &baseline));
        let _ = writeln!(csv, "{}", result_row(&cfg, &augmented));
        println!(
            "{}-way {}-shot: baseline {:.2} +- {:.2}, augmented {:.2} +- {:.2}",
            cfg.way, shot, baseline.accuracy, baseline.ci95, augmented.accuracy, augmented.ci95
        );
    }
    fs::create_dir_all(&out)?;
    let results = out.join("results.csv");
    fs::write(&results, csv)?;
    finish_run(&mut m, &out, &[results], start)
}

pub fn ablate_alpha(a: AblateArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let mut r = Resolver::new("ablate-alpha", a.common.config.as_deref())?;
    let train_features = r.path("train-features", a.train_features)?;
    let test_features = r.path("test-features", a.test_features)?;
    let semantics = r.path("semantics", a.semantics)?;
    let seed = r.get("seed", a.common.seed, 0)?;
    let mut alphas = r.list("alpha", a.alphas, DEFAULT_ALPHAS.to_vec())?;
    let train_base = train_config(&mut r, &a.train, seed)?;
    let mut eval_base = eval_config(&mut r, &a.episode, seed)?;
    eval_base.shot = r.get("shot", a.shot, eval_base.shot)?;
    eval_base.episodes = r.get("episodes", a.episodes, eval_base.episodes)?;
    let out = r.path_or("out-dir", a.common.out_dir, ".")?;
    let mut m = r.finish()?;
    if alphas.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(CliError::Usage(format!("alpha values must lie in [0, 1], got {alphas:?}")));
    }
    alphas.sort_by(f32::total_cmp);
    alphas.dedup();
    train_base.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    eval_base.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let train_table = load_features(&train_features)?;
    let test_table = load_features(&test_features)?;
    let sem = load_semantics(&semantics)?;
    check_semantics_cover(&test_table, &sem, InputMode::Blend)?;
    fs::create_dir_all(&out)?;
    let mut outputs = Vec::new();
    let mut csv = format!("{ALPHA_HEADER}\n");
    for &alpha in &alphas {
        let cfg = TrainConfig {
            mode: InputMode::Blend,
            alpha,
            ..train_base.clone()
        };
        let (bundle, _) = run_training(&train_table, &sem, &cfg)?;
        let ckpt = out.join(format!("alpha_{alpha}.fgck"));
        save_checkpoint(&bundle, &ckpt)?;
        outputs.push(ckpt);
        let ecfg = EvalConfig {
            input_mode: InputMode::Blend,
            alpha,
            ..eval_base.clone()
        };
        let res = evaluate(&test_table, Some(&sem), Some(&bundle), &ecfg)?;
        let _ = writeln!(csv, "{alpha},{:.4},{:.4}", res.accuracy, res.ci95);
        println!("alpha {alpha}: {:.2} +- {:.2}", res.accuracy, res.ci95);
    }
    let table_path = out.join("alpha.csv");
    fs::write(&table_path, csv)?;
    outputs.push(table_path);
    finish_run(&mut m, &out, &outputs, start)
}

struct Point {
    episode: usize,
    label: u32,
    kind: &'static str,
    x: Vec<f32>,
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2)).sum::<f64>().sqrt()
}

pub fn export_embeddings(a: ExportArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let mut r = Resolver::new("export-embeddings", a.common.config.as_deref())?;
    let checkpoint = r.path("checkpoint", a.checkpoint)?;
    let features = r.path("features", a.features)?;
    let semantics = r.path("semantics", a.semantics)?;
    let means = r.optional_path("means", a.means)?;
    let seed = r.get("seed", a.common.seed, 0)?;
    let mut cfg = eval_config(&mut r, &a.episode, seed)?;
    cfg.shot = r.get("shot", a.shot, cfg.shot)?;
    cfg.input_mode = r.get("mode", a.mode, cfg.input_mode)?;
    cfg.alpha = r.get("alpha", a.alpha, cfg.alpha)?;
    let first = r.get("first-episode", a.first_episode, 0)?;
    let count = r.get("episodes", a.episodes, 1)?;
    let out = r.path_or("out-dir", a.common.out_dir, ".")?;
    let mut m = r.finish()?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if count == 0 {
        return Err(CliError::Usage("episodes must be >= 1".into()));
    }

    let table = load_features(&features)?;
    let sem = load_semantics(&semantics)?;
    let bundle = load_checkpoint(&checkpoint)?;
    let truth = match &means {
        Some(p) => load_class_vectors(p)?,
        None => true_class_embeddings(&table)?,
    };
    check_semantics_cover(&table, &sem, cfg.input_mode)?;
    truth.require(&table.classes(), "true class embedding")?;

    let mut points = Vec::new();
    let (mut closer, mut classes) = (0usize, 0usize);
    for e in first..first + count {
        let outcome = run_episode(&table, Some(&sem), Some(&bundle), &cfg, e)?;
        let generated = outcome.generated.as_ref().expect("generator arm always generates");
        for (c, &label) in outcome.episode.classes.iter().enumerate() {
            let support = &outcome.episode.support[c];
            let mut push = |kind, x: &[f32]| {
                points.push(Point {
                    episode: e,
                    label,
                    kind,
                    x: x.to_vec(),
                })
            };
            for &i in support {
                push("support-feature", table.feature(i));
            }
            for j in 0..cfg.generated {
                push("generated-feature", generated.row(c * cfg.generated + j));
            }
            let baseline = class_centroid(&table, support, None, cfg.lambda, cfg.rule);
            let augmented = outcome.centroids.row(c);
            let t = truth.get(label).expect("checked above");
            push("baseline-centroid", &baseline);
            push("augmented-centroid", augmented);
            push("true-embedding", t);
            classes += 1;
            closer += usize::from(euclidean(augmented, t) < euclidean(&baseline, t));
        }
    }
    let all = Matrix::from_vec(points.len(), table.dim(), points.iter().flat_map(|p| p.x.iter().copied()).collect())?;
    let pca = Pca::fit(&all, 2)?;
    let mut csv = format!("{EMBEDDING_HEADER}\n");
    for p in &points {
        let xy = pca.project(&p.x);
        let t = truth.get(p.label).expect("checked above");
        let _ = writeln!(
            csv,
            "{},{},{},{:.6},{:.6},{:.6}",
            p.episode,
            p.label,
            p.kind,
            xy[0],
            xy[1],
            euclidean(&p.x, t)
        );
    }
    fs::create_dir_all(&out)?;
    let path = out.join("embeddings.csv");
    fs::write(&path, csv)?;
    println!("augmented centroid closer to the true embedding for {closer}/{classes} classes");
    finish_run(&mut m, &out, &[path], start)
}
