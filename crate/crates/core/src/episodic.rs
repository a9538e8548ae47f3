//! N-way K-shot episodes with generator-augmented support centroids.
//!
//! Each episode draws `way` test classes and `shot + query` features per
//! class. A class's centroid is the support mean, optionally pulled toward
//! generated features: with the weighted rule it is
//! `(sum(x) + lambda * sum(g)) / (K + m * lambda)` for `m` generated
//! features, with the convex rule `(1 - lambda) * mean(x) + lambda * mean(g)`.
//! Queries go to the centroid with the highest cosine similarity.

use std::fmt::Write as _;

use crate::dataset::{blend_inputs, make_visual_input, normalize_rows, FeatureTable, InputMode, SemanticTable};
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::numerics::{dot, norm, Matrix, Rng};

pub const RESULTS_HEADER: &str = "way,shot,query,episodes,lambda,use_generator,accuracy,ci95";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CentroidRule {
    #[default]
    Weighted,
    Convex,
}

impl std::str::FromStr for CentroidRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(Self::Weighted),
            "convex" => Ok(Self::Convex),
            _ => Err(Error::InvalidArgument(format!("unknown centroid rule `{s}` (weighted, convex)"))),
        }
    }
}

impl std::fmt::Display for CentroidRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Weighted => "weighted",
            Self::Convex => "convex",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub episodes: usize,
    pub lambda: f32,
    pub use_generator: bool,
    pub seed: u64,
    /// Generated features per class and episode.
    pub generated: usize,
    pub rule: CentroidRule,
    /// How generator inputs are formed; should match how it was trained.
    pub input_mode: InputMode,
    pub alpha: f32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            way: 5,
            shot: 1,
            query: 15,
            episodes: 600,
            lambda: 0.5,
            use_generator: true,
            seed: 0,
            generated: 1,
            rule: CentroidRule::Weighted,
            input_mode: InputMode::Textual,
            alpha: 1.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.way < 2 {
            return bad(format!("way must be >= 2, got {}", self.way));
        }
        if self.shot == 0 || self.query == 0 || self.episodes == 0 {
            return bad("shot, query, and episodes must be >= 1".into());
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.rule == CentroidRule::Convex && self.lambda > 1.0 {
            return bad(format!("convex centroids need lambda <= 1, got {}", self.lambda));
        }
        if self.use_generator && self.generated == 0 {
            return bad("generated features per class must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        Ok(())
    }

    /// The same episodes without the generator.
    pub fn baseline(&self) -> Self {
        Self {
            use_generator: false,
            ..self.clone()
        }
    }
}

/// Record positions of one episode, grouped by episode class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub classes: Vec<u32>,
    /// `support[c]` holds the `shot` records of `classes[c]`.
    pub support: Vec<Vec<usize>>,
    pub query: Vec<Vec<usize>>,
}

impl Episode {
    /// Queries in class order with their episode class index.
    pub fn queries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.query.iter().enumerate().flat_map(|(c, q)| q.iter().map(move |&i| (c, i)))
    }
}

/// Checks that every class of `table` can fill an episode.
pub fn check_episode_table(table: &FeatureTable, cfg: &EvalConfig) -> Result<()> {
    if table.class_count() < cfg.way {
        return Err(Error::InvalidArgument(format!(
            "{}-way episodes need at least {} classes, table has {}",
            cfg.way,
            cfg.way,
            table.class_count()
        )));
    }
    let need = cfg.shot + cfg.query;
    let short: Vec<String> = table
        .classes()
        .into_iter()
        .filter(|&l| table.rows_of(l).len() < need)
        .map(|l| format!("{l} ({})", table.rows_of(l).len()))
        .collect();
    if !short.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "episodes need {need} features per class ({} shot + {} query); too few in class(es) {}",
            cfg.shot,
            cfg.query,
            short.join(", ")
        )));
    }
    Ok(())
}

pub fn sample_episode(table: &FeatureTable, cfg: &EvalConfig, rng: &mut Rng) -> Result<Episode> {
    check_episode_table(table, cfg)?;
    let all = table.classes();
    let classes: Vec<u32> = rng.sample_indices(all.len(), cfg.way).into_iter().map(|i| all[i]).collect();
    let mut support = Vec::with_capacity(cfg.way);
    let mut query = Vec::with_capacity(cfg.way);
    for &c in &classes {
        let rows = table.rows_of(c);
        let picked: Vec<usize> = rng
            .sample_indices(rows.len(), cfg.shot + cfg.query)
            .into_iter()
            .map(|i| rows[i])
            .collect();
        support.push(picked[..cfg.shot].to_vec());
        query.push(picked[cfg.shot..].to_vec());
    }
    Ok(Episode {
        classes,
        support,
        query,
    })
}

/// Generator inputs for `m` features per episode class.
///
/// Textual inputs are the normalized semantic vectors. Visual inputs take the
/// class's support mean as the feature the noise is added to.
pub fn episode_generator_inputs(
    episode: &Episode,
    table: &FeatureTable,
    semantics: &SemanticTable,
    cfg: &EvalConfig,
    rng: &mut Rng,
) -> Result<Matrix> {
    let m = cfg.generated;
    let labels: Vec<u32> = episode.classes.iter().flat_map(|&c| std::iter::repeat_n(c, m)).collect();
    if cfg.input_mode == InputMode::Textual {
        return normalize_rows(&semantics.rows_for(&labels, "semantic vector")?, "semantic vector");
    }
    let mut anchors = Matrix::zeros(labels.len(), table.dim());
    for (c, rows) in episode.support.iter().enumerate() {
        let mean = support_mean(table, rows);
        for j in 0..m {
            anchors.row_mut(c * m + j).copy_from_slice(&mean);
        }
    }
    let visual = make_visual_input(&anchors, rng)?;
    if cfg.input_mode == InputMode::Visual {
        return Ok(visual);
    }
    let s = semantics.rows_for(&labels, "semantic vector")?;
    let mut out = Matrix::zeros(labels.len(), s.cols());
    for i in 0..labels.len() {
        out.row_mut(i).copy_from_slice(&blend_inputs(s.row(i), visual.row(i), cfg.alpha)?);
    }
    Ok(out)
}

fn support_sum(table: &FeatureTable, rows: &[usize]) -> Vec<f32> {
    let mut sum = vec![0.0f32; table.dim()];
    for &i in rows {
        sum.iter_mut().zip(table.feature(i)).for_each(|(s, x)| *s += x);
    }
    sum
}

fn support_mean(table: &FeatureTable, rows: &[usize]) -> Vec<f32> {
    let k = rows.len() as f32;
    support_sum(table, rows).into_iter().map(|s| s / k).collect()
}

/// Centroid of one class from its support records and optional generated
/// features (`generated` rows all belong to this class).
///
/// With `generated = None` or `lambda = 0` this is the plain support mean,
/// bit for bit.
pub fn class_centroid(table: &FeatureTable, support: &[usize], generated: Option<&Matrix>, lambda: f32, rule: CentroidRule) -> Vec<f32> {
    let k = support.len() as f32;
    let sum = support_sum(table, support);
    let Some(g) = generated else {
        return sum.into_iter().map(|s| s / k).collect();
    };
    let m = g.rows() as f32;
    let g_sum = g.col_sums();
    match rule {
        CentroidRule::Weighted => {
            let w = k + m * lambda;
            sum.iter().zip(&g_sum).map(|(s, gs)| (s + lambda * gs) / w).collect()
        }
        CentroidRule::Convex => sum
            .iter()
            .zip(&g_sum)
            .map(|(s, gs)| (1.0 - lambda) * (s / k) + lambda * (gs / m))
            .collect(),
    }
}

/// Index of the centroid with the highest cosine similarity; ties go to the
/// lowest index.
pub fn classify(centroids: &Matrix, query: &[f32]) -> Result<usize> {
    let qn = norm(query);
    if !(qn > 0.0) {
        return Err(Error::InvalidArgument("query has zero norm".into()));
    }
    let mut best = (0, f32::NEG_INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let cn = norm(row);
        if !(cn > 0.0) {
            return Err(Error::InvalidArgument(format!("centroid {c} has zero norm")));
        }
        let sim = dot(row, query) / (cn * qn);
        if sim > best.1 {
            best = (c, sim);
        }
    }
    Ok(best.0)
}

pub fn classify_queries(centroids: &Matrix, queries: &Matrix) -> Result<Vec<usize>> {
    queries.iter_rows().map(|q| classify(centroids, q)).collect()
}

/// Everything computed for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub episode: Episode,
    /// One row per episode class.
    pub centroids: Matrix,
    /// Generated features, `generated` rows per class, when the generator ran.
    pub generated: Option<Matrix>,
    /// Predicted episode class index per query, in [`Episode::queries`] order.
    pub predictions: Vec<usize>,
    pub accuracy: f64,
}

/// Samples and scores episode `index` of `cfg`.
pub fn run_episode(
    table: &FeatureTable,
    semantics: Option<&SemanticTable>,
    bundle: Option<&ModelBundle>,
    cfg: &EvalConfig,
    index: usize,
) -> Result<EpisodeOutcome> {
    let mut rng = Rng::stream(cfg.seed, index as u64);
    let episode = sample_episode(table, cfg, &mut rng)?;
    let generated = if cfg.use_generator {
        let (bundle, semantics) = generator_parts(bundle, semantics)?;
        let inputs = episode_generator_inputs(&episode, table, semantics, cfg, &mut rng)?;
        Some(bundle.generate(&inputs)?)
    } else {
        None
    };
    let mut centroids = Matrix::zeros(cfg.way, table.dim());
    for (c, rows) in episode.support.iter().enumerate() {
        let g = generated
            .as_ref()
            .map(|g| g.select_rows(&(c * cfg.generated..(c + 1) * cfg.generated).collect::<Vec<_>>()));
        centroids
            .row_mut(c)
            .copy_from_slice(&class_centroid(table, rows, g.as_ref(), cfg.lambda, cfg.rule));
    }
    let mut predictions = Vec::new();
    let mut correct = 0usize;
    for (c, i) in episode.queries() {
        let p = classify(&centroids, table.feature(i))?;
        correct += usize::from(p == c);
        predictions.push(p);
    }
    let accuracy = 100.0 * correct as f64 / predictions.len() as f64;
    Ok(EpisodeOutcome {
        episode,
        centroids,
        generated,
        predictions,
        accuracy,
    })
}

fn generator_parts<'a>(
    bundle: Option<&'a ModelBundle>,
    semantics: Option<&'a SemanticTable>,
) -> Result<(&'a ModelBundle, &'a SemanticTable)> {
    match (bundle, semantics) {
        (Some(b), Some(s)) => Ok((b, s)),
        _ => Err(Error::InvalidArgument("generator augmentation needs a model and semantic vectors".into())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    /// Mean per-episode accuracy in percent.
    pub accuracy: f64,
    /// Half-width of the 95% confidence interval, in percent.
    pub ci95: f64,
    pub per_episode: Vec<f64>,
    pub predictions: Vec<Vec<usize>>,
}

/// Mean and 95% half-width `1.96 * s / sqrt(n)` with the sample standard
/// deviation `s`.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Runs `cfg.episodes` episodes. Episode `e` draws from RNG stream `e` of
/// `cfg.seed`, so arms sharing a seed see the same episodes.
pub fn evaluate(
    table: &FeatureTable,
    semantics: Option<&SemanticTable>,
    bundle: Option<&ModelBundle>,
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    cfg.validate()?;
    check_episode_table(table, cfg)?;
    if cfg.use_generator {
        let (bundle, semantics) = generator_parts(bundle, semantics)?;
        if bundle.d_visual() != table.dim() {
            return Err(Error::Dim {
                what: "generator output (visual dim)".into(),
                expected: table.dim(),
                actual: bundle.d_visual(),
            });
        }
        let input_dim = if cfg.input_mode == InputMode::Visual {
            table.dim()
        } else {
            semantics.dim()
        };
        if bundle.d_semantic() != input_dim {
            return Err(Error::Dim {
                what: format!("generator input for {} inputs", cfg.input_mode),
                expected: input_dim,
                actual: bundle.d_semantic(),
            });
        }
        if cfg.input_mode != InputMode::Visual {
            semantics.require(&table.classes(), "semantic vector")?;
        }
    }
    let mut per_episode = Vec::with_capacity(cfg.episodes);
    let mut predictions = Vec::with_capacity(cfg.episodes);
    for e in 0..cfg.episodes {
        let out = run_episode(table, semantics, bundle, cfg, e)?;
        per_episode.push(out.accuracy);
        predictions.push(out.predictions);
    }
    let (accuracy, ci95) = mean_ci95(&per_episode);
    Ok(EvalResult {
        accuracy,
        ci95,
        per_episode,
        predictions,
    })
}

/// One CSV row for `cfg` and its result (no header).
pub fn result_row(cfg: &EvalConfig, r: &EvalResult) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{},{},{},{},{},{},{:.4},{:.4}",
        cfg.way, cfg.shot, cfg.query, cfg.episodes, cfg.lambda, cfg.use_generator, r.accuracy, r.ci95
    );
    s
}
