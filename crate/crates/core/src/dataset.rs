//! Feature and semantic tables, their file formats, generator inputs, and the
//! synthetic benchmark.
//!
//! `FGF1` (labeled visual features), little-endian:
//!
//! ```text
//! "FGF1"  u32 dim  u64 record count
//! per record: u32 label, f32[dim]
//! ```
//!
//! `FGS1` (one vector per class, used for semantics and class means):
//!
//! ```text
//! "FGS1"  u32 dim  u32 class count
//! per class: u32 label, f32[dim]
//! ```
//!
//! Raw sentence vectors are text, one class per line:
//! `label<TAB>K<TAB>v11,v12,...<TAB>v21,...` with K comma-separated vectors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::binio::{len_u32, put_f32s, put_u32, put_u64, Reader};
use crate::error::{Error, FormatError, Result};
use crate::numerics::{norm, Matrix, Rng};

pub const FEATURE_MAGIC: [u8; 4] = *b"FGF1";
pub const SEMANTIC_MAGIC: [u8; 4] = *b"FGS1";

/// Mean of the noise added to visual features to form generator inputs.
pub const VISUAL_NOISE_MEAN: f32 = 0.1;
/// Variance of that noise (the standard deviation is its square root).
pub const VISUAL_NOISE_VAR: f32 = 0.28;

/// Labeled visual features of one split.
///
/// Labels form a contiguous range `min..min + n_classes`, so a class index
/// is `label - min`. Train and test splits use disjoint ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    labels: Vec<u32>,
    features: Matrix,
    index: BTreeMap<u32, Vec<usize>>,
}

impl FeatureTable {
    pub fn new(labels: Vec<u32>, features: Matrix) -> Result<Self> {
        if features.cols() == 0 {
            return Err(FormatError::ZeroDim.into());
        }
        if labels.len() != features.rows() {
            return Err(Error::Dim {
                what: "feature rows".into(),
                expected: labels.len(),
                actual: features.rows(),
            });
        }
        let mut index: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            index.entry(l).or_default().push(i);
        }
        if let (Some((&lo, _)), Some((&hi, _))) = (index.first_key_value(), index.last_key_value()) {
            if (hi - lo) as usize + 1 != index.len() {
                let missing: Vec<u32> = (lo..=hi).filter(|l| !index.contains_key(l)).take(8).collect();
                return Err(FormatError::NonDenseLabels(format!("range {lo}..={hi} is missing {missing:?}")).into());
            }
        }
        Ok(Self {
            labels,
            features,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Class labels in ascending order.
    pub fn classes(&self) -> Vec<u32> {
        self.index.keys().copied().collect()
    }

    pub fn class_count(&self) -> usize {
        self.index.len()
    }

    /// Smallest label, or 0 for an empty table.
    pub fn first_label(&self) -> u32 {
        self.index.keys().next().copied().unwrap_or(0)
    }

    /// Dense index of `label` within this split.
    pub fn class_index(&self, label: u32) -> Option<usize> {
        self.index.contains_key(&label).then(|| (label - self.first_label()) as usize)
    }

    /// Record positions belonging to `label`, in file order.
    pub fn rows_of(&self, label: u32) -> &[usize] {
        self.index.get(&label).map_or(&[], Vec::as_slice)
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        self.features.row(i)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.len() * (4 + 4 * self.dim()));
        out.extend_from_slice(&FEATURE_MAGIC);
        put_u32(&mut out, len_u32(self.dim(), "dim")?);
        put_u64(&mut out, self.len() as u64);
        for (i, &l) in self.labels.iter().enumerate() {
            put_u32(&mut out, l);
            put_f32s(&mut out, self.feature(i));
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(&FEATURE_MAGIC)?;
        let dim = r.u32("dim")? as usize;
        if dim == 0 {
            return Err(FormatError::ZeroDim.into());
        }
        let count = r.u64("record count")?;
        let record = 4 + 4 * dim as u64;
        if count.checked_mul(record).is_none_or(|need| need > r.remaining() as u64) {
            return Err(FormatError::Truncated(format!("{count} records of dim {dim}")).into());
        }
        let count = count as usize;
        let mut labels = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for i in 0..count {
            labels.push(r.u32("label")?);
            data.extend(r.f32s(dim, &format!("record {i}"))?);
        }
        r.finish()?;
        Self::new(labels, Matrix::from_vec(count, dim, data)?)
    }
}

pub fn save_features(table: &FeatureTable, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, table.encode()?)?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureTable> {
    FeatureTable::decode(&fs::read(path)?)
}

/// One vector per class label.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassVectors {
    dim: usize,
    vectors: BTreeMap<u32, Vec<f32>>,
}

/// Averaged class-level semantic vectors.
pub type SemanticTable = ClassVectors;
/// Per-class means of the visual features.
pub type EmbeddingTable = ClassVectors;

impl ClassVectors {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(FormatError::ZeroDim.into());
        }
        Ok(Self {
            dim,
            vectors: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, label: u32, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dim {
                what: format!("vector for class {label}"),
                expected: self.dim,
                actual: v.len(),
            });
        }
        if self.vectors.insert(label, v).is_some() {
            return Err(FormatError::DuplicateLabel(label).into());
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, label: u32) -> Option<&[f32]> {
        self.vectors.get(&label).map(Vec::as_slice)
    }

    pub fn labels(&self) -> Vec<u32> {
        self.vectors.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f32])> {
        self.vectors.iter().map(|(&l, v)| (l, v.as_slice()))
    }

    /// Errors with every label in `labels` that has no vector.
    pub fn require(&self, labels: &[u32], what: &'static str) -> Result<()> {
        let missing: Vec<u32> = labels.iter().copied().filter(|l| !self.vectors.contains_key(l)).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingClass { what, labels: missing })
        }
    }

    /// Stacks the vectors for `labels` into a matrix, one row each.
    pub fn rows_for(&self, labels: &[u32], what: &'static str) -> Result<Matrix> {
        self.require(labels, what)?;
        let mut data = Vec::with_capacity(labels.len() * self.dim);
        for l in labels {
            data.extend_from_slice(&self.vectors[l]);
        }
        Matrix::from_vec(labels.len(), self.dim, data)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(12 + self.len() * (4 + 4 * self.dim));
        out.extend_from_slice(&SEMANTIC_MAGIC);
        put_u32(&mut out, len_u32(self.dim, "dim")?);
        put_u32(&mut out, len_u32(self.len(), "class count")?);
        for (&l, v) in &self.vectors {
            put_u32(&mut out, l);
            put_f32s(&mut out, v);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(&SEMANTIC_MAGIC)?;
        let dim = r.u32("dim")? as usize;
        let count = r.u32("class count")? as usize;
        let mut out = Self::new(dim)?;
        if (count as u64) * (4 + 4 * dim as u64) > r.remaining() as u64 {
            return Err(FormatError::Truncated(format!("{count} classes of dim {dim}")).into());
        }
        for i in 0..count {
            let label = r.u32("label")?;
            out.insert(label, r.f32s(dim, &format!("class {i}"))?)?;
        }
        r.finish()?;
        Ok(out)
    }
}

pub fn save_class_vectors(table: &ClassVectors, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, table.encode()?)?;
    Ok(())
}

pub fn load_class_vectors(path: impl AsRef<Path>) -> Result<ClassVectors> {
    ClassVectors::decode(&fs::read(path)?)
}

/// Sentence vectors of one class before averaging.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSemantics {
    pub label: u32,
    pub sentences: Vec<Vec<f32>>,
}

/// Parses the tab-separated raw sentence format.
///
/// Blank lines and lines starting with `#` are ignored.
pub fn parse_raw_semantics(text: &str) -> Result<Vec<RawSemantics>> {
    let mut out = Vec::new();
    let mut dim = None;
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let err = |msg: String| Error::from(FormatError::Parse { line: line_no, msg });
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let label: u32 = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| err(format!("bad label: {e}")))?;
        let k: usize = fields
            .next()
            .ok_or_else(|| err("missing sentence count".into()))?
            .trim()
            .parse()
            .map_err(|e| err(format!("bad sentence count: {e}")))?;
        let mut sentences = Vec::with_capacity(k);
        for field in fields {
            let v = field
                .split(',')
                .map(|t| t.trim().parse::<f32>())
                .collect::<std::result::Result<Vec<f32>, _>>()
                .map_err(|e| err(format!("bad value: {e}")))?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(err("non-finite value".into()));
            }
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(err(format!("vector has {} values, expected {d}", v.len())));
                }
                _ => {}
            }
            sentences.push(v);
        }
        if sentences.len() != k {
            return Err(err(format!("declared {k} vectors, found {}", sentences.len())));
        }
        out.push(RawSemantics { label, sentences });
    }
    Ok(out)
}

pub fn format_raw_semantics(raw: &[RawSemantics]) -> String {
    let mut out = String::new();
    for r in raw {
        out.push_str(&format!("{}\t{}", r.label, r.sentences.len()));
        for s in &r.sentences {
            out.push('\t');
            let parts: Vec<String> = s.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&parts.join(","));
        }
        out.push('\n');
    }
    out
}

/// Per-class mean of the sentence vectors.
pub fn average_semantics(raw: &[RawSemantics]) -> Result<SemanticTable> {
    let dim = raw
        .iter()
        .find_map(|r| r.sentences.first().map(Vec::len))
        .ok_or_else(|| Error::InvalidArgument("no sentence vectors".into()))?;
    let mut table = ClassVectors::new(dim)?;
    for r in raw {
        if r.sentences.is_empty() {
            return Err(Error::InvalidArgument(format!("class {} has no sentence vectors", r.label)));
        }
        if let Some(bad) = r.sentences.iter().find(|s| s.len() != dim) {
            return Err(Error::Dim {
                what: format!("sentence vectors of class {}", r.label),
                expected: dim,
                actual: bad.len(),
            });
        }
        let mean = (0..dim)
            .map(|j| order_free_mean(r.sentences.iter().map(|s| s[j]).collect()))
            .collect();
        table.insert(r.label, mean)?;
    }
    Ok(table)
}

/// Mean of `values` that does not depend on their order.
fn order_free_mean(mut values: Vec<f32>) -> f32 {
    values.sort_by(f32::total_cmp);
    let sum: f64 = values.iter().map(|&v| f64::from(v)).sum();
    (sum / values.len() as f64) as f32
}

/// Mean feature of every class in `table`.
pub fn true_class_embeddings(table: &FeatureTable) -> Result<EmbeddingTable> {
    let mut out = ClassVectors::new(table.dim())?;
    for label in table.classes() {
        let rows = table.rows_of(label);
        let mean = (0..table.dim())
            .map(|j| order_free_mean(rows.iter().map(|&i| table.features[(i, j)]).collect()))
            .collect();
        out.insert(label, mean)?;
    }
    Ok(out)
}

/// How a generator input is built from a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InputMode {
    /// The class's normalized semantic vector.
    #[default]
    Textual,
    /// The sample's feature plus Gaussian noise.
    Visual,
    /// A normalized mix of the two, weighted by alpha.
    Blend,
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "textual" => Ok(Self::Textual),
            "visual" => Ok(Self::Visual),
            "blend" => Ok(Self::Blend),
            _ => Err(Error::InvalidArgument(format!("unknown input mode `{s}` (textual, visual, blend)"))),
        }
    }
}

impl std::fmt::Display for InputMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Textual => "textual",
            Self::Visual => "visual",
            Self::Blend => "blend",
        })
    }
}

/// `x` plus i.i.d. normal noise with mean 0.1 and variance 0.28.
pub fn make_visual_input(x: &Matrix, rng: &mut Rng) -> Result<Matrix> {
    let noise = rng.gaussian(f64::from(VISUAL_NOISE_MEAN), f64::from(VISUAL_NOISE_VAR).sqrt(), x.rows(), x.cols())?;
    x.zip_map(&noise, |a, n| a + n)
}

fn normalized(v: &[f32], what: &str) -> Result<Vec<f32>> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidArgument(format!("{what} has zero or non-finite norm")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// `alpha * s/|s| + (1 - alpha) * v/|v|`.
pub fn blend_inputs(s: &[f32], v: &[f32], alpha: f32) -> Result<Vec<f32>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if s.len() != v.len() {
        return Err(Error::Dim {
            what: "visual input for blending".into(),
            expected: s.len(),
            actual: v.len(),
        });
    }
    let s = normalized(s, "semantic vector")?;
    let v = normalized(v, "visual input")?;
    Ok(s.iter().zip(&v).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect())
}

/// Generator inputs for a batch of samples.
///
/// `visual` holds the samples' features (or whatever visual anchor the caller
/// uses); it is only read in visual and blend modes.
pub fn generator_inputs(
    mode: InputMode,
    alpha: f32,
    labels: &[u32],
    visual: &Matrix,
    semantics: &SemanticTable,
    rng: &mut Rng,
) -> Result<Matrix> {
    match mode {
        InputMode::Textual => {
            let s = semantics.rows_for(labels, "semantic vector")?;
            normalize_rows(&s, "semantic vector")
        }
        InputMode::Visual => make_visual_input(visual, rng),
        InputMode::Blend => {
            if semantics.dim() != visual.cols() {
                return Err(Error::Dim {
                    what: "visual dim for blended input".into(),
                    expected: semantics.dim(),
                    actual: visual.cols(),
                });
            }
            let s = semantics.rows_for(labels, "semantic vector")?;
            let v = make_visual_input(visual, rng)?;
            let mut data = Vec::with_capacity(s.rows() * s.cols());
            for i in 0..s.rows() {
                data.extend(blend_inputs(s.row(i), v.row(i), alpha)?);
            }
            Matrix::from_vec(s.rows(), s.cols(), data)
        }
    }
}

pub fn normalize_rows(m: &Matrix, what: &str) -> Result<Matrix> {
    let mut data = Vec::with_capacity(m.rows() * m.cols());
    for row in m.iter_rows() {
        data.extend(normalized(row, what)?);
    }
    Matrix::from_vec(m.rows(), m.cols(), data)
}

/// Parameters of the synthetic benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub train_classes: usize,
    pub test_classes: usize,
    pub per_class: usize,
    pub visual_dim: usize,
    pub semantic_dim: usize,
    /// Standard deviation of features around their class mean.
    pub sigma: f32,
    /// Seed of the fixed map from class means to semantic space.
    pub map_seed: u64,
    /// Standard deviation of the noise on each sentence vector.
    pub semantic_noise: f32,
    /// Sentence vectors per class, averaged into the semantic vector.
    pub sentences: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_classes: 20,
            test_classes: 10,
            per_class: 200,
            visual_dim: 64,
            semantic_dim: 64,
            sigma: 0.35,
            map_seed: 7,
            semantic_noise: 0.05,
            sentences: 3,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train classes", self.train_classes),
            ("test classes", self.test_classes),
            ("features per class", self.per_class),
            ("visual dim", self.visual_dim),
            ("semantic dim", self.semantic_dim),
            ("sentences per class", self.sentences),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if !(self.sigma >= 0.0) || !(self.semantic_noise >= 0.0) {
            return Err(Error::InvalidArgument("noise levels must be >= 0".into()));
        }
        if self.train_classes + self.test_classes > u32::MAX as usize {
            return Err(Error::InvalidArgument("too many classes".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub train: FeatureTable,
    pub test: FeatureTable,
    /// Sentence vectors for every class, train then test.
    pub raw_semantics: Vec<RawSemantics>,
    pub semantics: SemanticTable,
    /// The class means the features were drawn around.
    pub means: EmbeddingTable,
}

/// Draws a synthetic benchmark.
///
/// Class means are unit-norm Gaussian directions, features scatter around
/// them with standard deviation `sigma`, and each sentence vector is a fixed
/// orthogonal map of the class mean plus small noise. Train labels are
/// `0..train_classes`, test labels follow on.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let n_classes = spec.train_classes + spec.test_classes;
    let q = orthogonal_map(spec.semantic_dim, spec.visual_dim, &mut Rng::new(spec.map_seed))?;

    let mut mean_rng = Rng::stream(seed, 0);
    let mut means = ClassVectors::new(spec.visual_dim)?;
    for c in 0..n_classes {
        let mut mu = Vec::new();
        // a zero draw cannot be normalized; redraw (probability zero in practice)
        while !(norm(&mu) > 0.0) {
            mu = (0..spec.visual_dim).map(|_| mean_rng.standard_normal() as f32).collect();
        }
        let n = norm(&mu);
        means.insert(c as u32, mu.iter().map(|v| v / n).collect())?;
    }

    let mut feat_rng = Rng::stream(seed, 1);
    let mut split = |classes: std::ops::Range<usize>| -> Result<FeatureTable> {
        let mut labels = Vec::with_capacity(classes.len() * spec.per_class);
        let mut data = Vec::with_capacity(classes.len() * spec.per_class * spec.visual_dim);
        for c in classes {
            let mu = means.get(c as u32).expect("mean drawn above");
            for _ in 0..spec.per_class {
                labels.push(c as u32);
                data.extend(mu.iter().map(|m| m + spec.sigma * feat_rng.standard_normal() as f32));
            }
        }
        FeatureTable::new(labels.clone(), Matrix::from_vec(labels.len(), spec.visual_dim, data)?)
    };
    let train = split(0..spec.train_classes)?;
    let test = split(spec.train_classes..n_classes)?;

    let mut sem_rng = Rng::stream(seed, 2);
    let mut raw = Vec::with_capacity(n_classes);
    for (label, mu) in means.iter() {
        let projected: Vec<f32> = q.iter_rows().map(|row| row.iter().zip(mu).map(|(a, b)| a * b).sum()).collect();
        let sentences = (0..spec.sentences)
            .map(|_| {
                projected
                    .iter()
                    .map(|p| p + spec.semantic_noise * sem_rng.standard_normal() as f32)
                    .collect()
            })
            .collect();
        raw.push(RawSemantics { label, sentences });
    }
    let semantics = average_semantics(&raw)?;
    Ok(SyntheticData {
        train,
        test,
        raw_semantics: raw,
        semantics,
        means,
    })
}

/// A `rows x cols` matrix with orthonormal columns (or rows, when there are
/// fewer rows than columns), from Gram-Schmidt on Gaussian vectors.
fn orthogonal_map(rows: usize, cols: usize, rng: &mut Rng) -> Result<Matrix> {
    let (n_vec, len) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    while basis.len() < n_vec {
        let mut v: Vec<f64> = (0..len).map(|_| rng.standard_normal()).collect();
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut m = Matrix::zeros(rows, cols);
    for (k, b) in basis.iter().enumerate() {
        for (t, &x) in b.iter().enumerate() {
            if rows >= cols {
                m[(t, k)] = x as f32;
            } else {
                m[(k, t)] = x as f32;
            }
        }
    }
    Ok(m)
}
