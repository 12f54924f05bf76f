//! Labelled datasets, preprocessing into the encoding range, and the
//! resampling primitives used by the ensembles and cross-validation.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed, Stream};

/// Number of principal components kept by default.
pub const DEFAULT_PCA_COMPONENTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    num_features: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    preprocessing: Option<Preprocessing>,
}

impl LabeledDataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        let num_features = rows.first().map(Vec::len).unwrap_or(0);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != num_features) {
            return Err(Error::invalid(format!(
                "row {i} has {} features, expected {num_features}",
                r.len()
            )));
        }
        Self::from_flat(num_features, rows.into_iter().flatten().collect(), labels)
    }

    /// Row-major feature buffer of `labels.len()` rows.
    pub fn from_flat(num_features: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("dataset needs at least one row"));
        }
        if num_features == 0 {
            return Err(Error::invalid("dataset needs at least one feature"));
        }
        if features.len() != num_features * labels.len() {
            return Err(Error::invalid(format!(
                "{} feature values do not fill {} rows of {num_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("label {bad} is not binary")));
        }
        Ok(LabeledDataset { num_features, features, labels, preprocessing: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.num_features)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn preprocessing(&self) -> Option<&Preprocessing> {
        self.preprocessing.as_ref()
    }

    pub fn with_preprocessing(mut self, preprocessing: Option<Preprocessing>) -> Self {
        self.preprocessing = preprocessing;
        self
    }

    /// Rows at `indices`, in that order (duplicates allowed).
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(indices.len() * self.num_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            num_features: self.num_features,
            features,
            labels,
            preprocessing: self.preprocessing.clone(),
        }
    }

    /// Fraction of rows carrying the more common label.
    pub fn majority_rate(&self) -> f64 {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        ones.max(self.len() - ones) as f64 / self.len() as f64
    }

    pub fn majority_label(&self) -> u8 {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        u8::from(2 * ones >= self.len())
    }

    fn map_rows(&self, num_features: usize, mut f: impl FnMut(&[f64], &mut Vec<f64>)) -> LabeledDataset {
        let mut features = Vec::with_capacity(self.len() * num_features);
        for row in self.rows() {
            f(row, &mut features);
        }
        LabeledDataset {
            num_features,
            features,
            labels: self.labels.clone(),
            preprocessing: self.preprocessing.clone(),
        }
    }
}

/// Which CSV column holds the label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
    Last,
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "last" => LabelColumn::Last,
            _ => match s.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(s.to_string()),
            },
        })
    }
}

/// Reads a comma-separated file. Parse errors report 1-based line and
/// column numbers.
pub fn load_csv(path: &Path, label: &LabelColumn, has_header: bool) -> Result<LabeledDataset> {
    let io_err = |source: std::io::Error| Error::Io { path: path.to_path_buf(), source };
    let parse_err = |row: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };

    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(std::io::BufReader::new(file));

    let mut records = reader.records();
    let mut width: Option<usize> = None;
    let mut label_idx: Option<usize> = None;
    let mut line = 0usize;

    if has_header {
        line += 1;
        let header = match records.next() {
            Some(r) => r.map_err(|e| parse_err(1, 0, e.to_string()))?,
            None => return Err(parse_err(1, 0, "file is empty".into())),
        };
        width = Some(header.len());
        label_idx = Some(match label {
            LabelColumn::Name(name) => header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| parse_err(1, 0, format!("no column named {name:?}")))?,
            LabelColumn::Index(i) => *i,
            LabelColumn::Last => header.len() - 1,
        });
    } else if let LabelColumn::Name(name) = label {
        return Err(Error::invalid(format!(
            "label column {name:?} given by name but the file has no header"
        )));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in records {
        line += 1;
        let record = record.map_err(|e| parse_err(line, 0, e.to_string()))?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(parse_err(
                line,
                record.len().min(w) + 1,
                format!("expected {w} fields, found {}", record.len()),
            ));
        }
        let li = *label_idx.get_or_insert(match label {
            LabelColumn::Index(i) => *i,
            _ => w - 1,
        });
        if li >= w {
            return Err(Error::invalid(format!("label column {li} out of range for {w} columns")));
        }
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, col + 1, format!("not a number: {cell:?}")))?;
            if col == li {
                let l = match value {
                    0.0 => 0,
                    1.0 => 1,
                    _ => return Err(parse_err(line, col + 1, format!("unknown label {cell:?}"))),
                };
                labels.push(l);
            } else {
                if !value.is_finite() {
                    return Err(parse_err(line, col + 1, format!("non-finite value {cell:?}")));
                }
                features.push(value);
            }
        }
    }
    let w = width.unwrap_or(0);
    if labels.is_empty() {
        return Err(parse_err(line.max(1), 0, "no data rows".into()));
    }
    if w < 2 {
        return Err(parse_err(1, 0, "need at least one feature column besides the label".into()));
    }
    LabeledDataset::from_flat(w - 1, features, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaTransform {
    pub mean: Vec<f64>,
    /// `k` rows of length `n`, orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the sample covariance for the kept components, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

impl PcaTransform {
    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.explained_variance.len()];
        }
        self.explained_variance.iter().map(|v| v / self.total_variance).collect()
    }

    pub fn project(&self, x: &[f64], out: &mut Vec<f64>) {
        for c in &self.components {
            out.push(c.iter().zip(x).zip(&self.mean).map(|((ci, xi), mi)| ci * (xi - mi)).sum());
        }
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (zk, c) in z.iter().zip(&self.components) {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += zk * ci;
            }
        }
        x
    }

    pub fn transform(&self, dataset: &LabeledDataset) -> LabeledDataset {
        dataset.map_rows(self.num_components(), |row, out| self.project(row, out))
    }
}

/// Top-`k` eigenvectors of the sample covariance (denominator `m − 1`).
pub fn pca_fit(dataset: &LabeledDataset, k: usize) -> Result<PcaTransform> {
    let (m, n) = (dataset.len(), dataset.num_features());
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot keep {k} components of {n} features")));
    }
    if m < 2 {
        return Err(Error::invalid("PCA needs at least two rows"));
    }
    let mut mean = vec![0.0; n];
    for row in dataset.rows() {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);

    let centered = DMatrix::from_fn(m, n, |i, j| dataset.row(i)[j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (m as f64 - 1.0);
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        // Sign convention: largest-magnitude entry positive.
        let pivot = v.iter().copied().fold(0.0_f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaTransform { mean, components, explained_variance, total_variance })
}

/// Per-feature range used for the affine map onto `[0, π]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalingStats {
    pub fn fit(dataset: &LabeledDataset) -> Self {
        let n = dataset.num_features();
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for row in dataset.rows() {
            for j in 0..n {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
        ScalingStats { min, max }
    }

    /// Constant features map to π/2; values outside the fitted range are clamped.
    pub fn scale(&self, x: &[f64], out: &mut Vec<f64>) {
        for ((v, lo), hi) in x.iter().zip(&self.min).zip(&self.max) {
            let span = hi - lo;
            out.push(if span > 0.0 { ((v - lo) / span * PI).clamp(0.0, PI) } else { FRAC_PI_2 });
        }
    }
}

/// Affine per-feature map onto `[0, π]`. With `fit_stats = None` the range
/// is computed from `dataset` itself.
pub fn scale_to_encoding_range(dataset: &LabeledDataset, fit_stats: Option<&ScalingStats>) -> LabeledDataset {
    let stats = fit_stats.cloned().unwrap_or_else(|| ScalingStats::fit(dataset));
    let mut scaled = dataset.map_rows(dataset.num_features(), |row, out| stats.scale(row, out));
    let pca = dataset.preprocessing.as_ref().and_then(|p| p.pca.clone());
    scaled.preprocessing = Some(Preprocessing { pca, scaling: stats });
    scaled
}

/// Fitted preprocessing pipeline: optional PCA, then scaling onto `[0, π]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub pca: Option<PcaTransform>,
    pub scaling: ScalingStats,
}

impl Preprocessing {
    /// Fits on `train` only. `pca_components` is capped at the feature count.
    pub fn fit(train: &LabeledDataset, pca_components: Option<usize>) -> Result<Self> {
        let pca = match pca_components {
            Some(k) => Some(pca_fit(train, k.min(train.num_features()))?),
            None => None,
        };
        let projected = match &pca {
            Some(p) => p.transform(train),
            None => train.clone(),
        };
        Ok(Preprocessing { pca, scaling: ScalingStats::fit(&projected) })
    }

    pub fn input_features(&self) -> usize {
        match &self.pca {
            Some(p) => p.mean.len(),
            None => self.scaling.min.len(),
        }
    }

    pub fn output_features(&self) -> usize {
        self.scaling.min.len()
    }

    pub fn apply_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_features() {
            return Err(Error::invalid(format!(
                "expected {} raw features, got {}",
                self.input_features(),
                x.len()
            )));
        }
        let mut out = Vec::with_capacity(self.output_features());
        match &self.pca {
            Some(p) => {
                let mut z = Vec::with_capacity(p.num_components());
                p.project(x, &mut z);
                self.scaling.scale(&z, &mut out);
            }
            None => self.scaling.scale(x, &mut out),
        }
        Ok(out)
    }

    pub fn apply(&self, dataset: &LabeledDataset) -> Result<LabeledDataset> {
        if dataset.num_features() != self.input_features() {
            return Err(Error::invalid(format!(
                "expected {} raw features, got {}",
                self.input_features(),
                dataset.num_features()
            )));
        }
        let mut out = dataset.map_rows(self.output_features(), |row, buf| {
            match &self.pca {
                Some(p) => {
                    let mut z = Vec::with_capacity(p.num_components());
                    p.project(row, &mut z);
                    self.scaling.scale(&z, buf);
                }
                None => self.scaling.scale(row, buf),
            }
        });
        out.preprocessing = Some(self.clone());
        Ok(out)
    }
}

/// Per-row probability weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleWeights(Vec<f64>);

impl SampleWeights {
    pub fn uniform(m: usize) -> Self {
        SampleWeights(vec![1.0 / m as f64; m])
    }

    /// Accepts weights that already sum to one within 1e-9.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        validate_weights(&values)?;
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("weights sum to {sum}, expected 1")));
        }
        Ok(SampleWeights(values))
    }

    /// Divides by the total.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        validate_weights(&values)?;
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(Error::invalid(format!("cannot normalize weights with total {sum}")));
        }
        Ok(SampleWeights(values.into_iter().map(|w| w / sum).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn validate_weights(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid("weights must be non-empty"));
    }
    if let Some(bad) = values.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::invalid(format!("weight {bad} is not a nonnegative finite number")));
    }
    Ok(())
}

pub fn bootstrap_indices(m: usize, rng_seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(rng_seed);
    (0..m).map(|_| rng.random_range(0..m)).collect()
}

/// `m` rows drawn uniformly with replacement.
pub fn bootstrap_sample(dataset: &LabeledDataset, rng_seed: u64) -> LabeledDataset {
    dataset.select(&bootstrap_indices(dataset.len(), rng_seed))
}

pub fn weighted_indices(weights: &SampleWeights, rng_seed: u64) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(weights.as_slice())
        .map_err(|e| Error::invalid(format!("bad weights: {e}")))?;
    let mut rng = rng_from_seed(rng_seed);
    Ok((0..weights.len()).map(|_| dist.sample(&mut rng)).collect())
}

/// `m` rows drawn from the categorical distribution given by `weights`.
pub fn weighted_resample(
    dataset: &LabeledDataset,
    weights: &SampleWeights,
    rng_seed: u64,
) -> Result<LabeledDataset> {
    if weights.len() != dataset.len() {
        return Err(Error::invalid(format!(
            "{} weights for {} rows",
            weights.len(),
            dataset.len()
        )));
    }
    Ok(dataset.select(&weighted_indices(weights, rng_seed)?))
}

/// One shuffled half/half partition of row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

/// Five independent shuffles, each cut into two halves. For odd sizes the
/// first half holds the extra row.
pub fn five_by_two_folds(m: usize, rng_seed: u64) -> Result<Vec<FoldSplit>> {
    if m < 2 {
        return Err(Error::invalid(format!("5×2 folds need at least 2 rows, got {m}")));
    }
    Ok((0..5)
        .map(|r| {
            let mut idx: Vec<usize> = (0..m).collect();
            idx.shuffle(&mut rng_from_seed(derive_seed(rng_seed, Stream::Folds, r)));
            let second = idx.split_off(m.div_ceil(2));
            FoldSplit { first: idx, second }
        })
        .collect())
}

/// Uniform subsample without replacement; the whole set if `size >= len`.
pub fn subsample(dataset: &LabeledDataset, size: usize, rng_seed: u64) -> LabeledDataset {
    if size >= dataset.len() {
        return dataset.clone();
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut rng_from_seed(rng_seed));
    idx.truncate(size);
    idx.sort_unstable();
    dataset.select(&idx)
}
