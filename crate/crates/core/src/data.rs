//! Labeled datasets, built-in desk benchmarks, CSV ingestion, stratified
//! splitting and standardization.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::seed::{derive_seed, rng_from, standard_normal, Fingerprint};

/// Variance floor applied before dividing by the standard deviation.
pub const VARIANCE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample<T> {
    pub features: Vec<T>,
    pub label: usize,
}

impl<T> LabeledSample<T> {
    pub fn new(features: Vec<T>, label: usize) -> Self {
        Self { features, label }
    }
}

/// Ordered collection of samples sharing a class count and feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    samples: Vec<LabeledSample<T>>,
    num_classes: usize,
    feature_dim: usize,
}

impl<T: Real> Dataset<T> {
    pub fn new(
        num_classes: usize,
        feature_dim: usize,
        samples: Vec<LabeledSample<T>>,
    ) -> Result<Self> {
        if num_classes == 0 || feature_dim == 0 {
            return Err(config_err("num_classes and feature_dim must be positive"));
        }
        for (i, s) in samples.iter().enumerate() {
            check_sample(s, num_classes, feature_dim)
                .map_err(|e| config_err(format!("sample {i}: {e}")))?;
        }
        Ok(Self {
            samples,
            num_classes,
            feature_dim,
        })
    }

    pub fn empty(num_classes: usize, feature_dim: usize) -> Self {
        assert!(num_classes > 0 && feature_dim > 0);
        Self {
            samples: Vec::new(),
            num_classes,
            feature_dim,
        }
    }

    pub fn push(&mut self, sample: LabeledSample<T>) -> Result<()> {
        check_sample(&sample, self.num_classes, self.feature_dim).map_err(config_err)?;
        self.samples.push(sample);
        Ok(())
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[LabeledSample<T>] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledSample<T>> {
        self.samples.iter()
    }

    pub fn into_samples(self) -> Vec<LabeledSample<T>> {
        self.samples
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Sample indices grouped by class, each group in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, s) in self.samples.iter().enumerate() {
            groups[s.label].push(i);
        }
        groups
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Features of the selected samples stacked into a matrix.
    pub fn feature_matrix(&self, indices: &[usize]) -> Matrix<T> {
        let mut data = Vec::with_capacity(indices.len() * self.feature_dim);
        for &i in indices {
            data.extend_from_slice(&self.samples[i].features);
        }
        Matrix::from_vec(indices.len(), self.feature_dim, data)
    }

    /// 64-bit hash of the serialized sample stream.
    pub fn fingerprint(&self) -> u64 {
        let mut fp = Fingerprint::new("dataset");
        fp.u64(self.num_classes as u64)
            .u64(self.feature_dim as u64)
            .u64(self.samples.len() as u64);
        for s in &self.samples {
            fp.u64(s.label as u64);
            for &x in &s.features {
                fp.real(x);
            }
        }
        fp.finish()
    }

    /// Concatenates two datasets with matching shape.
    pub fn concat(mut self, other: Dataset<T>) -> Result<Self> {
        if self.num_classes != other.num_classes || self.feature_dim != other.feature_dim {
            return Err(config_err("cannot concatenate datasets of different shape"));
        }
        self.samples.extend(other.samples);
        Ok(self)
    }
}

fn check_sample<T>(s: &LabeledSample<T>, num_classes: usize, feature_dim: usize) -> Result<(), String> {
    if s.features.len() != feature_dim {
        return Err(format!(
            "expected {feature_dim} features, found {}",
            s.features.len()
        ));
    }
    if s.label >= num_classes {
        return Err(format!("label {} out of range for {num_classes} classes", s.label));
    }
    Ok(())
}

/// Isotropic Gaussian blobs, `per_class` samples around each center.
pub fn make_blobs<T: Real>(
    classes: usize,
    per_class: usize,
    centers: &[Vec<T>],
    spreads: &[T],
    seed: u64,
) -> Result<Dataset<T>> {
    if classes == 0 || per_class == 0 {
        return Err(config_err("make_blobs: classes and per_class must be positive"));
    }
    if centers.len() != classes || spreads.len() != classes {
        return Err(config_err(format!(
            "make_blobs: expected {classes} centers and spreads, got {} and {}",
            centers.len(),
            spreads.len()
        )));
    }
    let dim = centers[0].len();
    if dim == 0 || centers.iter().any(|c| c.len() != dim) {
        return Err(config_err("make_blobs: centers must share a positive dimension"));
    }
    if spreads.iter().any(|s| *s < T::zero() || !s.is_finite()) {
        return Err(config_err("make_blobs: spreads must be finite and non-negative"));
    }
    let mut rng = rng_from(derive_seed(seed, "blobs", &[]));
    let mut samples = Vec::with_capacity(classes * per_class);
    for (label, (center, &spread)) in centers.iter().zip(spreads).enumerate() {
        for _ in 0..per_class {
            let features = center
                .iter()
                .map(|&c| c + spread * standard_normal::<T>(&mut rng))
                .collect();
            samples.push(LabeledSample::new(features, label));
        }
    }
    Dataset::new(classes, dim, samples)
}

/// Concentric noisy rings in the plane; class `c` sits at radius `radii[c]`.
pub fn make_rings<T: Real>(
    classes: usize,
    per_class: usize,
    radii: &[T],
    noise: T,
    seed: u64,
) -> Result<Dataset<T>> {
    if classes == 0 || per_class == 0 {
        return Err(config_err("make_rings: classes and per_class must be positive"));
    }
    if radii.len() != classes {
        return Err(config_err(format!(
            "make_rings: expected {classes} radii, got {}",
            radii.len()
        )));
    }
    if radii.iter().any(|r| !(*r > T::zero())) || radii.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(config_err("make_rings: radii must be positive and strictly increasing"));
    }
    if !(noise >= T::zero()) {
        return Err(config_err("make_rings: noise must be non-negative"));
    }
    let mut rng = rng_from(derive_seed(seed, "rings", &[]));
    let two_pi = T::lit(std::f64::consts::TAU);
    let mut samples = Vec::with_capacity(classes * per_class);
    for (label, &radius) in radii.iter().enumerate() {
        for _ in 0..per_class {
            let angle = T::lit(rng.random::<f64>()) * two_pi;
            let r = radius + noise * standard_normal::<T>(&mut rng);
            samples.push(LabeledSample::new(vec![r * angle.cos(), r * angle.sin()], label));
        }
    }
    Dataset::new(classes, 2, samples)
}

/// Reads a header-free `label,f1,...,fd` file.
pub fn load_csv<T: Real>(
    path: impl AsRef<Path>,
    num_classes: usize,
    feature_dim: usize,
) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let ingest = |line: u64, message: String| Error::Ingest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest(0, e.to_string()))?;
    let mut samples = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader
            .read_record(&mut record)
            .map_err(|e| ingest(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != feature_dim + 1 {
            return Err(ingest(
                line,
                format!("expected {} columns, found {}", feature_dim + 1, record.len()),
            ));
        }
        let label: usize = record[0]
            .parse()
            .map_err(|_| ingest(line, format!("invalid label {:?}", &record[0])))?;
        if label >= num_classes {
            return Err(ingest(
                line,
                format!("label {label} out of range for {num_classes} classes"),
            ));
        }
        let features = record
            .iter()
            .skip(1)
            .map(|field| {
                field
                    .parse::<T>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ingest(line, format!("invalid number {field:?}")))
            })
            .collect::<Result<Vec<T>>>()?;
        samples.push(LabeledSample::new(features, label));
    }
    Dataset::new(num_classes, feature_dim, samples)
}

/// Writes the dataset in the format read by [`load_csv`].
///
/// Numbers use the shortest representation that parses back to the same
/// value, so load → write → load is lossless.
pub fn write_csv<T: Real>(dataset: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in dataset.iter() {
        write!(out, "{}", s.label)?;
        for x in &s.features {
            write!(out, ",{x:?}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(config_err("train_fraction must lie strictly between 0 and 1"));
        }
        Ok(Self {
            train_fraction,
            seed,
        })
    }
}

/// Stratified split: per class, `floor(fraction · n_c)` samples go to train.
///
/// Both outputs keep the original relative order of the samples they contain.
pub fn split<T: Real>(dataset: &Dataset<T>, spec: SplitSpec) -> Result<(Dataset<T>, Dataset<T>)> {
    SplitSpec::new(spec.train_fraction, spec.seed)?;
    if dataset.is_empty() {
        return Err(Error::Split("cannot split an empty dataset".into()));
    }
    let mut in_train = vec![false; dataset.len()];
    for (class, mut idx) in dataset.indices_by_class().into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Split(format!(
                "class {class} has {} sample(s); at least 2 are required",
                idx.len()
            )));
        }
        let n_train = (spec.train_fraction * idx.len() as f64).floor() as usize;
        let mut rng = rng_from(derive_seed(spec.seed, "split", &[class as u64]));
        idx.shuffle(&mut rng);
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, &t) in dataset.iter().zip(&in_train) {
        if t {
            train.push(s.clone());
        } else {
            test.push(s.clone());
        }
    }
    let (c, d) = (dataset.num_classes(), dataset.feature_dim());
    Ok((Dataset::new(c, d, train)?, Dataset::new(c, d, test)?))
}

/// Per-feature affine standardization `x ↦ (x − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population statistics of `train` (divisor n), variance floored at
    /// [`VARIANCE_EPSILON`].
    pub fn fit<T: Real>(train: &Dataset<T>) -> Result<Self> {
        if train.is_empty() {
            return Err(config_err("normalize: training set is empty"));
        }
        let d = train.feature_dim();
        let n = T::from_usize(train.len()).unwrap();
        let first = &train.samples()[0].features;
        let mut mean = Vec::with_capacity(d);
        let mut std = Vec::with_capacity(d);
        for (j, &pivot) in first.iter().enumerate().take(d) {
            // Shifted accumulation keeps a constant column's mean exact.
            let shift: T = train.iter().map(|s| s.features[j] - pivot).sum::<T>() / n;
            let m = pivot + shift;
            let var: T = train
                .iter()
                .map(|s| {
                    let c = s.features[j] - m;
                    c * c
                })
                .sum::<T>()
                / n;
            mean.push(m.as_f64());
            std.push(var.as_f64().max(VARIANCE_EPSILON).sqrt());
        }
        Ok(Self { mean, std })
    }

    pub fn apply_features<T: Real>(&self, features: &[T]) -> Vec<T> {
        features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| (x - T::lit(m)) / T::lit(s))
            .collect()
    }

    pub fn apply<T: Real>(&self, dataset: &Dataset<T>) -> Dataset<T> {
        Dataset {
            samples: dataset
                .iter()
                .map(|s| LabeledSample::new(self.apply_features(&s.features), s.label))
                .collect(),
            num_classes: dataset.num_classes(),
            feature_dim: dataset.feature_dim(),
        }
    }
}

/// Standardizes `train` and applies the same map to every dataset in `others`.
pub fn normalize<T: Real>(
    train: &Dataset<T>,
    others: &[&Dataset<T>],
) -> Result<(Dataset<T>, Vec<Dataset<T>>, NormStats)> {
    let stats = NormStats::fit(train)?;
    for o in others {
        if o.feature_dim() != train.feature_dim() {
            return Err(config_err("normalize: feature dimensions differ"));
        }
    }
    let normalized = others.iter().map(|o| stats.apply(o)).collect();
    Ok((stats.apply(train), normalized, stats))
}
