//! Synthetic class-conditional Gaussian datasets, label-noise injection and
//! the weak/strong vector augmentations.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CssError, Result};
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    AuxPretrain,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::AuxPretrain => "aux_pretrain",
        })
    }
}

impl FromStr for Split {
    type Err = CssError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "aux_pretrain" => Ok(Split::AuxPretrain),
            other => Err(CssError::Parameter(format!("unknown split `{other}`"))),
        }
    }
}

/// Samples with observed labels and the hidden ground truth.
///
/// Features are stored row-major in one flat buffer of `len() * dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub dim: usize,
    pub observed_labels: Vec<usize>,
    pub true_labels: Vec<usize>,
    pub split: Split,
    pub class_count: usize,
    pub rng_seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.observed_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed_labels.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// `true` where the observed label equals the hidden true label.
    pub fn clean_mask(&self) -> Vec<bool> {
        self.observed_labels
            .iter()
            .zip(&self.true_labels)
            .map(|(a, b)| a == b)
            .collect()
    }

    pub fn mismatch_count(&self) -> usize {
        self.clean_mask().iter().filter(|c| !**c).count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(CssError::Empty("dataset has no samples".into()));
        }
        if self.true_labels.len() != n {
            return Err(CssError::Shape {
                expected: n,
                got: self.true_labels.len(),
            });
        }
        if self.features.len() != n * self.dim {
            return Err(CssError::Shape {
                expected: n * self.dim,
                got: self.features.len(),
            });
        }
        let c = self.class_count;
        if let Some(bad) = self
            .observed_labels
            .iter()
            .chain(&self.true_labels)
            .find(|&&y| y >= c)
        {
            return Err(CssError::Parameter(format!("label {bad} outside [0, {c})")));
        }
        if self.split == Split::Test && self.observed_labels != self.true_labels {
            return Err(CssError::Parameter(
                "test split carries corrupted labels".into(),
            ));
        }
        Ok(())
    }

    /// Write one row per sample: `feat_0..feat_{D-1},y_obs,y_true,split`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("feat_{j}")).collect();
        header.extend(["y_obs", "y_true", "split"].map(String::from));
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.x(i).iter().map(|v| v.to_string()).collect();
            row.push(self.observed_labels[i].to_string());
            row.push(self.true_labels[i].to_string());
            row.push(self.split.to_string());
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| CssError::io(path, e))
    }

    /// Read a dataset written by [`Dataset::write_csv`]. All rows must share
    /// one split. `class_count` defaults to one past the largest label.
    pub fn read_csv(path: &Path, class_count: Option<usize>) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
        let cols = header.len();
        if cols < 4 {
            return Err(CssError::format(path, "need feat_*, y_obs, y_true, split"));
        }
        let dim = cols - 3;
        for (j, h) in header.iter().take(dim).enumerate() {
            if h != format!("feat_{j}") {
                return Err(CssError::format(path, format!("column {j} is `{h}`")));
            }
        }
        if header.iter().skip(dim).collect::<Vec<_>>() != ["y_obs", "y_true", "split"] {
            return Err(CssError::format(
                path,
                "trailing columns must be y_obs,y_true,split",
            ));
        }
        let mut features = Vec::new();
        let mut observed = Vec::new();
        let mut truth = Vec::new();
        let mut split: Option<Split> = None;
        for (row_no, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let bad =
                |what: &str| CssError::format(path, format!("row {}: bad {what}", row_no + 1));
            for j in 0..dim {
                features.push(rec[j].trim().parse::<f64>().map_err(|_| bad("feature"))?);
            }
            observed.push(rec[dim].trim().parse::<usize>().map_err(|_| bad("y_obs"))?);
            truth.push(
                rec[dim + 1]
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| bad("y_true"))?,
            );
            let s: Split = rec[dim + 2].trim().parse().map_err(|_| bad("split"))?;
            match split {
                None => split = Some(s),
                Some(prev) if prev != s => {
                    return Err(CssError::format(path, "mixed splits in one file"))
                }
                _ => {}
            }
        }
        let split = split.ok_or_else(|| CssError::format(path, "no rows"))?;
        let inferred = observed.iter().chain(&truth).max().map_or(0, |m| m + 1);
        let ds = Dataset {
            features,
            dim,
            observed_labels: observed,
            true_labels: truth,
            split,
            class_count: class_count.unwrap_or(inferred),
            rng_seed: 0,
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> CssError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CssError::io(path, io),
        other => CssError::format(path, format!("{other:?}")),
    }
}

/// Class-conditional isotropic Gaussians sharing one set of class means, so
/// independent draws (train, test, auxiliary pretraining) come from the same
/// distribution.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub class_count: usize,
    pub dim: usize,
    pub separation: f64,
    pub means: Vec<Vec<f64>>,
    pub seed: u64,
}

impl SyntheticSource {
    /// Class means are standard normal draws rescaled so the closest pair is
    /// exactly `separation` apart.
    pub fn new(class_count: usize, dim: usize, separation: f64, seed: u64) -> Result<Self> {
        if class_count < 2 {
            return Err(CssError::Parameter("class_count must be >= 2".into()));
        }
        if dim < 2 {
            return Err(CssError::Parameter("dim must be >= 2".into()));
        }
        if !(separation > 0.0 && separation.is_finite()) {
            return Err(CssError::Parameter("separation must be positive".into()));
        }
        let mut rng = rng::rng_for(seed, &[stream::MEANS]);
        let mut means: Vec<Vec<f64>> = (0..class_count)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut min_d = f64::INFINITY;
        for a in 0..class_count {
            for b in (a + 1)..class_count {
                min_d = min_d.min(dist(&means[a], &means[b]));
            }
        }
        // rounding can leave the closest pair a hair short of `separation`
        let scale = separation / min_d * (1.0 + 1e-12);
        for m in &mut means {
            m.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(Self {
            class_count,
            dim,
            separation,
            means,
            seed,
        })
    }

    /// Draw `per_class` unit-variance samples around every class mean.
    /// Sample `i` belongs to class `i % class_count`.
    pub fn draw(&self, split: Split, per_class: usize, stream_tag: u64) -> Result<Dataset> {
        if per_class < 1 {
            return Err(CssError::Parameter("per_class must be >= 1".into()));
        }
        let n = per_class * self.class_count;
        let mut rng = rng::rng_for(self.seed, &[stream::SAMPLES, stream_tag]);
        let mut features = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % self.class_count;
            for &m in &self.means[c] {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(m + z);
            }
            labels.push(c);
        }
        Ok(Dataset {
            features,
            dim: self.dim,
            observed_labels: labels.clone(),
            true_labels: labels,
            split,
            class_count: self.class_count,
            rng_seed: rng::derive(self.seed, &[stream::SAMPLES, stream_tag]),
        })
    }

    /// For each class, the class whose mean is nearest: the synthetic
    /// analog of a semantically similar class.
    pub fn nearest_class_flip_map(&self) -> Vec<Option<usize>> {
        (0..self.class_count)
            .map(|a| {
                (0..self.class_count)
                    .filter(|&b| b != a)
                    .min_by(|&b1, &b2| {
                        dist(&self.means[a], &self.means[b1])
                            .total_cmp(&dist(&self.means[a], &self.means[b2]))
                    })
            })
            .collect()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn generate_dataset(
    class_count: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    SyntheticSource::new(class_count, dim, separation, seed)?.draw(Split::Train, per_class, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
}

impl FromStr for NoiseKind {
    type Err = CssError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" | "sym" => Ok(NoiseKind::Symmetric),
            "asymmetric" | "asym" => Ok(NoiseKind::Asymmetric),
            other => Err(CssError::Parameter(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    /// Per-class flip target; `None` leaves that class uncorrupted. Only
    /// read for asymmetric noise, where it must have one entry per class.
    pub flip_map: Vec<Option<usize>>,
}

impl NoiseSpec {
    pub fn symmetric(rate: f64) -> Self {
        Self {
            kind: NoiseKind::Symmetric,
            rate,
            flip_map: Vec::new(),
        }
    }

    pub fn asymmetric(rate: f64, flip_map: Vec<Option<usize>>) -> Self {
        Self {
            kind: NoiseKind::Asymmetric,
            rate,
            flip_map,
        }
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(CssError::Config(format!(
                "noise rate {} outside [0, 1]",
                self.rate
            )));
        }
        if self.kind == NoiseKind::Asymmetric {
            if self.flip_map.len() != class_count {
                return Err(CssError::Config(format!(
                    "asymmetric flip_map has {} entries, need {class_count}",
                    self.flip_map.len()
                )));
            }
            for (c, t) in self.flip_map.iter().enumerate() {
                match *t {
                    Some(t) if t == c => {
                        return Err(CssError::Config(format!(
                            "flip_map maps class {c} to itself"
                        )))
                    }
                    Some(t) if t >= class_count => {
                        return Err(CssError::Config(format!(
                            "flip_map target {t} for class {c} outside [0, {class_count})"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// Corrupt `round(rate * N)` observed labels, chosen uniformly without
/// replacement. Symmetric noise redraws the label uniformly over all classes
/// (possibly the true one); asymmetric noise moves it to `flip_map[y*]`.
pub fn inject_noise(dataset: &Dataset, spec: &NoiseSpec, seed: u64) -> Result<Dataset> {
    if dataset.split != Split::Train {
        return Err(CssError::Parameter(format!(
            "noise can only be injected into the train split, got {}",
            dataset.split
        )));
    }
    spec.validate(dataset.class_count)?;
    let n = dataset.len();
    let k = ((spec.rate * n as f64).round() as usize).min(n);
    let mut rng = rng::rng_for(seed, &[stream::NOISE]);
    let mut out = dataset.clone();
    let chosen = index::sample(&mut rng, n, k);
    for i in chosen.iter() {
        out.observed_labels[i] = match spec.kind {
            NoiseKind::Symmetric => rng.random_range(0..dataset.class_count),
            NoiseKind::Asymmetric => {
                spec.flip_map[dataset.true_labels[i]].unwrap_or(dataset.true_labels[i])
            }
        };
    }
    Ok(out)
}

/// Augmentation strengths. Weak views add Gaussian jitter; strong views add
/// larger jitter and then zero each coordinate with probability `drop_prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub sigma_w: f64,
    pub sigma_s: f64,
    pub drop_prob: f64,
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w >= 0.0 && self.sigma_w < self.sigma_s && self.sigma_s.is_finite()) {
            return Err(CssError::Parameter(format!(
                "need 0 <= sigma_w < sigma_s, got {} and {}",
                self.sigma_w, self.sigma_s
            )));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(CssError::Parameter(format!(
                "drop_prob {} outside [0, 1)",
                self.drop_prob
            )));
        }
        Ok(())
    }
}

/// Seed for view `view` of sample `index` at (`phase`, `epoch`). Depends only
/// on these identifiers, never on batch composition or thread layout.
pub fn view_seed(seed: u64, phase: u64, epoch: usize, index: usize, view: u64) -> u64 {
    rng::derive(
        seed,
        &[stream::VIEW, phase, epoch as u64, index as u64, view],
    )
}

pub fn weak_augment(x: &[f64], sigma_w: f64, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    weak_augment_into(x, sigma_w, seed, &mut out);
    out
}

pub fn weak_augment_into(x: &[f64], sigma_w: f64, seed: u64, out: &mut [f64]) {
    if sigma_w == 0.0 {
        out.copy_from_slice(x);
        return;
    }
    let mut rng = rng::rng_from(seed);
    for (o, &v) in out.iter_mut().zip(x) {
        let z: f64 = StandardNormal.sample(&mut rng);
        *o = v + sigma_w * z;
    }
}

pub fn strong_augment(x: &[f64], sigma_s: f64, drop_prob: f64, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    strong_augment_into(x, sigma_s, drop_prob, seed, &mut out);
    out
}

pub fn strong_augment_into(x: &[f64], sigma_s: f64, drop_prob: f64, seed: u64, out: &mut [f64]) {
    let mut rng = rng::rng_from(seed);
    for (o, &v) in out.iter_mut().zip(x) {
        let z: f64 = StandardNormal.sample(&mut rng);
        let keep = rng.random::<f64>() >= drop_prob;
        *o = if keep { v + sigma_s * z } else { 0.0 };
    }
}
