//! Per-sample scoring and clean/noisy partitioning.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aux_model::AuxModel;
use crate::data::Dataset;
use crate::error::{CssError, Result};
use crate::mixture::{
    fit_gmm1, fit_gmm2, normalize_losses, posterior_clean, weighted_1d_clean_prob, EmConfig,
    OmegaVector,
};
use crate::net::{ce_loss, Mlp, Target};
use crate::par;
use crate::report::fmt_num;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Gmm2d,
    #[serde(alias = "gmm1d")]
    Gmm1dLossOnly,
    #[serde(rename = "weighted_1d", alias = "weighted1d")]
    Weighted1d,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Gmm2d, Scheme::Gmm1dLossOnly, Scheme::Weighted1d];

    /// Short name used on the command line and in directory names.
    pub fn short_name(&self) -> &'static str {
        match self {
            Scheme::Gmm2d => "gmm2d",
            Scheme::Gmm1dLossOnly => "gmm1d",
            Scheme::Weighted1d => "weighted1d",
        }
    }

    /// Whether selection reads the auxiliary scores at all.
    pub fn uses_aux(&self) -> bool {
        !matches!(self, Scheme::Gmm1dLossOnly)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Gmm2d => "gmm2d",
            Scheme::Gmm1dLossOnly => "gmm1d_loss_only",
            Scheme::Weighted1d => "weighted_1d",
        })
    }
}

impl FromStr for Scheme {
    type Err = CssError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmm2d" => Ok(Scheme::Gmm2d),
            "gmm1d" | "gmm1d_loss_only" => Ok(Scheme::Gmm1dLossOnly),
            "weighted1d" | "weighted_1d" => Ok(Scheme::Weighted1d),
            other => Err(CssError::Parameter(format!(
                "unknown scheme '{other}' (expected gmm2d, gmm1d or weighted1d)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    pub epsilon: f64,
    /// Weight of the loss-axis posterior in the weighted 1D scheme.
    pub beta: f64,
    pub em: EmConfig,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            beta: 0.2,
            em: EmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub clean_indices: Vec<usize>,
    pub noisy_indices: Vec<usize>,
    pub clean_posteriors: Vec<f64>,
    pub epsilon: f64,
    pub scheme: Scheme,
    /// Set when no sample reached the threshold.
    pub empty_clean_set: bool,
}

impl Partition {
    pub fn n_clean(&self) -> usize {
        self.clean_indices.len()
    }

    pub fn n_noisy(&self) -> usize {
        self.noisy_indices.len()
    }

    pub fn len(&self) -> usize {
        self.clean_posteriors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_posteriors.is_empty()
    }

    pub fn is_clean(&self, i: usize) -> bool {
        self.clean_posteriors[i] >= self.epsilon
    }

    /// Check disjointness, coverage and threshold consistency.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.n_clean() + self.n_noisy() != n {
            return Err(CssError::Parameter(format!(
                "partition sizes {} + {} != {n}",
                self.n_clean(),
                self.n_noisy()
            )));
        }
        let mut seen = vec![false; n];
        let sides = self
            .clean_indices
            .iter()
            .map(|&i| (i, true))
            .chain(self.noisy_indices.iter().map(|&i| (i, false)));
        for (i, clean) in sides {
            if i >= n || seen[i] {
                return Err(CssError::Parameter(format!(
                    "index {i} repeated or out of range"
                )));
            }
            seen[i] = true;
            if self.is_clean(i) != clean {
                return Err(CssError::Parameter(format!(
                    "index {i} on the wrong side of epsilon"
                )));
            }
        }
        Ok(())
    }
}

/// Split samples at `epsilon`: posterior `>= epsilon` is clean.
pub fn partition_at(posteriors: Vec<f64>, epsilon: f64, scheme: Scheme) -> Partition {
    let (clean, noisy): (Vec<usize>, Vec<usize>) =
        (0..posteriors.len()).partition(|&i| posteriors[i] >= epsilon);
    let empty = clean.is_empty();
    if empty {
        log::warn!("no sample reached the clean threshold {epsilon}; clean set is empty");
    }
    Partition {
        clean_indices: clean,
        noisy_indices: noisy,
        clean_posteriors: posteriors,
        epsilon,
        scheme,
        empty_clean_set: empty,
    }
}

/// Selection features for every sample: normalized cross-entropy of the
/// observed label under `net`, and the auxiliary probability of that label.
pub fn compute_scores(dataset: &Dataset, net: &Mlp, aux: &AuxModel) -> Result<Vec<OmegaVector>> {
    if dataset.dim != net.input_dim() || dataset.dim != aux.input_dim {
        return Err(CssError::Shape {
            expected: net.input_dim(),
            got: dataset.dim,
        });
    }
    let shifted = aux.effective_prototypes();
    let raw = par::map_range(dataset.len(), |i| -> Result<(f64, f64)> {
        let y = dataset.observed_labels[i];
        let probs = net.trace(dataset.x(i)).probs;
        let loss = ce_loss(Target::Hard(y), &probs);
        let p_aux = aux.trace_with(dataset.x(i), &shifted)?.probs[y];
        Ok((loss, p_aux))
    });
    let raw: Vec<(f64, f64)> = raw.into_iter().collect::<Result<_>>()?;
    let losses: Vec<f64> = raw.iter().map(|r| r.0).collect();
    Ok(normalize_losses(&losses)
        .into_iter()
        .zip(&raw)
        .map(|(l, r)| OmegaVector::new(l, r.1))
        .collect())
}

/// Per-sample clean posteriors under `scheme`.
pub fn clean_posteriors(
    scores: &[OmegaVector],
    scheme: Scheme,
    cfg: &SelectConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let losses = || scores.iter().map(|w| w.loss).collect::<Vec<_>>();
    Ok(match scheme {
        Scheme::Gmm2d => {
            let gmm = fit_gmm2(scores, &cfg.em, seed)?;
            scores.iter().map(|w| posterior_clean(&gmm, w)).collect()
        }
        Scheme::Gmm1dLossOnly => {
            let gmm = fit_gmm1(&losses(), &cfg.em, seed)?;
            scores.iter().map(|w| gmm.posterior_clean(w.loss)).collect()
        }
        Scheme::Weighted1d => {
            let by_loss = fit_gmm1(&losses(), &cfg.em, rng::derive(seed, &[0]))?;
            // 1 - p keeps "smaller mean is clean" on the aux axis.
            let aux_gap: Vec<f64> = scores.iter().map(|w| 1.0 - w.aux).collect();
            let by_aux = fit_gmm1(&aux_gap, &cfg.em, rng::derive(seed, &[1]))?;
            scores
                .iter()
                .zip(&aux_gap)
                .map(|(w, &g)| {
                    weighted_1d_clean_prob(
                        by_loss.posterior_clean(w.loss),
                        by_aux.posterior_clean(g),
                        cfg.beta,
                    )
                })
                .collect()
        }
    })
}

pub fn select(
    scores: &[OmegaVector],
    scheme: Scheme,
    cfg: &SelectConfig,
    seed: u64,
) -> Result<Partition> {
    if !(0.0..=1.0).contains(&cfg.epsilon) {
        return Err(CssError::OutOfRange {
            key: "epsilon".into(),
            constraint: "0 <= epsilon <= 1".into(),
        });
    }
    let post = clean_posteriors(scores, scheme, cfg, seed)?;
    Ok(partition_at(post, cfg.epsilon, scheme))
}

/// Diagnostic dump with columns
/// `index,omega_1,omega_2,posterior,assigned_set,is_truly_clean`.
pub fn write_partition_csv(
    path: &Path,
    scores: &[OmegaVector],
    partition: &Partition,
    dataset: &Dataset,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CssError::format(path, e.to_string()))?;
    let io = |e: csv::Error| CssError::format(path, e.to_string());
    w.write_record([
        "index",
        "omega_1",
        "omega_2",
        "posterior",
        "assigned_set",
        "is_truly_clean",
    ])
    .map_err(io)?;
    for (i, s) in scores.iter().enumerate() {
        let clean = dataset.observed_labels[i] == dataset.true_labels[i];
        w.write_record([
            i.to_string(),
            fmt_num(s.loss),
            fmt_num(s.aux),
            fmt_num(partition.clean_posteriors[i]),
            if partition.is_clean(i) { "X" } else { "U" }.to_string(),
            u8::from(clean).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CssError::io(path, e))
}
