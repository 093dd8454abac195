//! Selection-quality and generalization metrics.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CssError, Result};
use crate::net::{argmax, Mlp};
use crate::par;
use crate::selection::Partition;

/// ROC points from the strictest threshold down. The first point is the
/// origin at threshold `+inf`; every later point corresponds to one distinct
/// score, with samples scoring `>= threshold` called positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    pub fn trapezoid_area(&self) -> f64 {
        self.fpr
            .windows(2)
            .zip(self.tpr.windows(2))
            .map(|(f, t)| (f[1] - f[0]) * (t[0] + t[1]) * 0.5)
            .sum()
    }
}

fn check_inputs(scores: &[f64], truth: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != truth.len() {
        return Err(CssError::Shape {
            expected: truth.len(),
            got: scores.len(),
        });
    }
    if scores.len() < 2 {
        return Err(CssError::InsufficientData {
            needed: 2,
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CssError::Parameter("NaN score".into()));
    }
    let pos = truth.iter().filter(|t| **t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(CssError::UndefinedAuc);
    }
    Ok((pos, neg))
}

/// Rank-based (Mann-Whitney) AUC with midranks for ties: the probability a
/// random positive outscores a random negative, ties counting one half.
pub fn auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, truth)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks are carried doubled so midranks stay integral.
    let mut rank_sum2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank2 = (start + 1 + end) as u128;
        let group_pos = order[start..end].iter().filter(|&&i| truth[i]).count() as u128;
        rank_sum2 += midrank2 * group_pos;
        start = end;
    }
    let pos = pos as u128;
    let u2 = rank_sum2 - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg as u128) as f64)
}

pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = check_inputs(scores, truth)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if truth[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        thresholds.push(s);
        tpr.push(tp as f64 / pos as f64);
        fpr.push(fp as f64 / neg as f64);
    }
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc: auc(scores, truth)?,
    })
}

/// Observed-label errors among the samples placed in the clean set.
pub fn count_noisy_in_clean(partition: &Partition, dataset: &Dataset) -> usize {
    partition
        .clean_indices
        .iter()
        .filter(|&&i| dataset.observed_labels[i] != dataset.true_labels[i])
        .count()
}

/// Fraction of argmax predictions equal to the true labels.
pub fn test_accuracy(net: &Mlp, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(CssError::Empty("test set".into()));
    }
    if test.dim != net.input_dim() {
        return Err(CssError::Shape {
            expected: net.input_dim(),
            got: test.dim,
        });
    }
    let hits = par::map_range(test.len(), |i| {
        usize::from(argmax(&net.trace(test.x(i)).probs) == test.true_labels[i])
    });
    Ok(hits.iter().sum::<usize>() as f64 / test.len() as f64)
}

/// Pairwise AUC over every (positive, negative) pair: ties count one half.
/// Quadratic; meant as a reference for [`auc`].
pub fn brute_force_auc(scores: &[f64], truth: &[bool]) -> f64 {
    let mut count2: u128 = 0;
    let (mut pos, mut neg) = (0u128, 0u128);
    for (i, &ti) in truth.iter().enumerate() {
        if ti {
            pos += 1;
        } else {
            neg += 1;
        }
        if !ti {
            continue;
        }
        for (j, &tj) in truth.iter().enumerate() {
            if tj {
                continue;
            }
            if scores[i] > scores[j] {
                count2 += 2;
            } else if scores[i] == scores[j] {
                count2 += 1;
            }
        }
    }
    count2 as f64 / (2 * pos * neg) as f64
}
