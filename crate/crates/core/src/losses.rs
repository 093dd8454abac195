//! Training objectives for the classifier and the auxiliary prompt.
//!
//! Every loss takes explicit input views so callers control augmentation.
//! Each public loss returns its value and the gradient with respect to the
//! parameters it trains: all classifier weights for the `*_dnn` losses, the
//! flattened context vectors for the `*_prompt` losses. [`dnn_objective`] and
//! [`prompt_objective`] evaluate the weighted totals for one minibatch with a
//! single forward pass per view.

use serde::{Deserialize, Serialize};

use crate::aux_model::{AuxModel, AuxTrace};
use crate::data::AugmentSpec;
use crate::error::{CssError, Result};
use crate::net::{argmax, axpy, ce_logit_grad, ce_loss, dot, Mlp, Target, Trace, LOG_CLAMP};
use crate::par;

const BACKPROP_CHUNK: usize = 16;
const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub lambda_u: f64,
    pub lambda_c: f64,
    pub lambda_r: f64,
    /// Pseudo-labels count only when the top probability exceeds this.
    pub delta: f64,
    pub tau_con: f64,
    pub augment: AugmentSpec,
    /// Train on the full weak-view distribution instead of its argmax.
    pub soft_pseudo_labels: bool,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            lambda_u: 0.5,
            lambda_c: 0.025,
            lambda_r: 1.0,
            delta: 0.95,
            tau_con: 0.5,
            augment: AugmentSpec {
                sigma_w: 0.1,
                sigma_s: 0.5,
                drop_prob: 0.2,
            },
            soft_pseudo_labels: false,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("lambda_u", self.lambda_u),
            ("lambda_c", self.lambda_c),
            ("lambda_r", self.lambda_r),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CssError::OutOfRange {
                    key: key.into(),
                    constraint: ">= 0".into(),
                });
            }
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(CssError::OutOfRange {
                key: "delta".into(),
                constraint: "0 < delta <= 1".into(),
            });
        }
        if !(self.tau_con > 0.0 && self.tau_con.is_finite()) {
            return Err(CssError::OutOfRange {
                key: "tau_con".into(),
                constraint: "> 0".into(),
            });
        }
        self.augment.validate()
    }
}

/// Uniform class prior.
pub fn uniform_prior(class_count: usize) -> Vec<f64> {
    vec![1.0 / class_count as f64; class_count]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DnnParts {
    pub x: f64,
    pub u: f64,
    pub con: f64,
    pub reg: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptParts {
    pub x: f64,
    pub u: f64,
}

pub fn total_dnn_loss(parts: &DnnParts, cfg: &SslConfig) -> f64 {
    parts.x + cfg.lambda_u * parts.u + cfg.lambda_c * parts.con + cfg.lambda_r * parts.reg
}

pub fn total_prompt_loss(parts: &PromptParts, cfg: &SslConfig) -> f64 {
    parts.x + cfg.lambda_u * parts.u
}

/// Hard pseudo-labels with their confidence mask, plus the weak-view
/// distributions for the soft-target variant.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
    pub targets: Vec<Vec<f64>>,
}

impl PseudoLabels {
    pub fn confident(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// `label = argmax p`, `mask = max p > delta`. A `None` entry (no usable
/// prediction) is masked out.
pub fn pseudo_labels(probs: &[Option<&[f64]>], delta: f64) -> PseudoLabels {
    let mut out = PseudoLabels {
        labels: Vec::with_capacity(probs.len()),
        mask: Vec::with_capacity(probs.len()),
        targets: Vec::with_capacity(probs.len()),
    };
    for p in probs {
        match p {
            Some(p) => {
                let k = argmax(p);
                out.labels.push(k);
                out.mask.push(p[k] > delta);
                out.targets.push(p.to_vec());
            }
            None => {
                out.labels.push(0);
                out.mask.push(false);
                out.targets.push(Vec::new());
            }
        }
    }
    out
}

pub fn pseudo_labels_dnn(net: &Mlp, weak_views: &[Vec<f64>], delta: f64) -> PseudoLabels {
    let traces = traces(net, weak_views);
    let probs: Vec<Option<&[f64]>> = traces.iter().map(|t| Some(t.probs.as_slice())).collect();
    pseudo_labels(&probs, delta)
}

pub fn pseudo_labels_prompt(
    aux: &AuxModel,
    weak_views: &[Vec<f64>],
    delta: f64,
) -> Result<PseudoLabels> {
    let traces = aux_traces(aux, weak_views)?;
    let probs: Vec<Option<&[f64]>> = traces
        .iter()
        .map(|t| t.as_ref().map(|t| t.probs.as_slice()))
        .collect();
    Ok(pseudo_labels(&probs, delta))
}

// ---------------------------------------------------------------------------
// classifier side

fn traces(net: &Mlp, views: &[Vec<f64>]) -> Vec<Trace> {
    par::map_slice(views, |x| net.trace(x))
}

/// Per-view upstream gradient.
struct Upstream {
    d_logits: Option<Vec<f64>>,
    d_features: Option<Vec<f64>>,
}

impl Upstream {
    fn none() -> Self {
        Self {
            d_logits: None,
            d_features: None,
        }
    }

    fn add_logits(&mut self, d: &[f64]) {
        match &mut self.d_logits {
            Some(v) => v.iter_mut().zip(d).for_each(|(a, b)| *a += b),
            None => self.d_logits = Some(d.to_vec()),
        }
    }

    fn add_features(&mut self, d: &[f64]) {
        match &mut self.d_features {
            Some(v) => v.iter_mut().zip(d).for_each(|(a, b)| *a += b),
            None => self.d_features = Some(d.to_vec()),
        }
    }
}

fn backprop(net: &Mlp, traces: &[&Trace], ups: &[Upstream]) -> Vec<f64> {
    par::chunked_sum(
        traces.len(),
        BACKPROP_CHUNK,
        net.param_count(),
        |range, acc| {
            for k in range {
                let u = &ups[k];
                if u.d_logits.is_none() && u.d_features.is_none() {
                    continue;
                }
                net.backward(
                    traces[k],
                    u.d_logits.as_deref(),
                    u.d_features.as_deref(),
                    acc,
                );
            }
        },
    )
}

/// Mean hard-label CE; gradient on the logits scaled by `weight`.
fn labeled_terms(traces: &[Trace], labels: &[usize], weight: f64) -> (f64, Vec<Vec<f64>>) {
    let n = traces.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let mut loss = 0.0;
    let mut d = Vec::with_capacity(n);
    for (t, &y) in traces.iter().zip(labels) {
        loss += ce_loss(Target::Hard(y), &t.probs);
        let mut g = vec![0.0; t.probs.len()];
        ce_logit_grad(Target::Hard(y), &t.probs, weight / n as f64, &mut g);
        d.push(g);
    }
    (loss / n as f64, d)
}

/// Masked pseudo-label CE averaged over the whole batch. Masked views get
/// `None` and take no part in backpropagation.
fn unlabeled_terms(
    probs: &[Option<&[f64]>],
    pseudo: &PseudoLabels,
    soft: bool,
    weight: f64,
) -> (f64, Vec<Option<Vec<f64>>>) {
    let n = probs.len();
    let mut loss = 0.0;
    let mut d = Vec::with_capacity(n);
    for (i, p) in probs.iter().enumerate() {
        let p = match p {
            Some(p) if pseudo.mask[i] => p,
            _ => {
                d.push(None);
                continue;
            }
        };
        let target = if soft {
            Target::Soft(&pseudo.targets[i])
        } else {
            Target::Hard(pseudo.labels[i])
        };
        loss += ce_loss(target, p);
        let mut g = vec![0.0; p.len()];
        ce_logit_grad(target, p, weight / n as f64, &mut g);
        d.push(Some(g));
    }
    let loss = if n == 0 { 0.0 } else { loss / n as f64 };
    (loss, d)
}

/// `sum_c pi_c log(pi_c / mean_c)` over the batch-mean prediction, with the
/// gradient pushed through the softmax onto each view's logits.
fn reg_terms(probs: &[&[f64]], weight: f64) -> (f64, Vec<Vec<f64>>) {
    let n = probs.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let c = probs[0].len();
    let prior = uniform_prior(c);
    let mut mean = vec![0.0; c];
    for p in probs {
        mean.iter_mut().zip(p.iter()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let loss: f64 = prior
        .iter()
        .zip(&mean)
        .map(|(pi, m)| pi * (pi / m.max(LOG_CLAMP)).ln())
        .sum();
    // d loss / d mean_c, zero where the clamp is active
    let d_mean: Vec<f64> = prior
        .iter()
        .zip(&mean)
        .map(|(pi, &m)| if m > LOG_CLAMP { -pi / m } else { 0.0 })
        .collect();
    let d = probs
        .iter()
        .map(|p| {
            let g: Vec<f64> = d_mean.iter().map(|v| weight * v / n as f64).collect();
            let pg = dot(p, &g);
            p.iter().zip(&g).map(|(pc, gc)| pc * (gc - pg)).collect()
        })
        .collect();
    (loss, d)
}

/// Loss with its gradients on both views.
pub type PairLoss = (f64, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// NT-Xent over the `2n` embeddings `a ++ b`, where `a[i]` and `b[i]` are a
/// positive pair. Similarities are cosines divided by `tau`; each anchor's
/// denominator runs over the other `2n - 1` embeddings; the loss is the mean
/// over all anchors. Returns the loss and its gradients on `a` and `b`.
pub fn nt_xent(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64) -> Result<PairLoss> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return Err(CssError::InsufficientData {
            needed: 2,
            got: n.min(b.len()),
        });
    }
    let m = 2 * n;
    let z: Vec<&[f64]> = a.iter().chain(b).map(|v| v.as_slice()).collect();
    let norms: Vec<f64> = z.iter().map(|v| dot(v, v).sqrt()).collect();
    if norms.iter().any(|r| r.is_nan() || *r <= MIN_NORM) {
        return Err(CssError::DegenerateInput(
            "zero-norm embedding in contrastive batch".into(),
        ));
    }
    let u: Vec<Vec<f64>> = z
        .iter()
        .zip(&norms)
        .map(|(v, r)| v.iter().map(|x| x / r).collect())
        .collect();
    let pos = |k: usize| if k < n { k + n } else { k - n };
    let mut gram = vec![0.0; m * m];
    for k in 0..m {
        for j in k + 1..m {
            let c = dot(&u[k], &u[j]) / tau;
            gram[k * m + j] = c;
            gram[j * m + k] = c;
        }
    }
    // row k: (loss_k, d loss / d s_kj for every j)
    let rows = par::map_range(m, |k| {
        let s = &gram[k * m..(k + 1) * m];
        let top = (0..m)
            .filter(|&j| j != k)
            .map(|j| s[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..m).filter(|&j| j != k).map(|j| (s[j] - top).exp()).sum();
        let lse = top + sum.ln();
        let g: Vec<f64> = (0..m)
            .map(|j| {
                if j == k {
                    0.0
                } else {
                    let soft = (s[j] - lse).exp();
                    (soft - if j == pos(k) { 1.0 } else { 0.0 }) / m as f64
                }
            })
            .collect();
        (lse - s[pos(k)], g)
    });
    let loss = rows.iter().map(|r| r.0).sum::<f64>() / m as f64;
    let dim = z[0].len();
    // s_kj is shared by anchors k and j: du_k = sum_j (g_kj + g_jk) u_j / tau
    let du: Vec<Vec<f64>> = par::map_range(m, |k| {
        let mut acc = vec![0.0; dim];
        for j in 0..m {
            let w = (rows[k].1[j] + rows[j].1[k]) / tau;
            if w != 0.0 {
                axpy(w, &u[j], &mut acc);
            }
        }
        acc
    });
    // through the normalization z / |z|
    let dz: Vec<Vec<f64>> = du
        .iter()
        .zip(&u)
        .zip(&norms)
        .map(|((g, uk), r)| {
            let proj = dot(g, uk);
            g.iter()
                .zip(uk)
                .map(|(gi, ui)| (gi - proj * ui) / r)
                .collect()
        })
        .collect();
    let (da, db) = dz.split_at(n);
    Ok((loss, da.to_vec(), db.to_vec()))
}

/// Supervised cross-entropy of the classifier on labeled views.
pub fn loss_labeled_dnn(net: &Mlp, views: &[Vec<f64>], labels: &[usize]) -> LossGrad {
    let tr = traces(net, views);
    let (loss, d) = labeled_terms(&tr, labels, 1.0);
    let ups: Vec<Upstream> = d
        .into_iter()
        .map(|g| Upstream {
            d_logits: Some(g),
            d_features: None,
        })
        .collect();
    let refs: Vec<&Trace> = tr.iter().collect();
    LossGrad {
        loss,
        grad: backprop(net, &refs, &ups),
    }
}

/// Confidence-masked pseudo-label loss of the classifier on strong views.
/// `pseudo` is held fixed.
pub fn loss_unlabeled_dnn(
    net: &Mlp,
    strong_views: &[Vec<f64>],
    pseudo: &PseudoLabels,
    soft: bool,
) -> LossGrad {
    let tr = traces(net, strong_views);
    let probs: Vec<Option<&[f64]>> = tr.iter().map(|t| Some(t.probs.as_slice())).collect();
    let (loss, d) = unlabeled_terms(&probs, pseudo, soft, 1.0);
    let ups: Vec<Upstream> = d
        .into_iter()
        .map(|g| Upstream {
            d_logits: g,
            d_features: None,
        })
        .collect();
    let refs: Vec<&Trace> = tr.iter().collect();
    LossGrad {
        loss,
        grad: backprop(net, &refs, &ups),
    }
}

/// NT-Xent on the classifier's feature vectors of two views per sample.
pub fn contrastive_loss(
    net: &Mlp,
    views_a: &[Vec<f64>],
    views_b: &[Vec<f64>],
    tau: f64,
) -> Result<LossGrad> {
    let ta = traces(net, views_a);
    let tb = traces(net, views_b);
    let fa: Vec<Vec<f64>> = ta.iter().map(|t| t.features().to_vec()).collect();
    let fb: Vec<Vec<f64>> = tb.iter().map(|t| t.features().to_vec()).collect();
    let (loss, da, db) = nt_xent(&fa, &fb, tau)?;
    let refs: Vec<&Trace> = ta.iter().chain(&tb).collect();
    let ups: Vec<Upstream> = da
        .into_iter()
        .chain(db)
        .map(|g| Upstream {
            d_logits: None,
            d_features: Some(g),
        })
        .collect();
    Ok(LossGrad {
        loss,
        grad: backprop(net, &refs, &ups),
    })
}

/// Uniform-prior regularizer on the batch-mean prediction.
pub fn reg_loss(net: &Mlp, views: &[Vec<f64>]) -> LossGrad {
    let tr = traces(net, views);
    let probs: Vec<&[f64]> = tr.iter().map(|t| t.probs.as_slice()).collect();
    let (loss, d) = reg_terms(&probs, 1.0);
    let ups: Vec<Upstream> = d
        .into_iter()
        .map(|g| Upstream {
            d_logits: Some(g),
            d_features: None,
        })
        .collect();
    let refs: Vec<&Trace> = tr.iter().collect();
    LossGrad {
        loss,
        grad: backprop(net, &refs, &ups),
    }
}

/// Views of one minibatch. `x_*` are clean-set samples, `u_*` noisy-set
/// samples. `*_weak` doubles as the first contrastive view.
#[derive(Debug, Clone, Default)]
pub struct SslBatch {
    pub x_weak: Vec<Vec<f64>>,
    pub x_weak2: Vec<Vec<f64>>,
    pub x_labels: Vec<usize>,
    pub u_weak: Vec<Vec<f64>>,
    pub u_weak2: Vec<Vec<f64>>,
    pub u_strong: Vec<Vec<f64>>,
}

impl SslBatch {
    pub fn len(&self) -> usize {
        self.x_weak.len() + self.u_weak.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct DnnStep {
    pub parts: DnnParts,
    pub total: f64,
    pub grad: Vec<f64>,
    pub pseudo: PseudoLabels,
}

/// Weighted classifier objective for one minibatch. Pseudo-labels come from
/// the current weights on the weak views and are held fixed. The contrastive
/// term is skipped when the batch has fewer than two samples.
pub fn dnn_objective(net: &Mlp, batch: &SslBatch, cfg: &SslConfig) -> Result<DnnStep> {
    let nx = batch.x_weak.len();
    let nu = batch.u_weak.len();
    let n = nx + nu;
    let weak: Vec<Vec<f64>> = batch.x_weak.iter().chain(&batch.u_weak).cloned().collect();
    let weak2: Vec<Vec<f64>> = batch
        .x_weak2
        .iter()
        .chain(&batch.u_weak2)
        .cloned()
        .collect();
    let t_weak = traces(net, &weak);
    let t_weak2 = traces(net, &weak2);
    let t_strong = traces(net, &batch.u_strong);

    let mut ups_weak: Vec<Upstream> = (0..n).map(|_| Upstream::none()).collect();
    let mut ups_weak2: Vec<Upstream> = (0..n).map(|_| Upstream::none()).collect();
    let mut ups_strong: Vec<Upstream> = (0..nu).map(|_| Upstream::none()).collect();
    let mut parts = DnnParts::default();

    let (lx, dx) = labeled_terms(&t_weak[..nx], &batch.x_labels, 1.0);
    parts.x = lx;
    for (u, d) in ups_weak.iter_mut().zip(&dx) {
        u.add_logits(d);
    }

    let weak_probs: Vec<Option<&[f64]>> = t_weak[nx..]
        .iter()
        .map(|t| Some(t.probs.as_slice()))
        .collect();
    let pseudo = pseudo_labels(&weak_probs, cfg.delta);
    let strong_probs: Vec<Option<&[f64]>> =
        t_strong.iter().map(|t| Some(t.probs.as_slice())).collect();
    let (lu, du) = unlabeled_terms(&strong_probs, &pseudo, cfg.soft_pseudo_labels, cfg.lambda_u);
    parts.u = lu;
    for (u, d) in ups_strong.iter_mut().zip(&du) {
        if let Some(d) = d {
            u.add_logits(d);
        }
    }

    if n >= 2 {
        let fa: Vec<Vec<f64>> = t_weak.iter().map(|t| t.features().to_vec()).collect();
        let fb: Vec<Vec<f64>> = t_weak2.iter().map(|t| t.features().to_vec()).collect();
        let (lc, da, db) = nt_xent(&fa, &fb, cfg.tau_con)?;
        parts.con = lc;
        for (u, d) in ups_weak.iter_mut().zip(&da) {
            u.add_features(&d.iter().map(|v| cfg.lambda_c * v).collect::<Vec<_>>());
        }
        for (u, d) in ups_weak2.iter_mut().zip(&db) {
            u.add_features(&d.iter().map(|v| cfg.lambda_c * v).collect::<Vec<_>>());
        }
    }

    let probs: Vec<&[f64]> = t_weak.iter().map(|t| t.probs.as_slice()).collect();
    let (lr, dr) = reg_terms(&probs, cfg.lambda_r);
    parts.reg = lr;
    for (u, d) in ups_weak.iter_mut().zip(&dr) {
        u.add_logits(d);
    }

    let refs: Vec<&Trace> = t_weak.iter().chain(&t_weak2).chain(&t_strong).collect();
    let ups: Vec<Upstream> = ups_weak
        .into_iter()
        .chain(ups_weak2)
        .chain(ups_strong)
        .collect();
    let grad = backprop(net, &refs, &ups);
    let total = total_dnn_loss(&parts, cfg);
    if !total.is_finite() {
        return Err(CssError::Divergence {
            phase: "classifier loss".into(),
            epoch: 0,
            batch: 0,
            detail: format!("total loss {total}"),
        });
    }
    Ok(DnnStep {
        parts,
        total,
        grad,
        pseudo,
    })
}

// ---------------------------------------------------------------------------
// prompt side

/// Aux traces; inputs that embed to the zero vector give `None`.
fn aux_traces(aux: &AuxModel, views: &[Vec<f64>]) -> Result<Vec<Option<AuxTrace>>> {
    let shifted = aux.effective_prototypes();
    par::map_slice(views, |x| match aux.trace_with(x, &shifted) {
        Ok(t) => Ok(Some(t)),
        Err(CssError::DegenerateInput(_)) => Ok(None),
        Err(e) => Err(e),
    })
    .into_iter()
    .collect()
}

/// Sum of per-view context-mean gradients, expanded to all context vectors.
fn aux_backprop(
    aux: &AuxModel,
    traces: &[Option<&AuxTrace>],
    d_logits: &[Option<Vec<f64>>],
) -> Vec<f64> {
    let d_shift = par::chunked_sum(traces.len(), BACKPROP_CHUNK, aux.embed_dim, |range, acc| {
        for k in range {
            if let (Some(t), Some(d)) = (traces[k], &d_logits[k]) {
                aux.backward_shift(t, d, acc);
            }
        }
    });
    aux.expand_shift_grad(&d_shift)
}

/// Supervised cross-entropy of the auxiliary model; only the context vectors
/// receive gradient.
pub fn loss_labeled_prompt(aux: &AuxModel, xs: &[Vec<f64>], labels: &[usize]) -> Result<LossGrad> {
    let shifted = aux.effective_prototypes();
    let tr: Vec<AuxTrace> = par::map_slice(xs, |x| aux.trace_with(x, &shifted))
        .into_iter()
        .collect::<Result<_>>()?;
    let n = tr.len();
    if n == 0 {
        return Ok(LossGrad {
            loss: 0.0,
            grad: vec![0.0; aux.context.len()],
        });
    }
    let mut loss = 0.0;
    let mut d = Vec::with_capacity(n);
    for (t, &y) in tr.iter().zip(labels) {
        loss += ce_loss(Target::Hard(y), &t.probs);
        let mut g = vec![0.0; t.probs.len()];
        ce_logit_grad(Target::Hard(y), &t.probs, 1.0 / n as f64, &mut g);
        d.push(Some(g));
    }
    let refs: Vec<Option<&AuxTrace>> = tr.iter().map(Some).collect();
    Ok(LossGrad {
        loss: loss / n as f64,
        grad: aux_backprop(aux, &refs, &d),
    })
}

/// Confidence-masked pseudo-label loss of the auxiliary model on strong
/// views. Strong views that embed to zero are treated as masked.
pub fn loss_unlabeled_prompt(
    aux: &AuxModel,
    strong_views: &[Vec<f64>],
    pseudo: &PseudoLabels,
    soft: bool,
) -> Result<LossGrad> {
    let tr = aux_traces(aux, strong_views)?;
    let probs: Vec<Option<&[f64]>> = tr
        .iter()
        .map(|t| t.as_ref().map(|t| t.probs.as_slice()))
        .collect();
    let (loss, d) = unlabeled_terms(&probs, pseudo, soft, 1.0);
    let refs: Vec<Option<&AuxTrace>> = tr.iter().map(Option::as_ref).collect();
    Ok(LossGrad {
        loss,
        grad: aux_backprop(aux, &refs, &d),
    })
}

#[derive(Debug, Clone)]
pub struct PromptStep {
    pub parts: PromptParts,
    pub total: f64,
    pub grad: Vec<f64>,
    pub pseudo: PseudoLabels,
}

/// Weighted prompt objective for one minibatch: labeled CE on `x` plus
/// `lambda_u` times the masked pseudo-label loss, pseudo-labels taken from
/// the auxiliary model on `u_weak`.
pub fn prompt_objective(
    aux: &AuxModel,
    x: &[Vec<f64>],
    x_labels: &[usize],
    u_weak: &[Vec<f64>],
    u_strong: &[Vec<f64>],
    cfg: &SslConfig,
) -> Result<PromptStep> {
    let lx = loss_labeled_prompt(aux, x, x_labels)?;
    let pseudo = pseudo_labels_prompt(aux, u_weak, cfg.delta)?;
    let lu = loss_unlabeled_prompt(aux, u_strong, &pseudo, cfg.soft_pseudo_labels)?;
    let parts = PromptParts {
        x: lx.loss,
        u: lu.loss,
    };
    let grad = lx
        .grad
        .iter()
        .zip(&lu.grad)
        .map(|(a, b)| a + cfg.lambda_u * b)
        .collect();
    let total = total_prompt_loss(&parts, cfg);
    if !total.is_finite() {
        return Err(CssError::Divergence {
            phase: "prompt loss".into(),
            epoch: 0,
            batch: 0,
            detail: format!("total loss {total}"),
        });
    }
    Ok(PromptStep {
        parts,
        total,
        grad,
        pseudo,
    })
}
