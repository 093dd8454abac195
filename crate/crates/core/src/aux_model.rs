//! Auxiliary zero-shot scorer: a frozen linear embedder, frozen per-class
//! prototypes, and `M` learnable context vectors whose mean shifts every
//! prototype. Class probabilities are a temperature softmax over cosine
//! similarities between the embedded input and the shifted prototypes.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{CssError, Result};
use crate::net::{self, dot, softmax};
use crate::rng::{self, stream};

/// Magnitude of the prototype corruption relative to the typical prototype
/// coordinate, before the `(1 - quality)` blend.
pub const PROTOTYPE_NOISE_SCALE: f64 = 2.5;
/// Share of the corruption that is a single offset common to all classes
/// (the part a shared context shift can undo). The class-specific share is
/// `sqrt(1 - s^2)`.
pub const SHARED_NOISE_SHARE: f64 = 0.8;

const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AuxModel {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub class_count: usize,
    /// `embed_dim x input_dim`, row-major. Frozen.
    pub embedder: Vec<f64>,
    /// `class_count x embed_dim`. Frozen.
    pub prototypes: Vec<f64>,
    /// `context_count x embed_dim`. The only trainable block.
    pub context: Vec<f64>,
    pub context_count: usize,
    pub tau: f64,
    /// When set, [`AuxModel::prompt_grad_step`] refuses to update.
    pub prompt_frozen: bool,
}

/// Intermediate values of one prediction, kept for the context gradient.
#[derive(Debug, Clone)]
pub struct AuxTrace {
    unit_embedding: Vec<f64>,
    shifted: Vec<f64>,
    shifted_norms: Vec<f64>,
    pub cosines: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn build_aux(
    pretrain: &Dataset,
    embed_dim: usize,
    tau: f64,
    context_count: usize,
    quality: f64,
    seed: u64,
) -> Result<AuxModel> {
    if embed_dim < 1 || context_count < 1 {
        return Err(CssError::Parameter(
            "embed_dim and context_count must be positive".into(),
        ));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(CssError::Parameter(format!(
            "tau must be positive, got {tau}"
        )));
    }
    if !(0.0..=1.0).contains(&quality) {
        return Err(CssError::Parameter(format!(
            "aux_quality {quality} outside [0, 1]"
        )));
    }
    pretrain.validate()?;
    let (d, e, c) = (pretrain.dim, embed_dim, pretrain.class_count);
    let mut r = rng::rng_for(seed, &[stream::AUX]);
    let scale = 1.0 / (d as f64).sqrt();
    let embedder: Vec<f64> = (0..e * d)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut r))
        .collect();

    let mut means = vec![0.0; c * e];
    let mut counts = vec![0usize; c];
    let mut z = vec![0.0; e];
    for i in 0..pretrain.len() {
        embed_into(&embedder, d, pretrain.x(i), &mut z);
        let y = pretrain.true_labels[i];
        counts[y] += 1;
        net::axpy(1.0, &z, &mut means[y * e..(y + 1) * e]);
    }
    if let Some(missing) = counts.iter().position(|&n| n == 0) {
        return Err(CssError::Coverage(missing));
    }
    for (k, &n) in counts.iter().enumerate() {
        means[k * e..(k + 1) * e]
            .iter_mut()
            .for_each(|v| *v /= n as f64);
    }
    let rms = (means.iter().map(|v| v * v).sum::<f64>() / (c * e) as f64).sqrt();
    let shared: Vec<f64> = (0..e).map(|_| StandardNormal.sample(&mut r)).collect();
    let own = (1.0 - SHARED_NOISE_SHARE * SHARED_NOISE_SHARE).sqrt();
    let amp = (1.0 - quality) * PROTOTYPE_NOISE_SCALE * rms;
    let mut prototypes = vec![0.0; c * e];
    for k in 0..c {
        for j in 0..e {
            let eps: f64 = StandardNormal.sample(&mut r);
            prototypes[k * e + j] =
                quality * means[k * e + j] + amp * (SHARED_NOISE_SHARE * shared[j] + own * eps);
        }
    }
    let model = AuxModel {
        input_dim: d,
        embed_dim: e,
        class_count: c,
        embedder,
        prototypes,
        context: vec![0.0; context_count * e],
        context_count,
        tau,
        prompt_frozen: false,
    };
    model.check_prototypes()?;
    Ok(model)
}

fn embed_into(embedder: &[f64], d: usize, x: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = dot(&embedder[j * d..(j + 1) * d], x);
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

impl AuxModel {
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.embed_dim];
        embed_into(&self.embedder, self.input_dim, x, &mut z);
        z
    }

    /// Mean of the context vectors.
    pub fn context_mean(&self) -> Vec<f64> {
        let e = self.embed_dim;
        let mut m = vec![0.0; e];
        for v in self.context.chunks(e) {
            net::axpy(1.0, v, &mut m);
        }
        m.iter_mut().for_each(|x| *x /= self.context_count as f64);
        m
    }

    /// `t_c = S_c + mean(V)`, row-major `class_count x embed_dim`.
    pub fn effective_prototypes(&self) -> Vec<f64> {
        let shift = self.context_mean();
        let mut t = self.prototypes.clone();
        for row in t.chunks_mut(self.embed_dim) {
            net::axpy(1.0, &shift, row);
        }
        t
    }

    fn check_prototypes(&self) -> Result<()> {
        let t = self.effective_prototypes();
        for (c, row) in t.chunks(self.embed_dim).enumerate() {
            let n = norm(row);
            if !(n > MIN_NORM && n.is_finite()) {
                return Err(CssError::DegenerateInput(format!(
                    "effective prototype {c} has norm {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn trace(&self, x: &[f64]) -> Result<AuxTrace> {
        self.trace_with(x, &self.effective_prototypes())
    }

    /// Like [`AuxModel::trace`] with precomputed effective prototypes.
    pub fn trace_with(&self, x: &[f64], shifted: &[f64]) -> Result<AuxTrace> {
        if x.len() != self.input_dim {
            return Err(CssError::Shape {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut z = self.embed(x);
        let zn = norm(&z);
        if zn.is_nan() || zn <= MIN_NORM {
            return Err(CssError::DegenerateInput(
                "embedded input has zero norm".into(),
            ));
        }
        z.iter_mut().for_each(|v| *v /= zn);
        let shifted_norms: Vec<f64> = shifted.chunks(self.embed_dim).map(norm).collect();
        let cosines: Vec<f64> = shifted
            .chunks(self.embed_dim)
            .zip(&shifted_norms)
            .map(|(t, n)| dot(&z, t) / n)
            .collect();
        let logits: Vec<f64> = cosines.iter().map(|c| c / self.tau).collect();
        let probs = softmax(&logits);
        Ok(AuxTrace {
            unit_embedding: z,
            shifted: shifted.to_vec(),
            shifted_norms,
            cosines,
            probs,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.probs)
    }

    /// Auxiliary probability of label `y`.
    pub fn annotated_prob(&self, x: &[f64], y: usize) -> Result<f64> {
        if y >= self.class_count {
            return Err(CssError::Parameter(format!(
                "class {y} outside [0, {})",
                self.class_count
            )));
        }
        Ok(self.predict(x)?[y])
    }

    /// Given the gradient on the softmax logits (`cos / tau`), accumulate the
    /// gradient with respect to the context mean into `d_shift`.
    pub fn backward_shift(&self, trace: &AuxTrace, d_logits: &[f64], d_shift: &mut [f64]) {
        let e = self.embed_dim;
        for (c, &g) in d_logits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let d_cos = g / self.tau;
            let t = &trace.shifted[c * e..(c + 1) * e];
            let n = trace.shifted_norms[c];
            let cos = trace.cosines[c];
            for ((d, &zj), &tj) in d_shift.iter_mut().zip(&trace.unit_embedding).zip(t) {
                *d += d_cos * (zj / n - cos * tj / (n * n));
            }
        }
    }

    /// Spread a context-mean gradient over the `M` context vectors.
    pub fn expand_shift_grad(&self, d_shift: &[f64]) -> Vec<f64> {
        let m = self.context_count as f64;
        let mut g = Vec::with_capacity(self.context.len());
        for _ in 0..self.context_count {
            g.extend(d_shift.iter().map(|v| v / m));
        }
        g
    }

    /// Plain gradient step on the context vectors only.
    pub fn prompt_grad_step(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if self.prompt_frozen {
            return Err(CssError::Parameter("prompt is frozen".into()));
        }
        if grad.len() != self.context.len() {
            return Err(CssError::Shape {
                expected: self.context.len(),
                got: grad.len(),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(CssError::Divergence {
                phase: "prompt".into(),
                epoch: 0,
                batch: 0,
                detail: format!(
                    "non-finite gradient on context vector {}",
                    i / self.embed_dim
                ),
            });
        }
        for (v, g) in self.context.iter_mut().zip(grad) {
            *v -= lr * g;
        }
        Ok(())
    }

    /// Checksum of the frozen blocks (embedder and prototypes).
    pub fn frozen_checksum(&self) -> u64 {
        net::checksum(&self.embedder) ^ net::checksum(&self.prototypes).rotate_left(1)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# css aux checkpoint v1\n");
        let _ = writeln!(
            s,
            "dims {} {} {} {}",
            self.input_dim, self.embed_dim, self.class_count, self.context_count
        );
        let _ = writeln!(s, "tau {:?}", self.tau);
        let _ = writeln!(s, "prompt_frozen {}", self.prompt_frozen);
        net::write_tensor(
            &mut s,
            "embedder",
            &[self.embed_dim, self.input_dim],
            &self.embedder,
        );
        net::write_tensor(
            &mut s,
            "prototypes",
            &[self.class_count, self.embed_dim],
            &self.prototypes,
        );
        net::write_tensor(
            &mut s,
            "context",
            &[self.context_count, self.embed_dim],
            &self.context,
        );
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let bad = |d: &str| CssError::format(origin, d.to_string());
        let mut lines = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let field = |line: Option<&str>, tag: &str| -> Result<Vec<String>> {
            let mut it = line
                .ok_or_else(|| bad(&format!("missing {tag}")))?
                .split_whitespace();
            if it.next() != Some(tag) {
                return Err(bad(&format!("expected {tag}")));
            }
            Ok(it.map(String::from).collect())
        };
        let dims: Vec<usize> = field(lines.next(), "dims")?
            .iter()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad dims"))?;
        if dims.len() != 4 {
            return Err(bad("dims needs input embed classes contexts"));
        }
        let tau: f64 = field(lines.next(), "tau")?
            .first()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("bad tau"))?;
        let prompt_frozen: bool = field(lines.next(), "prompt_frozen")?
            .first()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("bad prompt_frozen"))?;
        let tensors = net::read_tensors(&mut lines, origin)?;
        let [d, e, c, m] = [dims[0], dims[1], dims[2], dims[3]];
        let expect = [
            (format!("tensor embedder {e} {d}"), e * d),
            (format!("tensor prototypes {c} {e}"), c * e),
            (format!("tensor context {m} {e}"), m * e),
        ];
        if tensors.len() != 3 {
            return Err(bad("expected embedder, prototypes, context"));
        }
        for ((h, v), (want, n)) in tensors.iter().zip(&expect) {
            if h != want || v.len() != *n {
                return Err(bad(&format!("expected `{want}`, found `{h}`")));
            }
        }
        let mut it = tensors.into_iter().map(|(_, v)| v);
        Ok(Self {
            input_dim: d,
            embed_dim: e,
            class_count: c,
            embedder: it.next().unwrap(),
            prototypes: it.next().unwrap(),
            context: it.next().unwrap(),
            context_count: m,
            tau,
            prompt_frozen,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| CssError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CssError::io(path, e))?;
        Self::from_text(&text, path)
    }
}
