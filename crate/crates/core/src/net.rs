//! Feed-forward classifier `h(f(x))`: a tanh feature extractor `f` followed by
//! a linear head `h`, hand-written backprop, and SGD with momentum.
//!
//! All parameters live in one flat vector. Layer `l` owns an input-major
//! weight block of shape `dims[l] x dims[l + 1]` followed by its bias. The
//! last layer is the head; everything before it is the feature extractor.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CssError, Result};
use crate::rng;

/// Floor applied to probabilities inside `log`.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    pub params: Vec<f64>,
    blocks: Vec<LayerBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerBlock {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Forward pass cache: `acts[0]` is the input, `acts[l]` the output of hidden
/// layer `l`. The last entry is the feature vector `f(x)`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub acts: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Trace {
    pub fn features(&self) -> &[f64] {
        self.acts.last().expect("trace always holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub features: Vec<f64>,
}

impl Mlp {
    /// `dims = [input, hidden.., classes]`; at least one hidden layer.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 3 || dims.contains(&0) {
            return Err(CssError::Parameter(format!(
                "mlp needs input, >= 1 hidden and output widths, all positive; got {dims:?}"
            )));
        }
        let mut blocks = Vec::with_capacity(dims.len() - 1);
        let mut off = 0;
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            blocks.push(LayerBlock {
                w: off,
                b: off + fan_in * fan_out,
                fan_in,
                fan_out,
            });
            off += fan_in * fan_out + fan_out;
        }
        let mut params = vec![0.0; off];
        let mut r = rng::rng_for(seed, &[rng::stream::INIT]);
        for blk in &blocks {
            let bound = 1.0 / (blk.fan_in as f64).sqrt();
            for p in &mut params[blk.w..blk.b] {
                *p = r.random_range(-bound..bound);
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
            blocks,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn class_count(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn feature_dim(&self) -> usize {
        self.dims[self.dims.len() - 2]
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Parameters of the feature extractor `f`.
    pub fn feature_range(&self) -> Range<usize> {
        0..self.blocks.last().unwrap().w
    }

    /// Parameters of the head `h`.
    pub fn head_range(&self) -> Range<usize> {
        self.blocks.last().unwrap().w..self.params.len()
    }

    /// Human-readable name of the block holding parameter `i`.
    pub fn block_name(&self, i: usize) -> String {
        for (l, blk) in self.blocks.iter().enumerate() {
            if i < blk.b {
                return format!("layer{l}.weight");
            }
            if i < blk.b + blk.fan_out {
                return format!("layer{l}.bias");
            }
        }
        "out of range".into()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.input_dim() {
            return Err(CssError::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let t = self.trace(x);
        let features = t.features().to_vec();
        Ok(Prediction {
            logits: t.logits,
            probs: t.probs,
            features,
        })
    }

    /// Forward pass keeping every activation. `x` must have `input_dim()`
    /// entries.
    pub fn trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.input_dim());
        let last = self.blocks.len() - 1;
        let mut acts = Vec::with_capacity(self.blocks.len());
        acts.push(x.to_vec());
        let mut logits = Vec::new();
        for (l, blk) in self.blocks.iter().enumerate() {
            let input = &acts[l];
            let mut out = self.params[blk.b..blk.b + blk.fan_out].to_vec();
            for (i, &xi) in input.iter().enumerate() {
                let row = blk.w + i * blk.fan_out;
                axpy(xi, &self.params[row..row + blk.fan_out], &mut out);
            }
            if l == last {
                logits = out;
            } else {
                out.iter_mut().for_each(|v| *v = tanh(*v));
                acts.push(out);
            }
        }
        let probs = softmax(&logits);
        Trace {
            acts,
            logits,
            probs,
        }
    }

    /// Accumulate into `grad` the parameter gradient given upstream gradients
    /// on the logits and/or on the feature vector.
    pub fn backward(
        &self,
        trace: &Trace,
        d_logits: Option<&[f64]>,
        d_features: Option<&[f64]>,
        grad: &mut [f64],
    ) {
        let last = self.blocks.len() - 1;
        let mut upstream: Vec<f64> = vec![0.0; self.feature_dim()];
        if let Some(dl) = d_logits {
            self.layer_backward(last, trace.features(), dl, grad, Some(&mut upstream));
        }
        if let Some(df) = d_features {
            for (u, d) in upstream.iter_mut().zip(df) {
                *u += d;
            }
        }
        for l in (0..last).rev() {
            let out = &trace.acts[l + 1];
            // through tanh
            let d_pre: Vec<f64> = upstream
                .iter()
                .zip(out)
                .map(|(g, a)| g * (1.0 - a * a))
                .collect();
            let mut next = vec![0.0; if l > 0 { self.blocks[l].fan_in } else { 0 }];
            let next_ref = if l > 0 { Some(&mut next) } else { None };
            self.layer_backward(l, &trace.acts[l], &d_pre, grad, next_ref);
            upstream = next;
        }
    }

    fn layer_backward(
        &self,
        l: usize,
        input: &[f64],
        d_out: &[f64],
        grad: &mut [f64],
        d_input: Option<&mut Vec<f64>>,
    ) {
        let blk = self.blocks[l];
        for (gb, d) in grad[blk.b..blk.b + blk.fan_out].iter_mut().zip(d_out) {
            *gb += d;
        }
        for (i, &xi) in input.iter().enumerate() {
            let row = blk.w + i * blk.fan_out;
            axpy(xi, d_out, &mut grad[row..row + blk.fan_out]);
        }
        if let Some(d_input) = d_input {
            for (i, di) in d_input.iter_mut().enumerate() {
                let row = blk.w + i * blk.fan_out;
                *di += dot(&self.params[row..row + blk.fan_out], d_out);
            }
        }
    }

    /// Text dump: a `dims` line, then one `tensor <name> <shape..>` header per
    /// tensor followed by its values on one line.
    pub fn write_tensors(&self, out: &mut String, prefix: &str, values: &[f64]) {
        for (l, blk) in self.blocks.iter().enumerate() {
            write_tensor(
                out,
                &format!("{prefix}layer{l}.weight"),
                &[blk.fan_in, blk.fan_out],
                &values[blk.w..blk.b],
            );
            write_tensor(
                out,
                &format!("{prefix}layer{l}.bias"),
                &[blk.fan_out],
                &values[blk.b..blk.b + blk.fan_out],
            );
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i + 4 <= n {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut tail = 0.0;
    while i < n {
        tail += a[i] * b[i];
        i += 1;
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// `tanh` through a single `exp`; saturates cleanly at both ends.
#[inline]
fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= s);
    e
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy target: a class index or a soft distribution.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Hard(usize),
    Soft(&'a [f64]),
}

/// `-sum_c y_c log(p_c)` with the log argument clamped at [`LOG_CLAMP`].
pub fn ce_loss(target: Target<'_>, probs: &[f64]) -> f64 {
    match target {
        Target::Hard(y) => -probs[y].max(LOG_CLAMP).ln(),
        Target::Soft(y) => -y
            .iter()
            .zip(probs)
            .filter(|(t, _)| **t != 0.0)
            .map(|(t, p)| t * p.max(LOG_CLAMP).ln())
            .sum::<f64>(),
    }
}

/// Gradient of [`ce_loss`] with respect to the logits, scaled by `weight`
/// and added into `out`: `weight * (p - y)`.
pub fn ce_logit_grad(target: Target<'_>, probs: &[f64], weight: f64, out: &mut [f64]) {
    for (o, p) in out.iter_mut().zip(probs) {
        *o += weight * p;
    }
    match target {
        Target::Hard(y) => out[y] -= weight,
        Target::Soft(y) => {
            for (o, t) in out.iter_mut().zip(y) {
                *o -= weight * t;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// `v <- m v + g + wd theta; theta <- theta - lr v` over matching slices.
pub fn sgd_momentum_step(theta: &mut [f64], velocity: &mut [f64], grad: &[f64], hyper: &SgdHyper) {
    for ((t, v), g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = hyper.momentum * *v + g + hyper.weight_decay * *t;
        *t -= hyper.lr * *v;
    }
}

/// Network weights together with optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub net: Mlp,
    pub velocity: Vec<f64>,
    pub hyper: SgdHyper,
}

impl ClassifierParams {
    pub fn new(net: Mlp, hyper: SgdHyper) -> Self {
        let velocity = vec![0.0; net.param_count()];
        Self {
            net,
            velocity,
            hyper,
        }
    }

    pub fn reset_momentum(&mut self) {
        self.velocity.iter_mut().for_each(|v| *v = 0.0);
    }

    /// One optimizer step over every parameter.
    pub fn backward_and_step(&mut self, grad: &[f64]) -> Result<()> {
        let all = 0..self.net.param_count();
        self.step_range(grad, all)
    }

    /// One optimizer step restricted to `range`; `grad` covers all parameters.
    pub fn step_range(&mut self, grad: &[f64], range: Range<usize>) -> Result<()> {
        if grad.len() != self.net.param_count() {
            return Err(CssError::Shape {
                expected: self.net.param_count(),
                got: grad.len(),
            });
        }
        if let Some(i) = grad[range.clone()].iter().position(|g| !g.is_finite()) {
            let i = i + range.start;
            return Err(CssError::Divergence {
                phase: "optimizer".into(),
                epoch: 0,
                batch: 0,
                detail: format!("non-finite gradient in {}", self.net.block_name(i)),
            });
        }
        sgd_momentum_step(
            &mut self.net.params[range.clone()],
            &mut self.velocity[range.clone()],
            &grad[range],
            &self.hyper,
        );
        Ok(())
    }

    pub fn checksum(&self, range: Range<usize>) -> u64 {
        checksum(&self.net.params[range])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# css classifier checkpoint v1\n");
        let dims: Vec<String> = self.net.dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "dims {}", dims.join(" "));
        let _ = writeln!(
            s,
            "hyper {} {} {}",
            self.hyper.lr, self.hyper.momentum, self.hyper.weight_decay
        );
        self.net.write_tensors(&mut s, "", &self.net.params);
        self.net.write_tensors(&mut s, "velocity.", &self.velocity);
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let bad = |d: &str| CssError::format(origin, d.to_string());
        let mut lines = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let dims: Vec<usize> =
            parse_tagged(lines.next(), "dims").ok_or_else(|| bad("missing dims"))?;
        let hyper: Vec<f64> =
            parse_tagged(lines.next(), "hyper").ok_or_else(|| bad("missing hyper"))?;
        if hyper.len() != 3 {
            return Err(bad("hyper needs lr momentum weight_decay"));
        }
        let mut net = Mlp::new(&dims, 0).map_err(|e| bad(&e.to_string()))?;
        let n = net.param_count();
        let mut params = Vec::with_capacity(n);
        let mut velocity = Vec::with_capacity(n);
        let tensors = read_tensors(&mut lines, origin)?;
        let expected: Vec<String> = {
            let mut v = String::new();
            net.write_tensors(&mut v, "", &net.params.clone());
            v.lines()
                .filter(|l| l.starts_with("tensor "))
                .map(|l| l.to_string())
                .collect()
        };
        if tensors.len() != 2 * expected.len() {
            return Err(bad("wrong tensor count"));
        }
        for (k, (header, values)) in tensors.into_iter().enumerate() {
            let want = &expected[k % expected.len()];
            let want = if k < expected.len() {
                want.clone()
            } else {
                want.replacen("tensor ", "tensor velocity.", 1)
            };
            if header != want {
                return Err(bad(&format!("expected `{want}`, found `{header}`")));
            }
            if k < expected.len() {
                params.extend(values);
            } else {
                velocity.extend(values);
            }
        }
        if params.len() != n || velocity.len() != n {
            return Err(bad("tensor sizes do not match dims"));
        }
        net.params = params;
        Ok(Self {
            net,
            velocity,
            hyper: SgdHyper {
                lr: hyper[0],
                momentum: hyper[1],
                weight_decay: hyper[2],
            },
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

pub(crate) fn write_tensor(out: &mut String, name: &str, shape: &[usize], values: &[f64]) {
    let shape: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let _ = writeln!(out, "tensor {name} {}", shape.join(" "));
    let vals: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    let _ = writeln!(out, "{}", vals.join(" "));
}

fn parse_tagged<T: std::str::FromStr>(line: Option<&str>, tag: &str) -> Option<Vec<T>> {
    let mut it = line?.split_whitespace();
    if it.next()? != tag {
        return None;
    }
    it.map(|t| t.parse().ok()).collect()
}

/// Parse `tensor` header/value line pairs until the input runs out. Returns
/// the header line verbatim and the decoded values, checked against the shape.
pub(crate) fn read_tensors<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    origin: &Path,
) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out = Vec::new();
    while let Some(header) = lines.next() {
        let mut parts = header.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(CssError::format(
                origin,
                format!("expected tensor header, got `{header}`"),
            ));
        }
        let _name = parts
            .next()
            .ok_or_else(|| CssError::format(origin, "tensor without name"))?;
        let size: usize = parts
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| CssError::format(origin, format!("bad shape in `{header}`")))?
            .iter()
            .product();
        let body = lines.next().unwrap_or("");
        let values = body
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| CssError::format(origin, format!("bad values for `{header}`")))?;
        if values.len() != size {
            return Err(CssError::format(
                origin,
                format!("`{header}` declares {size} values, found {}", values.len()),
            ));
        }
        out.push((header.to_string(), values));
    }
    Ok(out)
}

/// FNV-1a over the bit patterns.
pub fn checksum(values: &[f64]) -> u64 {
    values.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
        v.to_bits()
            .to_le_bytes()
            .iter()
            .fold(h, |h, b| (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3))
    })
}

/// Compare an analytic gradient with central finite differences at up to
/// `sample` randomly chosen coordinates (all of them when `sample` is 0 or
/// exceeds the parameter count). Returns the worst relative error
/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps round-off on
/// near-zero coordinates from dominating.
pub fn gradient_check<F>(params: &[f64], loss: F, eps: f64, sample: usize, seed: u64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss(params);
    let n = params.len();
    let coords: Vec<usize> = if sample == 0 || sample >= n {
        (0..n).collect()
    } else {
        let mut r = rng::rng_from(seed);
        index::sample(&mut r, n, sample).into_vec()
    };
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        let orig = p[i];
        p[i] = orig + eps;
        let up = loss(&p).0;
        p[i] = orig - eps;
        let down = loss(&p).0;
        p[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}
