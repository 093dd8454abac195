//! Two-component Gaussian mixtures fitted by EM, in one and two dimensions.
//!
//! The clean component is always the one with the smaller mean along the
//! loss axis. Covariances are kept positive definite by clipping their
//! eigenvalues at [`COV_FLOOR`], which is the exact constrained maximizer of
//! the M-step, so the log-likelihood trace stays monotone.

use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CssError, Result};
use crate::rng::{self, stream};

pub const COV_FLOOR: f64 = 1e-6;
/// A component whose total responsibility falls below this has collapsed.
pub const RESP_FLOOR: f64 = 1e-8;
pub const MIN_SAMPLES: usize = 10;
const MAX_RESTARTS: usize = 3;

/// Per-sample selection features: normalized loss and auxiliary probability
/// of the observed label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaVector {
    pub loss: f64,
    pub aux: f64,
}

impl OmegaVector {
    pub fn new(loss: f64, aux: f64) -> Self {
        Self { loss, aux }
    }

    fn as_array(&self) -> [f64; 2] {
        [self.loss, self.aux]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// Tie the two covariance matrices together (pooled M-step).
    pub shared_covariance: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-8,
            shared_covariance: false,
        }
    }
}

/// Min-max normalization to `[0, 1]`; constant input maps to zeros.
pub fn normalize_losses(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return vec![0.0; raw.len()];
    }
    raw.iter()
        .map(|v| ((v - lo) / span).clamp(0.0, 1.0))
        .collect()
}

/// `beta * p_loss + (1 - beta) * p_aux`.
pub fn weighted_1d_clean_prob(p_loss: f64, p_aux: f64, beta: f64) -> f64 {
    beta * p_loss + (1.0 - beta) * p_aux
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

// ---------------------------------------------------------------------------
// 2D

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Cov2 {
    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = 0.5 * (self.xx + self.yy);
        let r = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (m - r, m + r)
    }

    /// Clip eigenvalues from below at `floor`.
    pub fn floored(&self, floor: f64) -> Cov2 {
        let (l1, l2) = self.eigenvalues();
        if l1 >= floor {
            return *self;
        }
        // unit eigenvector of the larger eigenvalue
        let (vx, vy) = if self.xy.abs() > 0.0 {
            let (a, b) = (l2 - self.yy, self.xy);
            let n = (a * a + b * b).sqrt();
            (a / n, b / n)
        } else if self.xx >= self.yy {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let (ux, uy) = (-vy, vx);
        let (l1, l2) = (l1.max(floor), l2.max(floor));
        Cov2 {
            xx: l2 * vx * vx + l1 * ux * ux,
            xy: l2 * vx * vy + l1 * ux * uy,
            yy: l2 * vy * vy + l1 * uy * uy,
        }
    }

    fn log_pdf(&self, mean: &[f64; 2], p: &[f64; 2]) -> f64 {
        let det = self.det();
        let (dx, dy) = (p[0] - mean[0], p[1] - mean[1]);
        let quad = (self.yy * dx * dx - 2.0 * self.xy * dx * dy + self.xx * dy * dy) / det;
        -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * quad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm2Params {
    pub weights: [f64; 2],
    pub means: [[f64; 2]; 2],
    pub covs: [Cov2; 2],
    pub clean_component: usize,
    /// Mean per-sample log-likelihood after each E-step.
    pub log_likelihood_trace: Vec<f64>,
    pub restarts: usize,
}

impl Gmm2Params {
    /// Posterior probability of each component at `w`.
    pub fn responsibilities(&self, w: &OmegaVector) -> [f64; 2] {
        let p = w.as_array();
        let l0 = self.weights[0].ln() + self.covs[0].log_pdf(&self.means[0], &p);
        let l1 = self.weights[1].ln() + self.covs[1].log_pdf(&self.means[1], &p);
        let z = log_sum_exp2(l0, l1);
        if !z.is_finite() {
            return [0.5, 0.5];
        }
        [(l0 - z).exp(), (l1 - z).exp()]
    }

    pub fn log_pdf(&self, w: &OmegaVector) -> f64 {
        let p = w.as_array();
        log_sum_exp2(
            self.weights[0].ln() + self.covs[0].log_pdf(&self.means[0], &p),
            self.weights[1].ln() + self.covs[1].log_pdf(&self.means[1], &p),
        )
    }

    /// Index the clean component by the smaller loss-axis mean.
    fn assign_clean(&mut self) {
        self.clean_component = if self.means[1][0] < self.means[0][0] {
            1
        } else {
            0
        };
    }
}

/// Posterior probability that `w` belongs to the clean component.
pub fn posterior_clean(params: &Gmm2Params, w: &OmegaVector) -> f64 {
    params.responsibilities(w)[params.clean_component]
}

struct Moments2 {
    weight: f64,
    mean: [f64; 2],
    cov: Cov2,
}

fn weighted_moments2(points: &[[f64; 2]], resp: impl Fn(usize) -> f64) -> Moments2 {
    let mut w = 0.0;
    let mut m = [0.0; 2];
    for (i, p) in points.iter().enumerate() {
        let r = resp(i);
        w += r;
        m[0] += r * p[0];
        m[1] += r * p[1];
    }
    m[0] /= w;
    m[1] /= w;
    let mut c = Cov2 {
        xx: 0.0,
        xy: 0.0,
        yy: 0.0,
    };
    for (i, p) in points.iter().enumerate() {
        let r = resp(i);
        let (dx, dy) = (p[0] - m[0], p[1] - m[1]);
        c.xx += r * dx * dx;
        c.xy += r * dx * dy;
        c.yy += r * dy * dy;
    }
    c.xx /= w;
    c.xy /= w;
    c.yy /= w;
    Moments2 {
        weight: w,
        mean: m,
        cov: c,
    }
}

fn init_by_loss_halves(points: &[[f64; 2]]) -> Gmm2Params {
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then(points[a][1].total_cmp(&points[b][1]))
            .then(a.cmp(&b))
    });
    let mut low = vec![false; n];
    for &i in &order[..n / 2] {
        low[i] = true;
    }
    let a = weighted_moments2(points, |i| if low[i] { 1.0 } else { 0.0 });
    let b = weighted_moments2(points, |i| if low[i] { 0.0 } else { 1.0 });
    Gmm2Params {
        weights: [a.weight / n as f64, b.weight / n as f64],
        means: [a.mean, b.mean],
        covs: [a.cov.floored(COV_FLOOR), b.cov.floored(COV_FLOOR)],
        clean_component: 0,
        log_likelihood_trace: Vec::new(),
        restarts: 0,
    }
}

fn init_random(points: &[[f64; 2]], seed: u64, attempt: usize) -> Gmm2Params {
    let mut r = rng::rng_for(seed, &[stream::GMM, attempt as u64]);
    let picks = index::sample(&mut r, points.len(), 2);
    let all = weighted_moments2(points, |_| 1.0).cov.floored(COV_FLOOR);
    Gmm2Params {
        weights: [0.5, 0.5],
        means: [points[picks.index(0)], points[picks.index(1)]],
        covs: [all, all],
        clean_component: 0,
        log_likelihood_trace: Vec::new(),
        restarts: attempt,
    }
}

enum EmOutcome<P> {
    Converged(P),
    Collapsed,
}

fn run_em2(points: &[[f64; 2]], mut p: Gmm2Params, cfg: &EmConfig) -> EmOutcome<Gmm2Params> {
    let n = points.len();
    let mut resp = vec![[0.0f64; 2]; n];
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..cfg.max_iters.max(1) {
        // E-step
        let mut ll = 0.0;
        let lw = [p.weights[0].ln(), p.weights[1].ln()];
        for (i, pt) in points.iter().enumerate() {
            let l0 = lw[0] + p.covs[0].log_pdf(&p.means[0], pt);
            let l1 = lw[1] + p.covs[1].log_pdf(&p.means[1], pt);
            let z = log_sum_exp2(l0, l1);
            ll += z;
            resp[i] = [(l0 - z).exp(), (l1 - z).exp()];
        }
        let ll = ll / n as f64;
        if !ll.is_finite() {
            return EmOutcome::Collapsed;
        }
        p.log_likelihood_trace.push(ll);
        if ll - prev < cfg.tol {
            break;
        }
        prev = ll;
        // M-step
        let mass = [
            resp.iter().map(|r| r[0]).sum::<f64>(),
            resp.iter().map(|r| r[1]).sum::<f64>(),
        ];
        if mass[0] < RESP_FLOOR || mass[1] < RESP_FLOOR {
            return EmOutcome::Collapsed;
        }
        let m0 = weighted_moments2(points, |i| resp[i][0]);
        let m1 = weighted_moments2(points, |i| resp[i][1]);
        p.weights = [m0.weight / n as f64, m1.weight / n as f64];
        p.means = [m0.mean, m1.mean];
        if cfg.shared_covariance {
            let f0 = m0.weight / n as f64;
            let f1 = m1.weight / n as f64;
            let pooled = Cov2 {
                xx: f0 * m0.cov.xx + f1 * m1.cov.xx,
                xy: f0 * m0.cov.xy + f1 * m1.cov.xy,
                yy: f0 * m0.cov.yy + f1 * m1.cov.yy,
            }
            .floored(COV_FLOOR);
            p.covs = [pooled, pooled];
        } else {
            p.covs = [m0.cov.floored(COV_FLOOR), m1.cov.floored(COV_FLOOR)];
        }
    }
    EmOutcome::Converged(p)
}

fn check_sample_count(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(CssError::InsufficientData {
            needed: MIN_SAMPLES,
            got: n,
        });
    }
    Ok(())
}

pub fn fit_gmm2(omegas: &[OmegaVector], cfg: &EmConfig, seed: u64) -> Result<Gmm2Params> {
    check_sample_count(omegas.len())?;
    let points: Vec<[f64; 2]> = omegas.iter().map(OmegaVector::as_array).collect();
    if points
        .iter()
        .any(|p| !(p[0].is_finite() && p[1].is_finite()))
    {
        return Err(CssError::Parameter("non-finite omega vector".into()));
    }
    let spread = points
        .iter()
        .map(|p| (p[0] - points[0][0]).abs().max((p[1] - points[0][1]).abs()))
        .fold(0.0, f64::max);
    if spread == 0.0 {
        return Err(CssError::DegenerateFit("all points identical".into()));
    }
    let mut init = init_by_loss_halves(&points);
    for attempt in 0..=MAX_RESTARTS {
        if attempt > 0 {
            init = init_random(&points, seed, attempt);
        }
        if let EmOutcome::Converged(mut p) = run_em2(&points, init.clone(), cfg) {
            p.assign_clean();
            return Ok(p);
        }
    }
    Err(CssError::DegenerateFit(format!(
        "component collapsed after {MAX_RESTARTS} restarts"
    )))
}

// ---------------------------------------------------------------------------
// 1D

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm1Params {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub vars: [f64; 2],
    pub clean_component: usize,
    pub log_likelihood_trace: Vec<f64>,
    pub restarts: usize,
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * (x - mean).powi(2) / var
}

impl Gmm1Params {
    pub fn responsibilities(&self, x: f64) -> [f64; 2] {
        let l0 = self.weights[0].ln() + log_normal(x, self.means[0], self.vars[0]);
        let l1 = self.weights[1].ln() + log_normal(x, self.means[1], self.vars[1]);
        let z = log_sum_exp2(l0, l1);
        if !z.is_finite() {
            return [0.5, 0.5];
        }
        [(l0 - z).exp(), (l1 - z).exp()]
    }

    /// Posterior of the smaller-mean component.
    pub fn posterior_clean(&self, x: f64) -> f64 {
        self.responsibilities(x)[self.clean_component]
    }
}

fn weighted_moments1(xs: &[f64], resp: impl Fn(usize) -> f64) -> (f64, f64, f64) {
    let mut w = 0.0;
    let mut m = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let r = resp(i);
        w += r;
        m += r * x;
    }
    m /= w;
    let v = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| resp(i) * (x - m).powi(2))
        .sum::<f64>()
        / w;
    (w, m, v)
}

fn run_em1(xs: &[f64], mut p: Gmm1Params, cfg: &EmConfig) -> EmOutcome<Gmm1Params> {
    let n = xs.len();
    let mut resp = vec![[0.0f64; 2]; n];
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..cfg.max_iters.max(1) {
        let mut ll = 0.0;
        let lw = [p.weights[0].ln(), p.weights[1].ln()];
        for (i, &x) in xs.iter().enumerate() {
            let l0 = lw[0] + log_normal(x, p.means[0], p.vars[0]);
            let l1 = lw[1] + log_normal(x, p.means[1], p.vars[1]);
            let z = log_sum_exp2(l0, l1);
            ll += z;
            resp[i] = [(l0 - z).exp(), (l1 - z).exp()];
        }
        let ll = ll / n as f64;
        if !ll.is_finite() {
            return EmOutcome::Collapsed;
        }
        p.log_likelihood_trace.push(ll);
        if ll - prev < cfg.tol {
            break;
        }
        prev = ll;
        let mass = [
            resp.iter().map(|r| r[0]).sum::<f64>(),
            resp.iter().map(|r| r[1]).sum::<f64>(),
        ];
        if mass[0] < RESP_FLOOR || mass[1] < RESP_FLOOR {
            return EmOutcome::Collapsed;
        }
        let (w0, m0, v0) = weighted_moments1(xs, |i| resp[i][0]);
        let (w1, m1, v1) = weighted_moments1(xs, |i| resp[i][1]);
        p.weights = [w0 / n as f64, w1 / n as f64];
        p.means = [m0, m1];
        p.vars = if cfg.shared_covariance {
            let v = ((w0 * v0 + w1 * v1) / n as f64).max(COV_FLOOR);
            [v, v]
        } else {
            [v0.max(COV_FLOOR), v1.max(COV_FLOOR)]
        };
    }
    EmOutcome::Converged(p)
}

pub fn fit_gmm1(values: &[f64], cfg: &EmConfig, seed: u64) -> Result<Gmm1Params> {
    check_sample_count(values.len())?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CssError::Parameter("non-finite value".into()));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(CssError::DegenerateFit("all values identical".into()));
    }
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut low = vec![false; n];
    for &i in &order[..n / 2] {
        low[i] = true;
    }
    let (w0, m0, v0) = weighted_moments1(values, |i| if low[i] { 1.0 } else { 0.0 });
    let (w1, m1, v1) = weighted_moments1(values, |i| if low[i] { 0.0 } else { 1.0 });
    let mut init = Gmm1Params {
        weights: [w0 / n as f64, w1 / n as f64],
        means: [m0, m1],
        vars: [v0.max(COV_FLOOR), v1.max(COV_FLOOR)],
        clean_component: 0,
        log_likelihood_trace: Vec::new(),
        restarts: 0,
    };
    let (_, _, all_var) = weighted_moments1(values, |_| 1.0);
    for attempt in 0..=MAX_RESTARTS {
        if attempt > 0 {
            let mut r = rng::rng_for(seed, &[stream::GMM, 100 + attempt as u64]);
            let picks = index::sample(&mut r, n, 2);
            init = Gmm1Params {
                weights: [0.5, 0.5],
                means: [values[picks.index(0)], values[picks.index(1)]],
                vars: [all_var.max(COV_FLOOR); 2],
                clean_component: 0,
                log_likelihood_trace: Vec::new(),
                restarts: attempt,
            };
        }
        if let EmOutcome::Converged(mut p) = run_em1(values, init.clone(), cfg) {
            p.clean_component = if p.means[1] < p.means[0] { 1 } else { 0 };
            return Ok(p);
        }
    }
    Err(CssError::DegenerateFit(format!(
        "component collapsed after {MAX_RESTARTS} restarts"
    )))
}

/// Sample from a two-component 2D mixture. `chol[k] = [a, b, c]` is the lower
/// Cholesky factor `[[a, 0], [b, c]]` of component `k`'s covariance. Returns
/// the points and their component indices.
pub fn sample_mixture2(
    n: usize,
    weights: [f64; 2],
    means: [[f64; 2]; 2],
    chol: [[f64; 3]; 2],
    seed: u64,
) -> (Vec<OmegaVector>, Vec<usize>) {
    let mut r = rng::rng_from(seed);
    let mut out = Vec::with_capacity(n);
    let mut comps = Vec::with_capacity(n);
    for _ in 0..n {
        let k = if r.random::<f64>() < weights[0] { 0 } else { 1 };
        let (z1, z2): (f64, f64) = (StandardNormal.sample(&mut r), StandardNormal.sample(&mut r));
        let [a, b, c] = chol[k];
        out.push(OmegaVector::new(
            means[k][0] + a * z1,
            means[k][1] + b * z1 + c * z2,
        ));
        comps.push(k);
    }
    (out, comps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(n: usize, seed: u64) -> Vec<OmegaVector> {
        sample_mixture2(
            n,
            [0.4, 0.6],
            [[0.1, 0.9], [0.9, 0.1]],
            [[0.05, 0.01, 0.05], [0.06, -0.02, 0.04]],
            seed,
        )
        .0
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_losses(&[2.0, 2.0, 2.0]), vec![0.0; 3]);
        assert_eq!(normalize_losses(&[0.0, 5.0, 10.0]), vec![0.0, 0.5, 1.0]);
        let raw = [3.0, -1.0, 7.5, 0.2];
        let n = normalize_losses(&raw);
        for i in 0..4 {
            for j in 0..4 {
                if raw[i] < raw[j] {
                    assert!(n[i] < n[j]);
                }
            }
        }
    }

    #[test]
    fn weighted_blend_examples() {
        assert!((weighted_1d_clean_prob(1.0, 0.0, 0.2) - 0.2).abs() < 1e-15);
        assert_eq!(weighted_1d_clean_prob(0.37, 0.9, 1.0), 0.37);
        assert!((weighted_1d_clean_prob(0.7, 0.7, 0.2) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn floor_clips_only_small_eigenvalues() {
        let c = Cov2 {
            xx: 1.0,
            xy: 1.0,
            yy: 1.0,
        };
        let f = c.floored(1e-3);
        let (l1, l2) = f.eigenvalues();
        assert!((l1 - 1e-3).abs() < 1e-12 && (l2 - 2.0).abs() < 1e-12);
        let ok = Cov2 {
            xx: 2.0,
            xy: 0.3,
            yy: 1.0,
        };
        assert_eq!(ok.floored(1e-3), ok);
    }

    #[test]
    fn recovers_separated_blobs() {
        let w = blobs(2000, 5);
        let p = fit_gmm2(&w, &EmConfig::default(), 0).unwrap();
        let c = p.clean_component;
        let o = 1 - c;
        assert!((p.means[c][0] - 0.1).abs() < 0.03 && (p.means[c][1] - 0.9).abs() < 0.03);
        assert!((p.means[o][0] - 0.9).abs() < 0.03 && (p.means[o][1] - 0.1).abs() < 0.03);
        assert!((p.weights[c] - 0.4).abs() < 0.05);
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for cov in &p.covs {
            assert!(cov.eigenvalues().0 >= COV_FLOOR * (1.0 - 1e-9));
        }
    }

    #[test]
    fn trace_is_monotone() {
        for seed in 0..5 {
            let w = sample_mixture2(
                1500,
                [0.5, 0.5],
                [[0.3, 0.6], [0.6, 0.4]],
                [[0.15, 0.05, 0.1], [0.15, -0.05, 0.12]],
                seed,
            )
            .0;
            let p = fit_gmm2(
                &w,
                &EmConfig {
                    tol: 0.0,
                    max_iters: 100,
                    ..Default::default()
                },
                seed,
            )
            .unwrap();
            for pair in p.log_likelihood_trace.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-9, "{pair:?}");
            }
        }
    }

    #[test]
    fn identical_points_are_degenerate() {
        let w = vec![OmegaVector::new(0.3, 0.3); 50];
        assert!(matches!(
            fit_gmm2(&w, &EmConfig::default(), 0),
            Err(CssError::DegenerateFit(_))
        ));
        assert!(matches!(
            fit_gmm1(&[0.4; 20], &EmConfig::default(), 0),
            Err(CssError::DegenerateFit(_))
        ));
    }

    #[test]
    fn too_few_samples() {
        let w = vec![OmegaVector::new(0.3, 0.3); 9];
        assert!(matches!(
            fit_gmm2(&w, &EmConfig::default(), 0),
            Err(CssError::InsufficientData { needed: 10, got: 9 })
        ));
    }

    #[test]
    fn posterior_at_clean_mean() {
        let p = fit_gmm2(&blobs(2000, 1), &EmConfig::default(), 0).unwrap();
        let m = p.means[p.clean_component];
        assert!(posterior_clean(&p, &OmegaVector::new(m[0], m[1])) > 0.99);
        let r = p.responsibilities(&OmegaVector::new(0.5, 0.5));
        assert!((r[0] + r[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_components_give_half() {
        let cov = Cov2 {
            xx: 0.1,
            xy: 0.02,
            yy: 0.2,
        };
        let p = Gmm2Params {
            weights: [0.5, 0.5],
            means: [[0.4, 0.6], [0.4, 0.6]],
            covs: [cov, cov],
            clean_component: 0,
            log_likelihood_trace: vec![],
            restarts: 0,
        };
        assert!((posterior_clean(&p, &OmegaVector::new(0.9, 0.1)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn relabeling_does_not_change_posterior() {
        let p = fit_gmm2(&blobs(1000, 2), &EmConfig::default(), 0).unwrap();
        let swapped = Gmm2Params {
            weights: [p.weights[1], p.weights[0]],
            means: [p.means[1], p.means[0]],
            covs: [p.covs[1], p.covs[0]],
            clean_component: 1 - p.clean_component,
            log_likelihood_trace: vec![],
            restarts: 0,
        };
        let mut again = swapped.clone();
        again.assign_clean();
        assert_eq!(again.clean_component, swapped.clean_component);
        for w in blobs(20, 9) {
            assert!((posterior_clean(&p, &w) - posterior_clean(&swapped, &w)).abs() < 1e-12);
        }
    }

    fn two_clusters_1d(n: usize, m: [f64; 2], s: [f64; 2], w0: f64, seed: u64) -> Vec<f64> {
        let mut r = rng::rng_from(seed);
        (0..n)
            .map(|_| {
                let k = if r.random::<f64>() < w0 { 0 } else { 1 };
                let z: f64 = StandardNormal.sample(&mut r);
                m[k] + s[k] * z
            })
            .collect()
    }

    #[test]
    fn gmm1_recovers_means_and_weights() {
        let xs = two_clusters_1d(3000, [0.2, 0.75], [0.05, 0.08], 0.3, 3);
        let p = fit_gmm1(&xs, &EmConfig::default(), 0).unwrap();
        let c = p.clean_component;
        assert!((p.means[c] - 0.2).abs() < 0.03);
        assert!((p.means[1 - c] - 0.75).abs() < 0.03);
        assert!((p.weights[c] - 0.3).abs() < 0.05);
        for pair in p.log_likelihood_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9);
        }
    }

    #[test]
    fn gmm1_symmetric_bimodal() {
        let xs = two_clusters_1d(4000, [-1.0, 1.0], [0.3, 0.3], 0.5, 8);
        let p = fit_gmm1(&xs, &EmConfig::default(), 0).unwrap();
        assert!((p.weights[0] - 0.5).abs() < 0.05);
        assert!((p.weights[1] - 0.5).abs() < 0.05);
    }

    #[test]
    fn uninformative_second_axis_matches_1d() {
        // Both components get the same evenly spaced aux values in [0.3, 0.7],
        // assigned in random order: identical marginals, independent of loss.
        let mut r = rng::rng_from(12);
        let n = 4000;
        let comps: Vec<usize> = (0..n)
            .map(|_| usize::from(r.random::<f64>() >= 0.4))
            .collect();
        let (m, s) = ([0.2, 0.7], [0.07, 0.1]);
        let losses: Vec<f64> = comps
            .iter()
            .map(|&k| m[k] + s[k] * Distribution::<f64>::sample(&StandardNormal, &mut r))
            .collect();
        let mut aux = vec![0.0; n];
        for k in 0..2 {
            let idx: Vec<usize> = (0..n).filter(|&i| comps[i] == k).collect();
            let perm = index::sample(&mut r, idx.len(), idx.len());
            for (j, p) in perm.iter().enumerate() {
                aux[idx[p]] = 0.3 + 0.4 * (j as f64 + 0.5) / idx.len() as f64;
            }
        }
        let omegas: Vec<OmegaVector> = losses
            .iter()
            .zip(&aux)
            .map(|(&l, &a)| OmegaVector::new(l, a))
            .collect();
        let p2 = fit_gmm2(&omegas, &EmConfig::default(), 0).unwrap();
        let p1 = fit_gmm1(&losses, &EmConfig::default(), 0).unwrap();
        let worst = omegas
            .iter()
            .map(|w| (posterior_clean(&p2, w) - p1.posterior_clean(w.loss)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.02, "{worst}");
    }

    #[test]
    fn shared_covariance_variant_ties_matrices() {
        let cfg = EmConfig {
            shared_covariance: true,
            ..Default::default()
        };
        let p = fit_gmm2(&blobs(1000, 4), &cfg, 0).unwrap();
        assert_eq!(p.covs[0], p.covs[1]);
        let q = fit_gmm1(
            &two_clusters_1d(500, [0.0, 1.0], [0.1, 0.2], 0.5, 1),
            &cfg,
            0,
        )
        .unwrap();
        assert_eq!(q.vars[0], q.vars[1]);
    }

    #[test]
    fn params_serialize() {
        let p = fit_gmm2(&blobs(500, 4), &EmConfig::default(), 0).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: Gmm2Params = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
