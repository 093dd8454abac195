//! Fast invariant checks behind `css selfcheck`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::aux_model::{build_aux, AuxModel};
use crate::data::{inject_noise, NoiseSpec, Split, SyntheticSource};
use crate::losses::{
    contrastive_loss, loss_labeled_dnn, loss_labeled_prompt, loss_unlabeled_dnn,
    loss_unlabeled_prompt, pseudo_labels_dnn, pseudo_labels_prompt, reg_loss,
};
use crate::metrics::{auc, brute_force_auc};
use crate::mixture::{fit_gmm2, sample_mixture2, EmConfig};
use crate::net::{gradient_check, Mlp};
use crate::rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;

type LossFn<'a> = Box<dyn Fn(&[f64]) -> (f64, Vec<f64>) + 'a>;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Run every check in a fixed order.
pub fn run_all() -> Vec<CheckResult> {
    vec![em_monotone(), gradients(), auc_oracle(), noise_statistics()]
}

/// EM on a known mixture: log-likelihood never drops and the parameters are
/// recovered.
pub fn em_monotone() -> CheckResult {
    let mut worst_drop = 0.0f64;
    let mut worst_mean = 0.0f64;
    let mut worst_weight = 0.0f64;
    let weights = [0.35, 0.65];
    let means = [[0.2, 0.8], [0.7, 0.25]];
    for seed in 0..5 {
        let (pts, _) = sample_mixture2(
            5000,
            weights,
            means,
            [[0.08, 0.02, 0.09], [0.1, -0.03, 0.07]],
            seed,
        );
        let p = match fit_gmm2(&pts, &EmConfig::default(), seed) {
            Ok(p) => p,
            Err(e) => {
                return CheckResult {
                    name: "em_monotone",
                    passed: false,
                    detail: format!("seed {seed}: {e}"),
                }
            }
        };
        for w in p.log_likelihood_trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        let k = p.clean_component;
        for (fit, want) in [(k, 0), (1 - k, 1)] {
            for (got, truth) in p.means[fit].iter().zip(&means[want]) {
                worst_mean = worst_mean.max((got - truth).abs());
            }
            worst_weight = worst_weight.max((p.weights[fit] - weights[want]).abs());
        }
    }
    CheckResult {
        name: "em_monotone",
        passed: worst_drop <= 1e-9 && worst_mean < 0.05 && worst_weight < 0.05,
        detail: format!(
            "max log-likelihood drop {worst_drop:.2e}, mean error {worst_mean:.4}, weight error {worst_weight:.4}"
        ),
    }
}

fn gauss(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::rng_from(seed);
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut r)).collect())
        .collect()
}

fn with_params(net: &Mlp, p: &[f64]) -> Mlp {
    let mut m = net.clone();
    m.params.copy_from_slice(p);
    m
}

fn with_context(aux: &AuxModel, p: &[f64]) -> AuxModel {
    let mut a = aux.clone();
    a.context.copy_from_slice(p);
    a
}

/// Worst relative gradient error of each loss over three initializations.
pub fn gradient_errors() -> Vec<(&'static str, f64)> {
    let mut worst = [0.0f64; 6];
    let xs = gauss(6, 4, 1);
    let ys = [0, 1, 2, 2, 1, 0];
    let weak = gauss(8, 4, 3);
    let strong = gauss(8, 4, 4);
    let src = SyntheticSource::new(3, 4, 3.0, 5).expect("valid source");
    let pre = src.draw(Split::AuxPretrain, 20, 1).expect("valid draw");
    let data = src.draw(Split::Train, 3, 2).expect("valid draw");
    let aux_x: Vec<Vec<f64>> = (0..data.len()).map(|i| data.x(i).to_vec()).collect();
    let aux_strong: Vec<Vec<f64>> = aux_x
        .iter()
        .map(|x| x.iter().map(|v| v * 0.8 + 0.1).collect())
        .collect();
    for init in 0..3u64 {
        let net = Mlp::new(&[4, 7, 6, 3], 100 + init).expect("valid dims");
        let mut sharp = net.clone();
        let head = sharp.head_range();
        sharp.params[head].iter_mut().for_each(|v| *v *= 8.0);
        let pseudo = pseudo_labels_dnn(&sharp, &weak, 0.5);
        let checks: [(usize, &Mlp, LossFn<'_>); 4] = [
            (
                0,
                &net,
                Box::new(|p: &[f64]| {
                    let l = loss_labeled_dnn(&with_params(&net, p), &xs, &ys);
                    (l.loss, l.grad)
                }),
            ),
            (
                1,
                &sharp,
                Box::new(|p: &[f64]| {
                    let l = loss_unlabeled_dnn(&with_params(&sharp, p), &strong, &pseudo, false);
                    (l.loss, l.grad)
                }),
            ),
            (
                2,
                &net,
                Box::new(|p: &[f64]| {
                    let l = contrastive_loss(&with_params(&net, p), &weak, &strong, 0.5)
                        .expect("batch of eight");
                    (l.loss, l.grad)
                }),
            ),
            (
                3,
                &net,
                Box::new(|p: &[f64]| {
                    let l = reg_loss(&with_params(&net, p), &weak);
                    (l.loss, l.grad)
                }),
            ),
        ];
        for (slot, base, f) in &checks {
            let err = gradient_check(&base.params, f, GRAD_EPS, 0, 0);
            worst[*slot] = worst[*slot].max(err);
        }

        let mut aux = build_aux(&pre, 6, 0.07, 4, 0.6, init).expect("valid aux");
        let mut r = rng::rng_from(init);
        aux.context
            .iter_mut()
            .for_each(|v| *v = 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut r));
        let labels = &data.observed_labels;
        let err = gradient_check(
            &aux.context,
            |p| match loss_labeled_prompt(&with_context(&aux, p), &aux_x, labels) {
                Ok(l) => (l.loss, l.grad),
                Err(_) => (f64::NAN, vec![f64::NAN; p.len()]),
            },
            GRAD_EPS,
            0,
            0,
        );
        worst[4] = worst[4].max(err);
        let pseudo = pseudo_labels_prompt(&aux, &aux_x, 0.6).expect("finite aux outputs");
        let err = gradient_check(
            &aux.context,
            |p| match loss_unlabeled_prompt(&with_context(&aux, p), &aux_strong, &pseudo, false) {
                Ok(l) => (l.loss, l.grad),
                Err(_) => (f64::NAN, vec![f64::NAN; p.len()]),
            },
            GRAD_EPS,
            0,
            0,
        );
        worst[5] = worst[5].max(err);
    }
    vec![
        ("labeled", worst[0]),
        ("unlabeled", worst[1]),
        ("contrastive", worst[2]),
        ("regularizer", worst[3]),
        ("prompt_labeled", worst[4]),
        ("prompt_unlabeled", worst[5]),
    ]
}

pub fn gradients() -> CheckResult {
    let errs = gradient_errors();
    let passed = errs.iter().all(|(_, e)| *e < GRAD_TOL);
    let detail = errs
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    CheckResult {
        name: "gradients",
        passed,
        detail: format!("max relative error: {detail}"),
    }
}

/// Rank-based AUC against the pairwise definition on random instances with
/// ties.
pub fn auc_oracle() -> CheckResult {
    let mut r = rng::rng_from(17);
    let mut mismatches = 0;
    let trials = 50;
    for _ in 0..trials {
        let n = r.random_range(2..=200);
        let mut truth: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        truth[0] = true;
        truth[1] = false;
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(r.random_range(0..20u8)) / 20.0)
            .collect();
        let fast = auc(&scores, &truth).map(f64::to_bits).ok();
        if fast != Some(brute_force_auc(&scores, &truth).to_bits()) {
            mismatches += 1;
        }
    }
    CheckResult {
        name: "auc_oracle",
        passed: mismatches == 0,
        detail: format!("{mismatches} of {trials} instances differ from the pairwise count"),
    }
}

/// Symmetric noise lands within three binomial standard deviations of
/// `r (C - 1) / C`; asymmetric noise only follows the flip map.
pub fn noise_statistics() -> CheckResult {
    let (c, per_class, rate) = (10, 500, 0.6);
    let mut worst_z = 0.0f64;
    let mut off_map = 0;
    for seed in 0..10 {
        let src = match SyntheticSource::new(c, 8, 4.0, seed) {
            Ok(s) => s,
            Err(e) => {
                return CheckResult {
                    name: "noise_statistics",
                    passed: false,
                    detail: e.to_string(),
                }
            }
        };
        let clean = src.draw(Split::Train, per_class, 0).expect("valid draw");
        let n = clean.len() as f64;
        let noisy = inject_noise(&clean, &NoiseSpec::symmetric(rate), seed).expect("valid noise");
        let p = rate * (c as f64 - 1.0) / c as f64;
        let z = (noisy.mismatch_count() as f64 / n - p) / (p * (1.0 - p) / n).sqrt();
        worst_z = worst_z.max(z.abs());

        let map = src.nearest_class_flip_map();
        let asym = inject_noise(&clean, &NoiseSpec::asymmetric(0.4, map.clone()), seed)
            .expect("valid noise");
        off_map += (0..asym.len())
            .filter(|&i| {
                let (y, t) = (asym.observed_labels[i], asym.true_labels[i]);
                y != t && Some(y) != map[t]
            })
            .count();
    }
    CheckResult {
        name: "noise_statistics",
        passed: worst_z <= 3.0 && off_map == 0,
        detail: format!(
            "worst symmetric z-score {worst_z:.2}, {off_map} asymmetric flips off the map"
        ),
    }
}
