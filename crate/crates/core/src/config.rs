//! Run configuration: flat TOML keys, defaults for every key, validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentSpec, NoiseKind, NoiseSpec};
use crate::error::{CssError, Result};
use crate::losses::SslConfig;
use crate::mixture::EmConfig;
use crate::net::SgdHyper;
use crate::report::fmt_num;
use crate::selection::{Scheme, SelectConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // data
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    /// Size of the auxiliary pretraining draw relative to the train split.
    pub aux_pretrain_fraction: f64,
    pub noise_kind: NoiseKind,
    pub noise_rate: f64,
    /// Asymmetric flip targets, one per class; an entry equal to its own
    /// index leaves that class untouched. Empty means nearest-mean classes.
    pub flip_map: Vec<usize>,

    // auxiliary model
    pub aux_quality: f64,
    pub embed_dim: usize,
    pub context_tokens: usize,
    pub aux_tau: f64,
    pub prompt_tuning: bool,
    pub prompt_lr: f64,

    // classifier
    pub hidden_width: usize,
    pub epochs_pretrain: usize,
    pub epochs_warmup: usize,
    pub epochs_main: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,

    // semi-supervised losses
    pub lambda_u: f64,
    pub lambda_c: f64,
    pub lambda_r: f64,
    pub delta: f64,
    pub tau_con: f64,
    pub sigma_w: f64,
    pub sigma_s: f64,
    pub drop_prob: f64,
    pub soft_pseudo_labels: bool,

    // selection
    pub scheme: Scheme,
    pub epsilon: f64,
    pub beta: f64,
    pub shared_covariance: bool,
    pub gmm_max_iters: usize,
    pub gmm_tol: f64,

    // run
    pub seed: u64,
    /// Main-loop epochs (1-based) whose ROC curve is written out.
    pub roc_epochs: Vec<usize>,
    /// Write per-epoch partition dumps.
    pub dump_partitions: bool,
    /// Fill the `seconds` column; off makes every output byte-reproducible.
    pub record_timing: bool,

    // sweep grid; an empty list falls back to the single-run value
    pub sweep_noise_rates: Vec<f64>,
    pub sweep_schemes: Vec<Scheme>,
    pub sweep_prompt: Vec<bool>,
    pub sweep_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 8,
            per_class: 500,
            test_per_class: 100,
            separation: 4.0,
            aux_pretrain_fraction: 0.2,
            noise_kind: NoiseKind::Symmetric,
            noise_rate: 0.9,
            flip_map: Vec::new(),

            aux_quality: 0.8,
            embed_dim: 32,
            context_tokens: 16,
            aux_tau: 0.07,
            prompt_tuning: true,
            prompt_lr: 0.05,

            hidden_width: 64,
            epochs_pretrain: 20,
            epochs_warmup: 5,
            epochs_main: 40,
            batch_size: 64,
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_epoch: 20,
            lr_decay_factor: 10.0,

            lambda_u: 0.5,
            lambda_c: 0.025,
            lambda_r: 1.0,
            delta: 0.95,
            tau_con: 0.5,
            sigma_w: 0.3,
            sigma_s: 0.8,
            drop_prob: 0.3,
            soft_pseudo_labels: false,

            scheme: Scheme::Gmm2d,
            epsilon: 0.5,
            beta: 0.2,
            shared_covariance: false,
            gmm_max_iters: 200,
            gmm_tol: 1e-8,

            seed: 0,
            roc_epochs: Vec::new(),
            dump_partitions: false,
            record_timing: true,

            sweep_noise_rates: Vec::new(),
            sweep_schemes: Vec::new(),
            sweep_prompt: Vec::new(),
            sweep_seeds: Vec::new(),
        }
    }
}

fn range_err(key: &str, constraint: &str) -> CssError {
    CssError::OutOfRange {
        key: key.into(),
        constraint: constraint.into(),
    }
}

fn check(ok: bool, key: &str, constraint: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(range_err(key, constraint))
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

fn unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CssError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        check(self.classes >= 2, "classes", ">= 2")?;
        check(self.dim >= 1, "dim", ">= 1")?;
        check(self.per_class >= 1, "per_class", ">= 1")?;
        check(self.test_per_class >= 1, "test_per_class", ">= 1")?;
        check(positive(self.separation), "separation", "> 0")?;
        check(
            positive(self.aux_pretrain_fraction) && self.aux_pretrain_fraction <= 10.0,
            "aux_pretrain_fraction",
            "0 < value <= 10",
        )?;
        check(unit(self.noise_rate), "noise_rate", "0 <= value <= 1")?;
        if !self.flip_map.is_empty() {
            check(
                self.flip_map.len() == self.classes,
                "flip_map",
                "one entry per class",
            )?;
            check(
                self.flip_map.iter().all(|&t| t < self.classes),
                "flip_map",
                "entries < classes",
            )?;
        }
        check(unit(self.aux_quality), "aux_quality", "0 <= value <= 1")?;
        check(self.embed_dim >= 2, "embed_dim", ">= 2")?;
        check(self.context_tokens >= 1, "context_tokens", ">= 1")?;
        check(positive(self.aux_tau), "aux_tau", "> 0")?;
        check(
            self.prompt_lr >= 0.0 && self.prompt_lr.is_finite(),
            "prompt_lr",
            ">= 0",
        )?;
        check(self.hidden_width >= 1, "hidden_width", ">= 1")?;
        check(self.batch_size >= 2, "batch_size", ">= 2")?;
        check(positive(self.lr), "lr", "> 0")?;
        check(
            (0.0..1.0).contains(&self.momentum),
            "momentum",
            "0 <= value < 1",
        )?;
        check(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            "weight_decay",
            ">= 0",
        )?;
        check(
            self.lr_decay_factor >= 1.0 && self.lr_decay_factor.is_finite(),
            "lr_decay_factor",
            ">= 1",
        )?;
        self.ssl().validate()?;
        check(unit(self.epsilon), "epsilon", "0 <= value <= 1")?;
        check(unit(self.beta), "beta", "0 <= value <= 1")?;
        check(self.gmm_max_iters >= 1, "gmm_max_iters", ">= 1")?;
        check(
            self.gmm_tol >= 0.0 && self.gmm_tol.is_finite(),
            "gmm_tol",
            ">= 0",
        )?;
        check(
            self.roc_epochs
                .iter()
                .all(|&e| e >= 1 && e <= self.epochs_main),
            "roc_epochs",
            "each in 1..=epochs_main",
        )?;
        check(
            self.sweep_noise_rates.iter().all(|&r| unit(r)),
            "sweep_noise_rates",
            "each in [0, 1]",
        )?;
        Ok(())
    }

    pub fn ssl(&self) -> SslConfig {
        SslConfig {
            lambda_u: self.lambda_u,
            lambda_c: self.lambda_c,
            lambda_r: self.lambda_r,
            delta: self.delta,
            tau_con: self.tau_con,
            augment: AugmentSpec {
                sigma_w: self.sigma_w,
                sigma_s: self.sigma_s,
                drop_prob: self.drop_prob,
            },
            soft_pseudo_labels: self.soft_pseudo_labels,
        }
    }

    pub fn select(&self) -> SelectConfig {
        SelectConfig {
            epsilon: self.epsilon,
            beta: self.beta,
            em: EmConfig {
                max_iters: self.gmm_max_iters,
                tol: self.gmm_tol,
                shared_covariance: self.shared_covariance,
            },
        }
    }

    pub fn hyper(&self) -> SgdHyper {
        SgdHyper {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    /// Classifier learning rate for main-loop epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            self.lr / self.lr_decay_factor
        } else {
            self.lr
        }
    }

    pub fn aux_pretrain_per_class(&self) -> usize {
        ((self.per_class as f64 * self.aux_pretrain_fraction).round() as usize).max(1)
    }

    /// Noise specification; `nearest` supplies the default asymmetric map.
    pub fn noise_spec(&self, nearest: impl FnOnce() -> Vec<Option<usize>>) -> NoiseSpec {
        match self.noise_kind {
            NoiseKind::Symmetric => NoiseSpec::symmetric(self.noise_rate),
            NoiseKind::Asymmetric => {
                let map = if self.flip_map.is_empty() {
                    nearest()
                } else {
                    self.flip_map
                        .iter()
                        .enumerate()
                        .map(|(c, &t)| (t != c).then_some(t))
                        .collect()
                };
                NoiseSpec::asymmetric(self.noise_rate, map)
            }
        }
    }

    pub fn net_dims(&self) -> Vec<usize> {
        vec![self.dim, self.hidden_width, self.hidden_width, self.classes]
    }

    /// Expand the sweep lists into one config per cell, in
    /// noise-scheme-prompt-seed order. An empty list stands for the single
    /// value set elsewhere in the config.
    pub fn sweep_cells(&self) -> Vec<SweepCell> {
        let or_single = |v: &[f64], one: f64| if v.is_empty() { vec![one] } else { v.to_vec() };
        let noises = or_single(&self.sweep_noise_rates, self.noise_rate);
        let schemes = if self.sweep_schemes.is_empty() {
            vec![self.scheme]
        } else {
            self.sweep_schemes.clone()
        };
        let prompts = if self.sweep_prompt.is_empty() {
            vec![self.prompt_tuning]
        } else {
            self.sweep_prompt.clone()
        };
        let seeds = if self.sweep_seeds.is_empty() {
            vec![self.seed]
        } else {
            self.sweep_seeds.clone()
        };
        let mut cells = Vec::new();
        for &noise_rate in &noises {
            for &scheme in &schemes {
                for &prompt_tuning in &prompts {
                    for &seed in &seeds {
                        let config = RunConfig {
                            noise_rate,
                            scheme,
                            prompt_tuning,
                            seed,
                            sweep_noise_rates: Vec::new(),
                            sweep_schemes: Vec::new(),
                            sweep_prompt: Vec::new(),
                            sweep_seeds: Vec::new(),
                            ..self.clone()
                        };
                        cells.push(SweepCell {
                            name: cell_name(noise_rate, scheme, prompt_tuning, seed),
                            config,
                        });
                    }
                }
            }
        }
        cells
    }
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub name: String,
    pub config: RunConfig,
}

/// `noise{r}_{scheme}_{prompt|frozen}_seed{s}`.
pub fn cell_name(noise_rate: f64, scheme: Scheme, prompt_tuning: bool, seed: u64) -> String {
    format!(
        "noise{}_{}_{}_seed{seed}",
        fmt_num(noise_rate),
        scheme.short_name(),
        if prompt_tuning { "prompt" } else { "frozen" }
    )
}

/// Read and validate a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CssError::io(path, e))?;
    let cfg: RunConfig =
        toml::from_str(&text).map_err(|e| CssError::format(path, e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
