//! The training schedule: contrastive pretraining, supervised warm-up, then
//! per-epoch selection followed by one semi-supervised pass.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aux_model::{build_aux, AuxModel};
use crate::config::RunConfig;
use crate::data::{
    inject_noise, strong_augment, view_seed, weak_augment, Dataset, Split, SyntheticSource,
};
use crate::error::{CssError, Result};
use crate::losses::{
    contrastive_loss, dnn_objective, loss_labeled_dnn, prompt_objective, SslBatch,
};
use crate::metrics::{auc, count_noisy_in_clean, roc_auc, test_accuracy, RocCurve};
use crate::mixture::OmegaVector;
use crate::net::{argmax, ClassifierParams, Mlp};
use crate::rng::{self, stream};
use crate::selection::{compute_scores, select, Partition};

const VIEW_WEAK: u64 = 0;
const VIEW_WEAK2: u64 = 1;
const VIEW_STRONG: u64 = 2;

/// Per-epoch diagnostics. `auc` is NaN when every sample is clean (or every
/// sample is mislabeled). Prompt losses are zero while the prompt is frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based main-loop epoch.
    pub epoch: usize,
    pub n_clean: usize,
    pub n_noisy: usize,
    pub auc: f64,
    pub n_err_in_clean: usize,
    pub loss_x: f64,
    pub loss_u: f64,
    pub loss_con: f64,
    pub loss_reg: f64,
    pub loss_p: f64,
    pub loss_p_x: f64,
    pub loss_p_u: f64,
    /// Fraction of noisy-set samples whose pseudo-label passed the mask.
    pub confident_fraction: f64,
    pub test_acc: f64,
    pub test_err: f64,
    pub seconds: f64,
}

/// Train, test and auxiliary-pretraining splits of one seeded run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub aux_pretrain: Dataset,
}

/// Draw the three splits from one source and corrupt the train labels.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let source = SyntheticSource::new(cfg.classes, cfg.dim, cfg.separation, cfg.seed)?;
    let clean = source.draw(Split::Train, cfg.per_class, 0)?;
    let spec = cfg.noise_spec(|| source.nearest_class_flip_map());
    let train = inject_noise(&clean, &spec, cfg.seed)?;
    let test = source.draw(Split::Test, cfg.test_per_class, 1)?;
    let aux_pretrain = source.draw(Split::AuxPretrain, cfg.aux_pretrain_per_class(), 2)?;
    Ok(Prepared {
        train,
        test,
        aux_pretrain,
    })
}

pub fn init_classifier(cfg: &RunConfig) -> Result<ClassifierParams> {
    let net = Mlp::new(&cfg.net_dims(), rng::derive(cfg.seed, &[stream::INIT]))?;
    Ok(ClassifierParams::new(net, cfg.hyper()))
}

pub fn init_aux(cfg: &RunConfig, aux_pretrain: &Dataset) -> Result<AuxModel> {
    let mut aux = build_aux(
        aux_pretrain,
        cfg.embed_dim,
        cfg.aux_tau,
        cfg.context_tokens,
        cfg.aux_quality,
        rng::derive(cfg.seed, &[stream::AUX]),
    )?;
    aux.prompt_frozen = !cfg.prompt_tuning;
    Ok(aux)
}

/// Shuffled index batches of `size`; a trailing single sample joins the
/// previous batch so every batch can form contrastive pairs.
pub fn batches(n: usize, size: usize, seed: u64, phase: u64, epoch: usize) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_for(
        seed,
        &[stream::SHUFFLE, phase, epoch as u64],
    ));
    let mut out: Vec<Vec<usize>> = order.chunks(size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(last);
    }
    out
}

fn weak_view(
    ds: &Dataset,
    i: usize,
    cfg: &RunConfig,
    phase: u64,
    epoch: usize,
    view: u64,
) -> Vec<f64> {
    weak_augment(
        ds.x(i),
        cfg.sigma_w,
        view_seed(cfg.seed, phase, epoch, i, view),
    )
}

fn strong_view(ds: &Dataset, i: usize, cfg: &RunConfig, phase: u64, epoch: usize) -> Vec<f64> {
    strong_augment(
        ds.x(i),
        cfg.sigma_s,
        cfg.drop_prob,
        view_seed(cfg.seed, phase, epoch, i, VIEW_STRONG),
    )
}

/// Attach schedule position to a divergence error.
fn locate(err: CssError, phase: &str, epoch: usize, batch: usize) -> CssError {
    match err {
        CssError::Divergence {
            detail,
            phase: inner,
            ..
        } => CssError::Divergence {
            phase: format!("{phase} ({inner})"),
            epoch,
            batch,
            detail,
        },
        other => other,
    }
}

fn check_finite(loss: f64, phase: &str, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(CssError::Divergence {
            phase: phase.into(),
            epoch,
            batch,
            detail: format!("loss {loss}"),
        })
    }
}

/// Contrastive pretraining of the feature extractor. Only the feature
/// layers move; the head is left as initialized. Returns the mean loss of
/// each epoch.
pub fn pretrain_contrastive(
    ds: &Dataset,
    mut params: ClassifierParams,
    cfg: &RunConfig,
) -> Result<(ClassifierParams, Vec<f64>)> {
    let phase = "pretrain";
    params.reset_momentum();
    params.hyper = cfg.hyper();
    let features = params.net.feature_range();
    let mut trace = Vec::with_capacity(cfg.epochs_pretrain);
    for epoch in 0..cfg.epochs_pretrain {
        let mut total = 0.0;
        let groups = batches(ds.len(), cfg.batch_size, cfg.seed, stream::PRETRAIN, epoch);
        for (b, idx) in groups.iter().enumerate() {
            let a: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| weak_view(ds, i, cfg, stream::PRETRAIN, epoch, VIEW_WEAK))
                .collect();
            let c: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| weak_view(ds, i, cfg, stream::PRETRAIN, epoch, VIEW_WEAK2))
                .collect();
            let l = contrastive_loss(&params.net, &a, &c, cfg.tau_con)
                .map_err(|e| locate(e, phase, epoch, b))?;
            check_finite(l.loss, phase, epoch, b)?;
            params
                .step_range(&l.grad, features.clone())
                .map_err(|e| locate(e, phase, epoch, b))?;
            total += l.loss;
        }
        let mean = total / groups.len() as f64;
        log::debug!("pretrain epoch {} contrastive loss {mean:.4}", epoch + 1);
        trace.push(mean);
    }
    Ok((params, trace))
}

/// Supervised cross-entropy on the observed labels. Returns the mean loss
/// of each epoch.
pub fn warm_up(
    ds: &Dataset,
    mut params: ClassifierParams,
    cfg: &RunConfig,
) -> Result<(ClassifierParams, Vec<f64>)> {
    let phase = "warm-up";
    params.reset_momentum();
    params.hyper = cfg.hyper();
    let mut trace = Vec::with_capacity(cfg.epochs_warmup);
    for epoch in 0..cfg.epochs_warmup {
        let mut total = 0.0;
        let groups = batches(ds.len(), cfg.batch_size, cfg.seed, stream::WARMUP, epoch);
        for (b, idx) in groups.iter().enumerate() {
            let views: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| weak_view(ds, i, cfg, stream::WARMUP, epoch, VIEW_WEAK))
                .collect();
            let labels: Vec<usize> = idx.iter().map(|&i| ds.observed_labels[i]).collect();
            let l = loss_labeled_dnn(&params.net, &views, &labels);
            check_finite(l.loss, phase, epoch, b)?;
            params
                .backward_and_step(&l.grad)
                .map_err(|e| locate(e, phase, epoch, b))?;
            total += l.loss;
        }
        let mean = total / groups.len() as f64;
        log::debug!("warm-up epoch {} loss {mean:.4}", epoch + 1);
        trace.push(mean);
    }
    Ok((params, trace))
}

/// Fraction of samples whose prediction matches the observed label.
pub fn observed_accuracy(net: &Mlp, ds: &Dataset) -> f64 {
    let hits = crate::par::map_range(ds.len(), |i| {
        usize::from(argmax(&net.trace(ds.x(i)).probs) == ds.observed_labels[i])
    });
    hits.iter().sum::<usize>() as f64 / ds.len().max(1) as f64
}

/// Models after pretraining and warm-up, before the first selection.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub classifier: ClassifierParams,
    pub pretrain_losses: Vec<f64>,
    pub warmup_losses: Vec<f64>,
}

pub fn warm_start(prepared: &Prepared, cfg: &RunConfig) -> Result<WarmStart> {
    let params = init_classifier(cfg)?;
    let (params, pretrain_losses) = pretrain_contrastive(&prepared.train, params, cfg)?;
    let (classifier, warmup_losses) = warm_up(&prepared.train, params, cfg)?;
    Ok(WarmStart {
        classifier,
        pretrain_losses,
        warmup_losses,
    })
}

/// Mutable state of the main loop.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub classifier: ClassifierParams,
    pub aux: AuxModel,
}

/// Selection inputs and outcome of one epoch, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct EpochSelection {
    pub scores: Vec<OmegaVector>,
    pub partition: Partition,
}

/// One main-loop epoch (`epoch` is 0-based): score, select, then one pass of
/// semi-supervised updates over shuffled minibatches. Hidden true labels are
/// read only when filling the report.
pub fn run_epoch(
    state: &mut TrainState,
    train: &Dataset,
    test: &Dataset,
    cfg: &RunConfig,
    epoch: usize,
) -> Result<(EpochReport, EpochSelection)> {
    let phase = "main";
    let start = Instant::now();
    let scores = compute_scores(train, &state.classifier.net, &state.aux)?;
    let partition = select(
        &scores,
        cfg.scheme,
        &cfg.select(),
        rng::derive(cfg.seed, &[stream::GMM, epoch as u64]),
    )?;

    state.classifier.hyper.lr = cfg.lr_at(epoch);
    let ssl = cfg.ssl();
    let tune_prompt = cfg.prompt_tuning && !state.aux.prompt_frozen;
    let groups = batches(train.len(), cfg.batch_size, cfg.seed, stream::MAIN, epoch);
    let mut sums = [0.0f64; 7];
    let mut confident = 0usize;
    for (b, idx) in groups.iter().enumerate() {
        let mut batch = SslBatch::default();
        let mut x_raw = Vec::new();
        for &i in idx {
            let w1 = weak_view(train, i, cfg, stream::MAIN, epoch, VIEW_WEAK);
            let w2 = weak_view(train, i, cfg, stream::MAIN, epoch, VIEW_WEAK2);
            if partition.is_clean(i) {
                batch.x_weak.push(w1);
                batch.x_weak2.push(w2);
                batch.x_labels.push(train.observed_labels[i]);
                x_raw.push(train.x(i).to_vec());
            } else {
                batch.u_weak.push(w1);
                batch.u_weak2.push(w2);
                batch
                    .u_strong
                    .push(strong_view(train, i, cfg, stream::MAIN, epoch));
            }
        }
        let step = dnn_objective(&state.classifier.net, &batch, &ssl)
            .map_err(|e| locate(e, phase, epoch, b))?;
        state
            .classifier
            .backward_and_step(&step.grad)
            .map_err(|e| locate(e, phase, epoch, b))?;
        sums[0] += step.parts.x;
        sums[1] += step.parts.u;
        sums[2] += step.parts.con;
        sums[3] += step.parts.reg;
        confident += step.pseudo.confident();

        if tune_prompt {
            let p = prompt_objective(
                &state.aux,
                &x_raw,
                &batch.x_labels,
                &batch.u_weak,
                &batch.u_strong,
                &ssl,
            )
            .map_err(|e| locate(e, phase, epoch, b))?;
            state
                .aux
                .prompt_grad_step(&p.grad, cfg.prompt_lr)
                .map_err(|e| match e {
                    CssError::Parameter(detail) => CssError::Divergence {
                        phase: "main (prompt)".into(),
                        epoch,
                        batch: b,
                        detail,
                    },
                    other => other,
                })?;
            sums[4] += p.total;
            sums[5] += p.parts.x;
            sums[6] += p.parts.u;
        }
    }
    let nb = groups.len() as f64;
    let test_acc = test_accuracy(&state.classifier.net, test)?;

    // diagnostics only from here on
    let truth = train.clean_mask();
    let sel_auc = auc(&partition.clean_posteriors, &truth).unwrap_or(f64::NAN);
    let report = EpochReport {
        epoch: epoch + 1,
        n_clean: partition.n_clean(),
        n_noisy: partition.n_noisy(),
        auc: sel_auc,
        n_err_in_clean: count_noisy_in_clean(&partition, train),
        loss_x: sums[0] / nb,
        loss_u: sums[1] / nb,
        loss_con: sums[2] / nb,
        loss_reg: sums[3] / nb,
        loss_p: sums[4] / nb,
        loss_p_x: sums[5] / nb,
        loss_p_u: sums[6] / nb,
        confident_fraction: if partition.n_noisy() == 0 {
            0.0
        } else {
            confident as f64 / partition.n_noisy() as f64
        },
        test_acc,
        test_err: 1.0 - test_acc,
        seconds: if cfg.record_timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
    };
    log::info!(
        "epoch {:>3}: |X| {:>5} |U| {:>5} auc {:.4} err_in_X {:>5} test_acc {:.4}",
        report.epoch,
        report.n_clean,
        report.n_noisy,
        report.auc,
        report.n_err_in_clean,
        report.test_acc
    );
    Ok((report, EpochSelection { scores, partition }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Everything needed to reproduce the run.
    pub config: RunConfig,
    pub seed: u64,
    pub scheme: String,
    pub prompt_tuning: bool,
    pub noise_rate: f64,
    /// Test accuracy averaged over the last ten main epochs (fewer if the
    /// run is shorter).
    pub final_test_acc: f64,
    pub last_test_acc: f64,
    pub final_auc: f64,
    pub final_n_err_in_clean: usize,
    pub warmup_train_acc: f64,
    pub pretrain_losses: Vec<f64>,
    pub warmup_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub reports: Vec<EpochReport>,
    pub summary: RunSummary,
    /// `(epoch, curve)` for each configured ROC epoch with a defined AUC.
    pub roc_curves: Vec<(usize, RocCurve)>,
    /// `(epoch, selection)` when partition dumps are enabled.
    pub selections: Vec<(usize, EpochSelection)>,
    pub final_state: TrainState,
}

/// Test accuracy averaged over the last `window` reports.
pub fn final_accuracy(reports: &[EpochReport], window: usize) -> f64 {
    let k = window.min(reports.len());
    if k == 0 {
        return f64::NAN;
    }
    reports[reports.len() - k..]
        .iter()
        .map(|r| r.test_acc)
        .sum::<f64>()
        / k as f64
}

/// Main loop from a warm start. `prepared` and `warm` must come from the
/// same data and schedule settings as `cfg`.
pub fn run_from_warm(prepared: &Prepared, warm: &WarmStart, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let warmup_train_acc = observed_accuracy(&warm.classifier.net, &prepared.train);
    let mut classifier = warm.classifier.clone();
    classifier.reset_momentum();
    let mut state = TrainState {
        classifier,
        aux: init_aux(cfg, &prepared.aux_pretrain)?,
    };
    let mut reports = Vec::with_capacity(cfg.epochs_main);
    let mut roc_curves = Vec::new();
    let mut selections = Vec::new();
    for epoch in 0..cfg.epochs_main {
        let (report, sel) = run_epoch(&mut state, &prepared.train, &prepared.test, cfg, epoch)?;
        if cfg.roc_epochs.contains(&report.epoch) {
            if let Ok(curve) = roc_auc(
                &sel.partition.clean_posteriors,
                &prepared.train.clean_mask(),
            ) {
                roc_curves.push((report.epoch, curve));
            }
        }
        if cfg.dump_partitions {
            selections.push((report.epoch, sel));
        }
        reports.push(report);
    }
    let last = reports.last();
    let summary = RunSummary {
        config: cfg.clone(),
        seed: cfg.seed,
        scheme: cfg.scheme.to_string(),
        prompt_tuning: cfg.prompt_tuning,
        noise_rate: cfg.noise_rate,
        final_test_acc: final_accuracy(&reports, 10),
        last_test_acc: last.map_or(f64::NAN, |r| r.test_acc),
        final_auc: last.map_or(f64::NAN, |r| r.auc),
        final_n_err_in_clean: last.map_or(0, |r| r.n_err_in_clean),
        warmup_train_acc,
        pretrain_losses: warm.pretrain_losses.clone(),
        warmup_losses: warm.warmup_losses.clone(),
    };
    Ok(RunOutput {
        reports,
        summary,
        roc_curves,
        selections,
        final_state: state,
    })
}

/// Full seeded run: data, noise, auxiliary model, pretraining, warm-up and
/// the main loop.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let warm = warm_start(&prepared, cfg)?;
    run_from_warm(&prepared, &warm, cfg)
}
