//! Report files: per-epoch CSV, ROC dumps and the JSON run summary.
//!
//! An emitted run directory holds `epochs.csv`, one `roc_epoch{E}.csv` per
//! configured ROC epoch, `summary.json`, and `partitions/epoch{E}.csv` when
//! partition dumps are enabled.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{CssError, Result};
use crate::metrics::RocCurve;
use crate::selection::write_partition_csv;
use crate::training::{EpochReport, RunOutput, RunSummary};

pub const EPOCHS_HEADER: [&str; 12] = [
    "epoch",
    "N1",
    "N2",
    "auc",
    "n_err_in_C",
    "loss_x",
    "loss_u",
    "loss_con",
    "loss_reg",
    "loss_p",
    "test_acc",
    "seconds",
];
pub const ROC_HEADER: [&str; 3] = ["threshold", "fpr", "tpr"];
pub const COMPARISON_HEADER: [&str; 9] = [
    "cell",
    "noise_rate",
    "scheme",
    "prompt",
    "seed",
    "final_test_acc",
    "last_test_acc",
    "final_auc",
    "final_n_err_in_C",
];

/// Six significant digits, `%g` style: fixed notation for exponents in
/// `[-4, 6)`, scientific otherwise, trailing zeros trimmed.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci
        .split_once('e')
        .expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Parse a number written by [`fmt_num`].
pub fn parse_num(s: &str) -> Result<f64> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s
            .parse()
            .map_err(|_| CssError::Parameter(format!("not a number: '{s}'"))),
    }
}

/// One row of `epochs.csv` as read back from disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
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
    pub test_acc: f64,
    pub seconds: f64,
}

impl From<&EpochReport> for EpochRow {
    fn from(r: &EpochReport) -> Self {
        Self {
            epoch: r.epoch,
            n_clean: r.n_clean,
            n_noisy: r.n_noisy,
            auc: r.auc,
            n_err_in_clean: r.n_err_in_clean,
            loss_x: r.loss_x,
            loss_u: r.loss_u,
            loss_con: r.loss_con,
            loss_reg: r.loss_reg,
            loss_p: r.loss_p,
            test_acc: r.test_acc,
            seconds: r.seconds,
        }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| CssError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CssError + '_ {
    move |e| CssError::format(path, e.to_string())
}

pub fn write_epochs_csv(path: &Path, reports: &[EpochReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(EPOCHS_HEADER).map_err(csv_err(path))?;
    for r in reports {
        w.write_record([
            r.epoch.to_string(),
            r.n_clean.to_string(),
            r.n_noisy.to_string(),
            fmt_num(r.auc),
            r.n_err_in_clean.to_string(),
            fmt_num(r.loss_x),
            fmt_num(r.loss_u),
            fmt_num(r.loss_con),
            fmt_num(r.loss_reg),
            fmt_num(r.loss_p),
            fmt_num(r.test_acc),
            fmt_num(r.seconds),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CssError::io(path, e))
}

pub fn read_epochs_csv(path: &Path) -> Result<Vec<EpochRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(EPOCHS_HEADER) {
        return Err(CssError::format(
            path,
            format!("unexpected header {header:?}"),
        ));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| CssError::format(path, format!("line {line}: bad {what}"));
        let int = |k: usize| rec[k].parse::<usize>().map_err(|_| bad(EPOCHS_HEADER[k]));
        let num = |k: usize| parse_num(&rec[k]).map_err(|_| bad(EPOCHS_HEADER[k]));
        rows.push(EpochRow {
            epoch: int(0)?,
            n_clean: int(1)?,
            n_noisy: int(2)?,
            auc: num(3)?,
            n_err_in_clean: int(4)?,
            loss_x: num(5)?,
            loss_u: num(6)?,
            loss_con: num(7)?,
            loss_reg: num(8)?,
            loss_p: num(9)?,
            test_acc: num(10)?,
            seconds: num(11)?,
        });
    }
    Ok(rows)
}

pub fn write_roc_csv(path: &Path, curve: &RocCurve) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(ROC_HEADER).map_err(csv_err(path))?;
    for ((t, f), p) in curve.thresholds.iter().zip(&curve.fpr).zip(&curve.tpr) {
        w.write_record([fmt_num(*t), fmt_num(*f), fmt_num(*p)])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CssError::io(path, e))
}

/// `summary.json`: the config echo is exact, metrics carry six significant
/// digits, and undefined values are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub config: RunConfig,
    pub seed: u64,
    pub scheme: String,
    pub prompt_tuning: bool,
    pub noise_rate: f64,
    pub epochs: usize,
    pub final_test_acc: Option<f64>,
    pub last_test_acc: Option<f64>,
    pub final_auc: Option<f64>,
    pub final_n_err_in_clean: usize,
    pub warmup_train_acc: Option<f64>,
    pub pretrain_losses: Vec<Option<f64>>,
    pub warmup_losses: Vec<Option<f64>>,
}

/// Round to six significant digits; non-finite values become `None`.
pub fn round6(v: f64) -> Option<f64> {
    if v.is_finite() {
        parse_num(&fmt_num(v)).ok()
    } else {
        None
    }
}

impl SummaryRecord {
    pub fn new(summary: &RunSummary, epochs: usize) -> Self {
        Self {
            config: summary.config.clone(),
            seed: summary.seed,
            scheme: summary.scheme.clone(),
            prompt_tuning: summary.prompt_tuning,
            noise_rate: summary.noise_rate,
            epochs,
            final_test_acc: round6(summary.final_test_acc),
            last_test_acc: round6(summary.last_test_acc),
            final_auc: round6(summary.final_auc),
            final_n_err_in_clean: summary.final_n_err_in_clean,
            warmup_train_acc: round6(summary.warmup_train_acc),
            pretrain_losses: summary.pretrain_losses.iter().map(|&v| round6(v)).collect(),
            warmup_losses: summary.warmup_losses.iter().map(|&v| round6(v)).collect(),
        }
    }
}

pub fn write_summary_json(path: &Path, record: &SummaryRecord) -> Result<()> {
    let text =
        serde_json::to_string_pretty(record).map_err(|e| CssError::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CssError::io(path, e))
}

pub fn read_summary_json(path: &Path) -> Result<SummaryRecord> {
    let text = fs::read_to_string(path).map_err(|e| CssError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CssError::format(path, e.to_string()))
}

/// Paths written by [`emit`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Emitted {
    pub epochs: PathBuf,
    pub summary: PathBuf,
    pub roc: Vec<PathBuf>,
    pub partitions: Vec<PathBuf>,
}

/// Write every report file of `output` under `dir`, creating it if needed.
/// `train` is the training split the run used; it is only read for the
/// partition dumps.
pub fn emit(output: &RunOutput, train: &Dataset, dir: &Path) -> Result<Emitted> {
    fs::create_dir_all(dir).map_err(|e| CssError::io(dir, e))?;
    let mut out = Emitted {
        epochs: dir.join("epochs.csv"),
        summary: dir.join("summary.json"),
        ..Emitted::default()
    };
    write_epochs_csv(&out.epochs, &output.reports)?;
    for (epoch, curve) in &output.roc_curves {
        let path = dir.join(format!("roc_epoch{epoch}.csv"));
        write_roc_csv(&path, curve)?;
        out.roc.push(path);
    }
    if !output.selections.is_empty() {
        let sub = dir.join("partitions");
        fs::create_dir_all(&sub).map_err(|e| CssError::io(&sub, e))?;
        for (epoch, sel) in &output.selections {
            let path = sub.join(format!("epoch{epoch}.csv"));
            write_partition_csv(&path, &sel.scores, &sel.partition, train)?;
            out.partitions.push(path);
        }
    }
    write_summary_json(
        &out.summary,
        &SummaryRecord::new(&output.summary, output.reports.len()),
    )?;
    Ok(out)
}

/// One sweep cell in the root comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub cell: String,
    pub noise_rate: f64,
    pub scheme: String,
    pub prompt_tuning: bool,
    pub seed: u64,
    pub final_test_acc: f64,
    pub last_test_acc: f64,
    pub final_auc: f64,
    pub final_n_err_in_clean: usize,
}

impl ComparisonRow {
    pub fn new(cell: &str, summary: &RunSummary) -> Self {
        Self {
            cell: cell.to_string(),
            noise_rate: summary.noise_rate,
            scheme: summary.scheme.clone(),
            prompt_tuning: summary.prompt_tuning,
            seed: summary.seed,
            final_test_acc: summary.final_test_acc,
            last_test_acc: summary.last_test_acc,
            final_auc: summary.final_auc,
            final_n_err_in_clean: summary.final_n_err_in_clean,
        }
    }
}

pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(COMPARISON_HEADER).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.cell.clone(),
            fmt_num(r.noise_rate),
            r.scheme.clone(),
            if r.prompt_tuning { "prompt" } else { "frozen" }.to_string(),
            r.seed.to_string(),
            fmt_num(r.final_test_acc),
            fmt_num(r.last_test_acc),
            fmt_num(r.final_auc),
            r.final_n_err_in_clean.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CssError::io(path, e))
}
