//! `css`: run, sweep and self-check collaborative sample selection
//! experiments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use css_core::config::{parse_config, RunConfig, SweepCell};
use css_core::report::{emit, write_comparison_csv, ComparisonRow};
use css_core::selection::Scheme;
use css_core::training::{prepare, run_from_warm, warm_start, Prepared, WarmStart};

/// Marker left in an output directory whose run did not finish.
const INCOMPLETE: &str = "INCOMPLETE";

#[derive(Parser, Debug)]
#[command(
    name = "css",
    version,
    about = "Collaborative sample selection for learning with noisy labels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one seeded experiment and write its reports.
    Run(RunArgs),
    /// Run the grid of noise rates, schemes, prompt settings and seeds.
    Sweep(SweepArgs),
    /// Run the fast invariant checks.
    Selfcheck,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML config; every key is optional.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "gmm2d|gmm1d|weighted1d")]
    scheme: Option<Scheme>,
    #[arg(long)]
    no_prompt_tuning: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of cells trained concurrently.
    #[arg(long, value_name = "K", default_value_t = 1)]
    parallel: usize,
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Selfcheck => cmd_selfcheck(),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("CSS_LOG_LEVEL", "error");
    env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .init();
}

/// Load the config (defaults when no file is given), apply the command-line
/// overrides, and validate before anything runs.
fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.sweep_seeds.clear();
    }
    if let Some(scheme) = args.scheme {
        cfg.scheme = scheme;
        cfg.sweep_schemes.clear();
    }
    if args.no_prompt_tuning {
        cfg.prompt_tuning = false;
        cfg.sweep_prompt.clear();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let cfg = load_config(args)?;
    let start = Instant::now();
    run_into(&args.out, &cfg, None)?;
    println!(
        "wrote {} in {:.1} s",
        args.out.join("epochs.csv").display(),
        start.elapsed().as_secs_f64()
    );
    Ok(ExitCode::SUCCESS)
}

/// Train and emit into `dir`. The directory carries an `INCOMPLETE` marker
/// until every report file is written; on failure the marker holds the error.
fn run_into(
    dir: &Path,
    cfg: &RunConfig,
    shared: Option<(&Prepared, &WarmStart)>,
) -> Result<ComparisonRow> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let marker = dir.join(INCOMPLETE);
    fs::write(&marker, "running\n").with_context(|| format!("writing {}", marker.display()))?;
    let result = (|| -> Result<ComparisonRow> {
        let owned;
        let (prepared, warm) = match shared {
            Some(pair) => pair,
            None => {
                let prepared = prepare(cfg)?;
                let warm = warm_start(&prepared, cfg)?;
                owned = (prepared, warm);
                (&owned.0, &owned.1)
            }
        };
        let output = run_from_warm(prepared, warm, cfg)?;
        emit(&output, &prepared.train, dir)?;
        let name = dir
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        Ok(ComparisonRow::new(&name, &output.summary))
    })();
    match &result {
        Ok(_) => {
            fs::remove_file(&marker).with_context(|| format!("removing {}", marker.display()))?
        }
        Err(e) => {
            let _ = fs::write(&marker, format!("failed: {e:#}\n"));
        }
    }
    result
}

fn cmd_sweep(args: &SweepArgs) -> Result<ExitCode> {
    if args.parallel == 0 {
        bail!("--parallel must be at least 1");
    }
    let cfg = load_config(&args.run)?;
    let cells = cfg.sweep_cells();
    fs::create_dir_all(&args.run.out)
        .with_context(|| format!("creating {}", args.run.out.display()))?;
    log::info!("sweep over {} cells", cells.len());

    // Cells that differ only in scheme or prompt setting share data and the
    // warm start.
    let mut groups: BTreeMap<(u64, u64), Vec<&SweepCell>> = BTreeMap::new();
    for cell in &cells {
        groups
            .entry((cell.config.noise_rate.to_bits(), cell.config.seed))
            .or_default()
            .push(cell);
    }
    let groups: Vec<Vec<&SweepCell>> = groups.into_values().collect();
    let run_group = |group: &Vec<&SweepCell>| -> Vec<(String, Result<ComparisonRow>)> {
        let base = &group[0].config;
        let shared = prepare(base).and_then(|p| warm_start(&p, base).map(|w| (p, w)));
        group
            .iter()
            .map(|cell| {
                let dir = args.run.out.join(&cell.name);
                let row = match &shared {
                    Ok((p, w)) => run_into(&dir, &cell.config, Some((p, w))),
                    Err(e) => {
                        let err = anyhow::anyhow!("warm start failed: {e}");
                        let _ = fs::create_dir_all(&dir);
                        let _ = fs::write(dir.join(INCOMPLETE), format!("failed: {err:#}\n"));
                        Err(err)
                    }
                };
                (cell.name.clone(), row)
            })
            .collect()
    };
    let results: Vec<(String, Result<ComparisonRow>)> =
        run_groups(&groups, args.parallel, run_group)?;

    let mut rows = Vec::new();
    let mut failed = 0;
    for (name, r) in results {
        match r {
            Ok(row) => {
                println!("{name}: final test accuracy {:.4}", row.final_test_acc);
                rows.push(row);
            }
            Err(e) => {
                failed += 1;
                eprintln!("{name}: failed: {e:#}");
            }
        }
    }
    let order: Vec<&str> = cells.iter().map(|c| c.name.as_str()).collect();
    rows.sort_by_key(|r| order.iter().position(|n| *n == r.cell));
    let table = args.run.out.join("comparison.csv");
    write_comparison_csv(&table, &rows)?;
    println!("wrote {}", table.display());
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", cells.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(feature = "parallel")]
fn run_groups<G, R, F>(groups: &[G], threads: usize, f: F) -> Result<Vec<R>>
where
    G: Sync,
    R: Send,
    F: Fn(&G) -> Vec<R> + Sync,
{
    use rayon::prelude::*;
    if threads == 1 {
        return Ok(groups.iter().flat_map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building the sweep thread pool")?;
    Ok(pool
        .install(|| groups.par_iter().map(&f).collect::<Vec<_>>())
        .into_iter()
        .flatten()
        .collect())
}

#[cfg(not(feature = "parallel"))]
fn run_groups<G, R, F>(groups: &[G], threads: usize, f: F) -> Result<Vec<R>>
where
    F: Fn(&G) -> Vec<R>,
{
    if threads > 1 {
        log::warn!("built without the parallel feature; running cells one at a time");
    }
    Ok(groups.iter().flat_map(f).collect())
}

fn cmd_selfcheck() -> Result<ExitCode> {
    let checks = css_core::selfcheck::run_all();
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed == 0 {
        println!("all {} checks passed", checks.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{failed} of {} checks failed", checks.len());
        Ok(ExitCode::FAILURE)
    }
}
