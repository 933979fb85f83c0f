//! `driftlab`: command-line front end for test-set replication analyses.

mod commands;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use output::Outputs;

#[derive(Parser, Debug)]
#[command(name = "driftlab", version, about = "Accuracy drift analysis for replicated test sets")]
struct Cli {
    #[command(flatten)]
    run: RunConfig,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone, Serialize)]
pub struct RunConfig {
    /// Master seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Confidence level for intervals and bands.
    #[arg(long, global = true, default_value_t = 0.95)]
    pub level: f64,
    /// Directory for output files and `manifest.json`.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Least-squares fit of new accuracy against original accuracy.
    Fit(FitArgs),
    /// Percentile bootstrap of the fit, with a plot-ready band.
    Bootstrap(BootstrapArgs),
    /// Split a loss gap into adaptivity, distribution and generalization terms.
    Decompose(DecomposeArgs),
    /// Per-model accuracies, intervals and rank changes.
    Ranks(RanksArgs),
    /// Simulate two test sets under the Gaussian difficulty model.
    Simulate(SimulateArgs),
    /// Draw a dataset from annotated candidates.
    Sample(SampleArgs),
    /// Selection-frequency histograms and per-bin accuracies.
    Bins(BinsArgs),
    /// Near-duplicate candidates by pixel, embedding and SSIM neighbors.
    Dedup(DedupArgs),
    /// Clopper-Pearson interval for `correct` out of `total`.
    Ci(CiArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainArg {
    Raw,
    Probit,
}

#[derive(Args, Debug, Serialize)]
pub struct TestbedArgs {
    /// Testbed CSV in count form or percent form.
    pub testbed: PathBuf,
    /// Keep only models of this family.
    #[arg(long)]
    pub family: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: TestbedArgs,
    #[arg(long, value_enum, default_value_t = DomainArg::Raw)]
    pub domain: DomainArg,
}

#[derive(Args, Debug, Serialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub input: TestbedArgs,
    #[arg(long, value_enum, default_value_t = DomainArg::Raw)]
    pub domain: DomainArg,
    #[arg(long, default_value_t = 100_000)]
    pub n_bootstrap: usize,
    /// Number of points in the band TSV.
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct DecomposeArgs {
    /// Loss on the reused test set.
    #[arg(long)]
    pub l_s: f64,
    /// Population loss on the original distribution.
    #[arg(long)]
    pub l_d: f64,
    /// Population loss on the new distribution.
    #[arg(long)]
    pub l_d_prime: f64,
    /// Loss on the new test set.
    #[arg(long)]
    pub l_s_prime: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct RanksArgs {
    #[command(flatten)]
    pub input: TestbedArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Comma-separated model skills.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub skills: Vec<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mu_new: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_new: f64,
    #[arg(long, default_value_t = 10_000)]
    pub n_orig: u64,
    #[arg(long, default_value_t = 2_000)]
    pub n_new: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyArg {
    Matched,
    Threshold,
    Top,
}

#[derive(Args, Debug, Serialize)]
pub struct SampleArgs {
    /// Candidate annotations (JSONL).
    pub candidates: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    #[arg(long)]
    pub n_per_class: usize,
    /// Minimum selection frequency for `threshold`.
    #[arg(long, default_value_t = 0.7)]
    pub threshold: f64,
    /// Target histograms CSV for `matched`.
    #[arg(long, conflicts_with = "reference")]
    pub targets: Option<PathBuf>,
    /// Reference annotations whose histograms `matched` should follow.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct BinsArgs {
    /// Annotations (JSONL) to summarize as per-class histograms.
    #[arg(long, required_unless_present = "evals")]
    pub annotations: Option<PathBuf>,
    /// Per-image correctness CSV to stratify by selection frequency.
    #[arg(long)]
    pub evals: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct DedupArgs {
    /// Directory of query images (PNG or raw).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Directory of reference images; defaults to the query images.
    #[arg(long, requires = "images")]
    pub reference_images: Option<PathBuf>,
    /// Query embeddings (CSV or JSONL).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Reference embeddings; defaults to the query embeddings.
    #[arg(long, requires = "embeddings")]
    pub reference_embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = driftlab::dedup::DEFAULT_K)]
    pub k: usize,
    /// Pixel-space distance cut-off on [0, 1] intensities.
    #[arg(long, default_value_t = 6.0)]
    pub pixel_l2: f64,
    #[arg(long, default_value_t = 0.5)]
    pub embedding_l2: f64,
    /// Minimum SSIM.
    #[arg(long, default_value_t = 0.7)]
    pub ssim_min: f64,
    /// Skip the SSIM pass.
    #[arg(long)]
    pub no_ssim: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct CiArgs {
    pub correct: u64,
    pub total: u64,
}

/// Exit status: 2 for bad input, 3 for a failed computation.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<driftlab::Error>() {
        Some(e) if !e.is_input_error() => 3,
        _ => 2,
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(value) = std::env::var("DRIFTLAB_THREADS") {
        let n: usize = value
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("DRIFTLAB_THREADS must be a positive integer, got `{value}`"))?;
        if n == 0 {
            anyhow::bail!("DRIFTLAB_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let run = cli.run;
    if !(run.level > 0.0 && run.level < 1.0) {
        anyhow::bail!("--level must lie strictly between 0 and 1, got {}", run.level);
    }
    let name = match &cli.command {
        Command::Fit(_) => "fit",
        Command::Bootstrap(_) => "bootstrap",
        Command::Decompose(_) => "decompose",
        Command::Ranks(_) => "ranks",
        Command::Simulate(_) => "simulate",
        Command::Sample(_) => "sample",
        Command::Bins(_) => "bins",
        Command::Dedup(_) => "dedup",
        Command::Ci(_) => "ci",
    };
    let mut out = Outputs::new(name);
    match &cli.command {
        Command::Fit(a) => commands::fit(a, &mut out)?,
        Command::Bootstrap(a) => commands::bootstrap(a, &run, &mut out)?,
        Command::Decompose(a) => commands::decompose(a, &mut out)?,
        Command::Ranks(a) => commands::ranks(a, &run, &mut out)?,
        Command::Simulate(a) => commands::simulate(a, &run, &mut out)?,
        Command::Sample(a) => commands::sample(a, &run, &mut out)?,
        Command::Bins(a) => commands::bins(a, &mut out)?,
        Command::Dedup(a) => commands::dedup(a, &mut out)?,
        Command::Ci(a) => commands::ci(a, &run, &mut out)?,
    }

    if let Some(dir) = &run.out_dir {
        let config = serde_json::json!({ "run": &run, "command": &cli.command });
        out.commit(dir, config, run.seed)?;
    }
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(out.stdout())?;
    stdout.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
