//! Command-line grammar and config-file merging.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "drfn", version, about = "Single-image super-resolution with a recurrent residual network")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Seed for initialization and shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Flat `key=value` file; keys are long flag names. Flags given on the
    /// command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads, 0 = one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Cut a directory of HR images into a patch archive.
    Prepare(PrepareArgs),
    /// Train a model on a patch archive.
    Train(TrainArgs),
    /// Super-resolve one image.
    Sr(SrArgs),
    /// Score super-resolved images against ground truth.
    Eval(EvalArgs),
    /// Run the built-in verification checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long, value_name = "DIR")]
    pub hr_dir: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub scale: u32,
    /// LR patch side; defaults to 16 at x8 and 32 otherwise.
    #[arg(long)]
    pub lr_patch: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    /// Add all eight orientations of every image.
    #[arg(long)]
    pub augment: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub archive: PathBuf,
    /// Final checkpoint; per-epoch snapshots go next to it.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Loss log; defaults to `<out>.loss.csv`.
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    #[arg(long, default_value_t = 10)]
    pub cycles: usize,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 10)]
    pub lr_step_epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub clip_a: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Stalled epochs before stopping, 0 = never.
    #[arg(long, default_value_t = 3)]
    pub plateau_epochs: usize,
    /// Skip the per-epoch checkpoint snapshots.
    #[arg(long)]
    pub no_epoch_checkpoints: bool,
}

#[derive(Args, Debug)]
pub struct SrArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Run the recurrent blocks for a different number of cycles.
    #[arg(long)]
    pub cycles: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub sr_dir: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub gt_dir: PathBuf,
    #[arg(long)]
    pub scale: usize,
    /// Also write the report as CSV.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    /// Only run checks whose name contains this text.
    #[arg(long)]
    pub filter: Option<String>,
}

/// Turns `key=value` lines into `--key=value` arguments. Blank lines and
/// `#` comments are ignored; boolean flags take `true` or `false`.
pub fn config_file_args(text: &str) -> anyhow::Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, got `{line}`", n + 1);
        };
        let key = k.trim().replace('_', "-");
        if key == "config" {
            bail!("config line {}: nested config files are not supported", n + 1);
        }
        match v.trim() {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            v => out.push(format!("--{key}={v}").into()),
        }
    }
    Ok(out)
}

/// Parses `argv`; when `--config` is present, reparses with the file's
/// entries inserted right after the subcommand so explicit flags override
/// them.
pub fn parse(argv: Vec<OsString>) -> Result<Cli, ParseFailure> {
    let first = Cli::try_parse_from(&argv).map_err(ParseFailure::Clap)?;
    let Some(path) = first.config.clone() else {
        return Ok(first);
    };
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading config file {}", path.display()))
        .map_err(ParseFailure::Config)?;
    let extra = config_file_args(&text).map_err(ParseFailure::Config)?;
    let sub = subcommand_name(&first.command);
    let pos = argv
        .iter()
        .position(|a| a == sub)
        .ok_or_else(|| ParseFailure::Config(anyhow::anyhow!("cannot locate subcommand `{sub}`")))?;
    let mut merged = argv[..=pos].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&argv[pos + 1..]);
    Cli::try_parse_from(merged).map_err(ParseFailure::Clap)
}

pub enum ParseFailure {
    Clap(clap::Error),
    Config(anyhow::Error),
}

pub fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Prepare(_) => "prepare",
        Command::Train(_) => "train",
        Command::Sr(_) => "sr",
        Command::Eval(_) => "eval",
        Command::Selftest(_) => "selftest",
    }
}
