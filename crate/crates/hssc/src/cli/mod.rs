//! Command-line front end.
//!
//! Six subcommands cover the pipeline end to end: `synth` writes a labeled
//! dataset, `train` fits a codec and saves a checkpoint, `compress` and
//! `decompress` move single cubes through the bitstream container, `eval`
//! scores a checkpoint on a test split, and `rd` sweeps a directory of
//! trained checkpoints into a rate-distortion table.
//!
//! Every flag has a config-file equivalent: `--config FILE` names a flat
//! key=value file (see [`KvFile`]) whose entries fill in any flag not given
//! on the command line; explicit flags always win. Every command is
//! deterministic given its flags and seeds.
//!
//! The binary is a thin wrapper: parsing and execution live here so the
//! whole surface is testable in process.

mod commands;
mod kv;
mod manifest;

pub use kv::KvFile;
pub use manifest::{Manifest, MANIFEST_NAME};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::networks::Variant;

/// Every key a config file may set, the union of all subcommand flags.
const CONFIG_KEYS: &[&str] = &[
    "n",
    "bands",
    "size",
    "seed",
    "out-dir",
    "variant",
    "rt",
    "lambda-a",
    "width-scale",
    "steps-pretrain",
    "steps-gan",
    "batch",
    "lr",
    "data",
    "out",
    "resume",
    "ckpt",
    "in",
    "clamp",
    "out-csv",
    "ckpt-dir",
];

#[derive(Debug, Parser)]
#[command(name = "hssc", version, about = "Learned compression of hyperspectral image cubes")]
pub struct Cli {
    /// Flat key=value file supplying defaults for flags not given here.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic hyperspectral dataset with a split manifest.
    Synth(SynthArgs),
    /// Train a codec on a dataset and save checkpoint, metrics and metadata.
    Train(TrainArgs),
    /// Compress one cube into a bitstream file and report the round trip.
    Compress(CodecArgs),
    /// Reconstruct a cube from a bitstream file.
    Decompress(CodecArgs),
    /// Score a checkpoint on the test split of a dataset.
    Eval(EvalArgs),
    /// Sweep trained checkpoints into a rate-distortion table.
    Rd(RdArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of cubes to generate (at least 10).
    #[arg(long)]
    pub n: Option<usize>,
    /// Spectral bands per cube.
    #[arg(long)]
    pub bands: Option<usize>,
    /// Spatial height and width of each cube.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving the cubes and the manifest.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Architecture: opt, se or 3d.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Rate target in bits per band-pixel; must be a lambda-table key
    /// unless --lambda-a is given.
    #[arg(long)]
    pub rt: Option<f64>,
    /// Explicit strong rate weight, replacing the built-in table entry.
    #[arg(long)]
    pub lambda_a: Option<f64>,
    /// Multiplier on every base channel width, in (0, 1].
    #[arg(long)]
    pub width_scale: Option<f64>,
    #[arg(long)]
    pub steps_pretrain: Option<u64>,
    #[arg(long)]
    pub steps_gan: Option<u64>,
    /// Samples per batch.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Dataset manifest, or the directory holding one.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for model.ckpt, metrics.csv and train.meta.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Continue a run from the checkpoint already in --out.
    #[arg(long)]
    pub resume: bool,
    /// Clamp out-of-range samples in input cubes instead of rejecting them.
    #[arg(long)]
    pub clamp: bool,
}

#[derive(Debug, Args)]
pub struct CodecArgs {
    /// Trained checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub ckpt: Option<PathBuf>,
    /// Input file: a cube to compress, or a bitstream to decompress.
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Output file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Clamp out-of-range samples in input cubes instead of rejecting them.
    #[arg(long)]
    pub clamp: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub ckpt: Option<PathBuf>,
    /// Dataset manifest, or the directory holding one.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Where to write per-image and aggregate metrics.
    #[arg(long, value_name = "FILE")]
    pub out_csv: Option<PathBuf>,
    /// Clamp out-of-range samples in input cubes instead of rejecting them.
    #[arg(long)]
    pub clamp: bool,
}

#[derive(Debug, Args)]
pub struct RdArgs {
    /// Directory whose subdirectories each hold model.ckpt and train.meta.
    #[arg(long, value_name = "DIR")]
    pub ckpt_dir: Option<PathBuf>,
    /// Dataset manifest, or the directory holding one.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Where to write the rate-distortion table.
    #[arg(long, value_name = "FILE")]
    pub out_csv: Option<PathBuf>,
    /// Clamp out-of-range samples in input cubes instead of rejecting them.
    #[arg(long)]
    pub clamp: bool,
}

/// Loads the config file named by the parsed arguments, or an empty one.
fn load_config(cli: &Cli) -> Result<KvFile> {
    let Some(path) = &cli.config else {
        return Ok(KvFile::new());
    };
    let kv = KvFile::read(path)?;
    for key in kv.keys() {
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::usage(format!(
                "{}: unknown config key {key:?}",
                path.display()
            )));
        }
    }
    Ok(kv)
}

/// Executes an already-parsed invocation.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth(args) => commands::cmd_synth(args, &cfg),
        Command::Train(args) => commands::cmd_train(args, &cfg),
        Command::Compress(args) => commands::cmd_compress(args, &cfg),
        Command::Decompress(args) => commands::cmd_decompress(args, &cfg),
        Command::Eval(args) => commands::cmd_eval(args, &cfg),
        Command::Rd(args) => commands::cmd_rd(args, &cfg),
    }
}

/// Parses and executes an argument vector; what the binary's `main` calls
/// with the process arguments and tests call directly.
pub fn run_from<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::usage(e.to_string()))?;
    run(cli)
}
