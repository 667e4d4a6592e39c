//! `safmap` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use safmap::mapping::Scheme;
use safmap::numfmt::Encoding;

mod commands;
mod parse;

#[derive(Debug, Parser)]
#[command(name = "safmap", version, about = "Stuck-at-fault aware weight mapping for bit-sliced crossbars")]
struct Cli {
    /// Worker threads for sweeps, mapping and LUT builds (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a random stuck-at-fault mask.
    Inject(InjectArgs),
    /// Build or check a closest-value lookup table.
    #[command(subcommand)]
    Lut(LutCommand),
    /// Map a weight matrix onto a faulty crossbar.
    Map(MapArgs),
    /// Run a matrix-vector multiply on a mapped layout.
    Mvm(MvmArgs),
    /// Train the built-in toy MLP.
    TrainToy(TrainToyArgs),
    /// Monte Carlo accuracy sweep over fault rates and schemes.
    Eval(EvalArgs),
    /// Time direct against table-driven mapping.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct InjectArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u8).range(1..=8))]
    pub bits: u8,
    /// Per-cell fault probability.
    #[arg(long, value_parser = parse::probability)]
    pub rate: f64,
    /// Share of faulty cells stuck at 1.
    #[arg(long, default_value_t = 0.5, value_parser = parse::probability)]
    pub sa1_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub trial: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum LutCommand {
    /// Tabulate closest-value search for every (target, fault pattern).
    Build(LutBuildArgs),
    /// Compare table entries against direct search.
    Verify(LutVerifyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct LutBuildArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
    pub bits: u8,
    #[arg(long, default_value = "twos-complement")]
    pub mode: Encoding,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LutVerifyArgs {
    #[arg(long)]
    pub lut: PathBuf,
    /// Random keys to check; every key when at least the table size.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct MapArgs {
    #[arg(long)]
    pub scheme: Scheme,
    /// JSON `{"rows","cols","values":[decoded integers, row-major]}`.
    #[arg(long)]
    pub weights: PathBuf,
    /// Mask JSON as written by `inject`.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub row_len: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u8).range(1..=8))]
    pub bits: u8,
    #[arg(long, default_value = "twos-complement")]
    pub mode: Encoding,
    /// LUT file; built and saved here if missing.
    #[arg(long)]
    pub lut: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MvmArgs {
    #[arg(long)]
    pub layout: PathBuf,
    /// JSON `{"m","mode","values"}`.
    #[arg(long)]
    pub activations: PathBuf,
    /// Crossbar config JSON; derived from the inputs when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainToyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the generated train/test split.
    #[arg(long)]
    pub data_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSON `{"train":..,"test":..}`; defaults to regenerating the toy data
    /// the model was trained on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma list or inclusive `start:stop:step`.
    #[arg(long, default_value = "0:0.05:0.01", value_parser = parse::rates)]
    pub rates: parse::RateList,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    /// Comma list of naive, cvm, signflip, bitflip, or `all`.
    #[arg(long, default_value = "all", value_parser = parse::schemes)]
    pub schemes: parse::SchemeList,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5, value_parser = parse::probability)]
    pub sa1_frac: f64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub row_len: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u8).range(1..=8))]
    pub bits: u8,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u8).range(1..=8))]
    pub act_bits: u8,
    /// LUT cache file; built in memory when omitted.
    #[arg(long)]
    pub lut: Option<PathBuf>,
    /// Write 0 for mapping time so repeated runs are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV twin; defaults to the report path with a `.csv` extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value = "512x512", value_parser = parse::dims)]
    pub dims: (usize, usize),
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u8).range(1..=8))]
    pub bits: u8,
    #[arg(long, default_value = "twos-complement")]
    pub mode: Encoding,
    #[arg(long, default_value_t = 0.05, value_parser = parse::probability)]
    pub rate: f64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub repeats: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub row_len: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// LUT cache file; built in memory when omitted.
    #[arg(long)]
    pub lut: Option<PathBuf>,
    /// Also write the timing rows as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs as usize).build_global() {
            eprintln!("error: --jobs: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Inject(a) => commands::inject(&a),
        Command::Lut(LutCommand::Build(a)) => commands::lut_build(&a),
        Command::Lut(LutCommand::Verify(a)) => commands::lut_verify(&a),
        Command::Map(a) => commands::map(&a),
        Command::Mvm(a) => commands::mvm(&a),
        Command::TrainToy(a) => commands::train_toy(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
