//! `permkron`: decompose weight tensors into permuted Kronecker factors,
//! benchmark the permutation search and run the toy distillation demo.

mod bench;
mod decompose;
mod demo;
mod pool;
mod records;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use permkron::{Dtype, Error, Result};

#[derive(Parser)]
#[command(name = "permkron", version, about = "Permutation-enhanced Kronecker compression of weight matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose the tensors named in a plan and write the compressed file.
    Decompose(DecomposeArgs),
    /// Compare vanilla and permuted residuals over a corpus of tensors.
    BenchPerm(BenchArgs),
    /// Train a toy teacher, then compress and distill it layer by layer.
    DistillDemo(DemoArgs),
    /// Parameter counts and errors of a compressed tensor file.
    Report(ReportArgs),
}

/// Options shared by the commands that run the optimizer.
#[derive(Args, Clone)]
struct SolverArgs {
    /// Seed for the SVD start vectors and the perturbation phase.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit the Kronecker factors without searching for permutations.
    #[arg(long)]
    no_perm: bool,
    /// Override the rank of every plan record.
    #[arg(long)]
    rank: Option<usize>,
    /// Override the number of alternating rounds.
    #[arg(long)]
    iters: Option<usize>,
    /// Override the perturbation patience (0 disables the phase).
    #[arg(long)]
    kicks: Option<usize>,
    /// Worker threads; output order never depends on this.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    /// Write the run report here instead of standard output.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Element type of the written factors.
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    dtype: DtypeArg,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Tensor file to benchmark; every matrix in it must fit the split.
    #[arg(short, long, conflicts_with = "random")]
    input: Option<PathBuf>,
    /// Generate this many tensors instead of reading a file.
    #[arg(long)]
    random: Option<usize>,
    /// Expected tensor shape `MxN`, checked against the split.
    #[arg(long)]
    shape: Option<String>,
    /// Shape of the first Kronecker factor, `M1xN1`.
    #[arg(long)]
    a: String,
    /// Shape of the second Kronecker factor, `M2xN2`.
    #[arg(long)]
    b: String,
    /// What to generate with `--random`.
    #[arg(long, value_enum, default_value_t = Kind::Random)]
    kind: Kind,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Distillation epochs after each compression step.
    #[arg(long)]
    epochs: Option<usize>,
    /// Student learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    no_perm: bool,
    /// Directory for the teacher and per-iteration student checkpoints.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write the training log as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Compressed tensor file.
    #[arg(short, long)]
    input: PathBuf,
    /// Original tensor file, to report reconstruction errors.
    #[arg(long)]
    original: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    /// Independent standard normal entries.
    Random,
    /// An exact `A⊗B`.
    Kron,
    /// `A⊗B` with its rows and columns shuffled.
    Planted,
}

/// Parses `MxN`.
fn parse_dims(s: &str, what: &str) -> Result<(usize, usize)> {
    let bad = || Error::Validation(format!("{what} `{s}` is not of the form MxN"));
    let (m, n) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let m = m.trim().parse::<usize>().map_err(|_| bad())?;
    let n = n.trim().parse::<usize>().map_err(|_| bad())?;
    if m == 0 || n == 0 {
        return Err(bad());
    }
    Ok((m, n))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Decompose(a) => decompose::run(a),
        Command::BenchPerm(a) => bench::run(a),
        Command::DistillDemo(a) => demo::run(a),
        Command::Report(a) => report::run(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("permkron: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
