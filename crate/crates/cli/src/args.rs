use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "tesseract", version, about = "Simulated [q,q,d] tensor-parallel matmul and transformer layers")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// Processor grid "[q,q,d]"; repeat for several grids.
    #[arg(long, global = true, value_name = "GRID")]
    pub grid: Vec<String>,
    /// Matrix dimensions "a,b,c" for C[a,c] = A[a,b]·B[b,c].
    #[arg(long, global = true, value_name = "A,B,C")]
    pub dims: Option<String>,
    /// Model dimensions "b,s,h,n".
    #[arg(long, global = true, value_name = "B,S,H,N")]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Meter the depth broadcast that replicates TesseractB operands.
    #[arg(long, global = true)]
    pub meter_initial_replication: bool,
    /// Accept grids with d > q.
    #[arg(long, global = true)]
    pub allow_d_gt_q: bool,
    /// JSON file with the same keys as the flags; flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Write a CSV trace of every collective.
    #[arg(long, global = true, value_name = "PATH")]
    pub trace: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check every algorithm and layer against its serial reference.
    Verify {
        /// Seeds per layer case (defaults to the smaller of 5 and --trials).
        #[arg(long)]
        layer_trials: Option<usize>,
        /// Corrupt one output shard of the first Tesseract case.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Measure communication of the algorithms on each grid.
    Bench,
    /// Evaluate the analytic cost formulas.
    Cost {
        /// Processor counts to sweep.
        #[arg(long, value_delimiter = ',')]
        procs: Vec<u64>,
        /// Square matrix size for bounds and memory.
        #[arg(long)]
        n: Option<u64>,
    },
    /// Train the toy transformer serially and distributed and compare losses.
    TrainToy {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        layers: Option<usize>,
    },
    /// Run a single distributed product.
    Run {
        #[arg(long, value_enum, default_value_t = Algorithm::Tesseract)]
        algo: Algorithm,
        /// nn, nt or tn (Tesseract only).
        #[arg(long, default_value = "nn")]
        variant: String,
        /// Left operand file (.csv or binary).
        #[arg(long = "a", value_name = "PATH")]
        a_file: Option<PathBuf>,
        /// Right operand file (.csv or binary).
        #[arg(long = "b", value_name = "PATH")]
        b_file: Option<PathBuf>,
        /// Save the product here.
        #[arg(long, value_name = "PATH")]
        save: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Tesseract,
    Summa,
    Cannon,
    Megatron,
}
