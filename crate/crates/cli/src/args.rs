use std::path::PathBuf;

use clap::{Args as ClapArgs, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "qrazor",
    version,
    about = "Base-precision quantization and significant data razoring"
)]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GranularityArg {
    PerTensor,
    PerChannel,
}

#[derive(Debug, Clone, ClapArgs)]
pub struct SdrArgs {
    #[arg(long, default_value_t = 16)]
    pub base_bits: u8,
    #[arg(long, default_value_t = 4)]
    pub target_bits: u8,
    #[arg(long, default_value_t = 16)]
    pub group_size: usize,
    /// Defaults to ceil(log2(base - target + 1)).
    #[arg(long)]
    pub flag_bits: Option<u8>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute static absmax scales over FTN1 calibration tensors.
    Calibrate {
        #[arg(long)]
        role: String,
        #[arg(long, value_enum, default_value = "per-tensor")]
        granularity: GranularityArg,
        /// Channel axis for per-channel scaling.
        #[arg(long, default_value_t = 0)]
        axis: usize,
        #[arg(long)]
        base_bits: u8,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        tensors: Vec<PathBuf>,
    },
    /// Quantize an FTN1 tensor to a QBT1 base-precision tensor.
    Quantize {
        #[arg(long)]
        scales: PathBuf,
        /// Round scales through IEEE half precision first.
        #[arg(long)]
        f16_scales: bool,
        input: PathBuf,
        output: PathBuf,
    },
    /// Razor a QBT1 base-precision tensor into a QRZ1 container.
    Compress {
        #[command(flatten)]
        sdr: SdrArgs,
        input: PathBuf,
        output: PathBuf,
    },
    /// Expand a QRZ1 container back to base precision (QBT1).
    Decompress {
        /// Write the dequantized FTN1 float tensor instead.
        #[arg(long)]
        float: bool,
        input: PathBuf,
        output: PathBuf,
    },
    /// Multiply two QRZ1 tensors: out = lhs · rhsᵀ, both [rows, K].
    Matmul {
        lhs: PathBuf,
        rhs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print JSON statistics for an FTN1 or QBT1 tensor.
    Stats {
        #[arg(long)]
        hist: bool,
        #[arg(long)]
        zeros: bool,
        #[arg(long)]
        errors: bool,
        #[command(flatten)]
        sdr: SdrArgs,
        /// Scales for FTN1 input; otherwise calibrated per tensor on the input.
        #[arg(long)]
        scales: Option<PathBuf>,
        #[arg(long, default_value = "activation")]
        role: String,
        /// Also report per-group DMQ and per-tensor absmax baselines at this width.
        #[arg(long)]
        dmq_bits: Option<u32>,
        /// Histogram threshold (1-based bit order) for the fraction-above figure.
        #[arg(long, default_value_t = 12)]
        threshold: usize,
        input: PathBuf,
    },
    /// Operation counts of rotation-based versus razoring-based pipelines.
    Cost {
        #[arg(long)]
        m: u64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        h: u64,
        #[arg(long)]
        g: u64,
    },
    /// Validate a QRZ1 container.
    Check { input: PathBuf },
}
