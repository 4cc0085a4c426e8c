use crate::report::Format;
use clap::{Args, Parser, Subcommand};
use hetdetect_core::simlab::Calibration;
use hetdetect_core::{LossModel, WeightPreset};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "hetdetect", version, about = "Detect heterogeneous coefficients across data blocks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the Wald, extreme contrast and combined tests on block CSV files.
    Test(TestArgs),
    /// Monte Carlo size and power study.
    Simulate(SimulateArgs),
    /// Empirical coverage of the Wald and combined statistics under the null.
    Coverage(CoverageArgs),
    /// Closed-form signal-to-noise ratios and power regimes.
    PowerCalc(PowerCalcArgs),
    /// Recommended split fraction for the extreme contrast test.
    GammaOpt(GammaOptArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration document; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "HETDETECT_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Block manifest (JSON).
    #[arg(long)]
    pub blocks: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<LossModel>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub weight: Option<WeightPreset>,
    /// Shuffle rows with this seed before splitting (default: keep file order).
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub model: Option<LossModel>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub weight: Option<WeightPreset>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Sparsity level of the alternative; omit for the global null.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_enum)]
    pub calibration: Option<CalibrationArg>,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Nominal levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum CalibrationArg {
    Nominal,
    Empirical,
}

impl From<CalibrationArg> for Calibration {
    fn from(c: CalibrationArg) -> Self {
        match c {
            CalibrationArg::Nominal => Calibration::Nominal,
            CalibrationArg::Empirical => Calibration::Empirical,
        }
    }
}

#[derive(Debug, Args)]
pub struct PowerCalcArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub sigma_minus: Option<f64>,
    #[arg(long)]
    pub sigma_plus: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GammaOptArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
}
