use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use contdid::transport::Extrapolation;
use contdid::{Bandwidth, ControlSet, KernelFamily};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "contdid",
    version,
    about = "Difference-in-differences with a continuous treatment on repeated cross-sections"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Per-period sample summaries.
    Summarize(SummarizeArgs),
    /// Treatment value where a period's treatment distribution crosses the reference one.
    Crossing(CrossingArgs),
    /// Time trend of outcomes recovered at the crossing or on a control set.
    Trend(TrendArgs),
    /// Average effect on units at x versus their rank-matched counterfactual.
    Att(AttArgs),
    /// Quantile effect on units at x.
    Qtt(QttArgs),
    /// Average marginal effect, pointwise (--x) or averaged (--c).
    Ame(AmeArgs),
    /// Curvature bounds on the marginal effect (or on the ATT with --x-prime).
    Bounds(BoundsArgs),
    /// Random-coefficient extrapolation of the marginal effect.
    Rc(RcArgs),
    /// Piecewise-linear fit of the rank map.
    #[command(name = "fit-q")]
    #[serde(rename = "fit-q")]
    FitQ(FitQArgs),
    /// One-sided stochastic dominance test of treatment distributions.
    Dominance(DominanceArgs),
    /// Draw a dataset from a simulation design.
    Simulate(SimulateArgs),
    /// Percentile bootstrap of a single estimand.
    Bootstrap(BootstrapArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Long-format CSV with one row per unit.
    #[arg(long, required_unless_present = "data_t", conflicts_with = "data_t")]
    pub data: Option<PathBuf>,
    /// Comparison-period CSV (with --data-T).
    #[arg(long = "data-t", id = "data_t", requires = "data_ref")]
    pub data_t: Option<PathBuf>,
    /// Reference-period CSV (with --data-t).
    #[arg(long = "data-T", id = "data_ref", requires = "data_t")]
    #[serde(rename = "data_T")]
    pub data_ref: Option<PathBuf>,
    #[arg(long, default_value = "period")]
    pub period_col: String,
    #[arg(long, default_value = "y")]
    pub y_col: String,
    #[arg(long, default_value = "x")]
    pub x_col: String,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long, default_value = "biweight")]
    pub kernel: KernelFamily,
    /// `auto` (per-period rule of thumb) or a positive number.
    #[arg(long, default_value = "auto")]
    pub bandwidth: Bandwidth,
    #[arg(long, default_value_t = 0.05)]
    pub trim_lo: f64,
    #[arg(long, default_value_t = 0.95)]
    pub trim_hi: f64,
    /// Control set such as "a,b;c,d"; replaces the crossing as the control group.
    #[arg(long)]
    pub interval: Option<ControlSet>,
    #[arg(long, value_enum, default_value = "shift")]
    pub extrapolation: ExtrapolationArg,
    /// Degeneracy tolerance for |q(x) - x| in units of the reference bandwidth.
    #[arg(long, default_value_t = 0.1)]
    pub tol_factor: f64,
    /// Comparison period, numbered 1..T in period-label order.
    #[arg(long, default_value_t = 1)]
    pub period: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtrapolationArg {
    Shift,
    Affine,
}

impl From<ExtrapolationArg> for Extrapolation {
    fn from(e: ExtrapolationArg) -> Self {
        match e {
            ExtrapolationArg::Shift => Extrapolation::Shift,
            ExtrapolationArg::Affine => Extrapolation::Affine,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct InferenceArgs {
    /// Bootstrap replications; omit for point estimates only.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hold crossings at their full-sample estimates in every replicate.
    #[arg(long)]
    pub freeze_crossing: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct OutArgs {
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args, Serialize)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct CrossingArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TrendArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Points of the output grid.
    #[arg(long, default_value_t = 512)]
    pub grid: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct AttArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Evaluation point; without it a curve over --grid points is produced.
    #[arg(long)]
    pub x: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct QttArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub x: f64,
    /// Quantile level; without it a curve over --grid levels in (0, 1) is produced.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, default_value_t = 19)]
    pub grid: usize,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct AmeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, conflicts_with = "c")]
    pub x: Option<f64>,
    /// Average over units with |q(x) - x| > c.
    #[arg(long)]
    pub c: Option<f64>,
    /// Absolute degeneracy tolerance; overrides --tol-factor.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub x: Option<f64>,
    /// Bound the ATT between x and x' instead of the marginal effect.
    #[arg(long, requires = "x")]
    pub x_prime: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct RcArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, conflicts_with = "c")]
    pub x: Option<f64>,
    /// Overall effect averaged over units with |q(x) - x| > c.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Test equality of the secant slopes across periods at --x (needs T >= 3).
    #[arg(long, requires = "x")]
    pub linearity_test: bool,
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct FitQArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comparison period, numbered 1..T in period-label order.
    #[arg(long, default_value_t = 1)]
    pub period: usize,
    /// Four ascending knots "k0,k1,k2,k3".
    #[arg(long)]
    pub knots: String,
    /// Spacing of the fitting grid.
    #[arg(long)]
    pub step: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct DominanceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1)]
    pub period: usize,
    /// Test interval "a,b".
    #[arg(long)]
    pub interval: String,
    #[arg(long, default_value_t = 499)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Design file, JSON or TOML by extension.
    #[arg(long)]
    pub dgp: PathBuf,
    /// Units per period.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimandArg {
    Crossing,
    Trend,
    Att,
    Qtt,
    Ame,
    AmeAvg,
    Rc,
    AmeLower,
    AmeUpper,
    AttLower,
    AttUpper,
}

#[derive(Debug, Args, Serialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_enum)]
    pub estimand: EstimandArg,
    #[arg(long)]
    pub x: Option<f64>,
    #[arg(long)]
    pub x_prime: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    /// Reference-period outcome at which to evaluate the trend.
    #[arg(long)]
    pub y: Option<f64>,
    #[arg(long, default_value_t = 499)]
    pub replications: usize,
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub freeze_crossing: bool,
    /// Include every successful replicate value in the output.
    #[arg(long)]
    pub keep_replicates: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
