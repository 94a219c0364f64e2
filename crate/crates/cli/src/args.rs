use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use obsprune::fisher::{FisherConfig, DEFAULT_BLOCK_SIZE, MAX_NUM_GRADS};
use obsprune::pruners::{Method, PrunerSpec, Target};

use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "obsprune", version, about = "Second-order (OBS-family) weight pruning")]
pub struct Cli {
    /// Worker threads for block-parallel work (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Prune a weight container using per-sample gradients.
    Prune(PruneCmd),
    /// Gradual sparsity sweep on the toy model; one checkpoint per target.
    Sweep(SweepCmd),
    /// Quadratic loss increase and mask statistics between two containers.
    Eval(EvalCmd),
    /// Train, prune and recover the built-in toy model.
    Toy(ToyCmd),
    /// Brute-force optimal subset for a small layer.
    #[command(hide = true)]
    Oracle(OracleCmd),
    /// Regenerate the bundled fixtures and golden reports.
    #[command(hide = true)]
    GenFixture(GenFixtureCmd),
}

#[derive(Args, Debug, Clone)]
pub struct PrunerArgs {
    /// gm, wf or ovit.
    #[arg(long, default_value = "ovit")]
    pub method: Method,
    /// Fisher block size. Desk-scale default; the reference setting is 192 for
    /// a 192-wide embedding.
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    pub block_size: usize,
    /// Fisher dampening [default: 1e-8 for ovit and gm, 1e-6 for wf].
    #[arg(long)]
    pub damp: Option<f64>,
    /// Gradient rows used per layer.
    #[arg(long, default_value_t = MAX_NUM_GRADS)]
    pub num_grads: usize,
    /// Fisher recomputations per pruning event.
    #[arg(long, default_value_t = 1)]
    pub recompute: usize,
    /// Uniform sparsity per layer instead of a global pool.
    #[arg(long)]
    pub per_layer: bool,
}

impl PrunerArgs {
    pub fn spec(&self) -> Result<PrunerSpec, CliError> {
        let damp = self.damp.unwrap_or(self.method.default_dampening());
        let fisher = FisherConfig::new(self.block_size, damp, self.num_grads)?;
        let spec = PrunerSpec::new(self.method)
            .with_fisher(fisher)
            .with_recomputations(self.recompute)
            .with_per_layer(self.per_layer);
        spec.validate()?;
        Ok(spec)
    }
}

pub fn parse_nm(s: &str) -> Result<Target, CliError> {
    match s.parse::<Target>()? {
        t @ Target::NM { .. } => Ok(t),
        Target::Sparsity(_) => Err(CliError::usage(format!("`{s}` is not an N:M pattern"))),
    }
}

pub fn parse_sparsity(v: f64) -> Result<Target, CliError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(CliError::usage(format!("sparsity {v} outside [0, 1]")));
    }
    Ok(Target::Sparsity(v))
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("target").required(true).args(["sparsity", "nm"])))]
pub struct PruneCmd {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub grads: PathBuf,
    /// Fraction of prunable weights to zero.
    #[arg(long)]
    pub sparsity: Option<f64>,
    /// Semi-structured pattern, e.g. 2:4.
    #[arg(long)]
    pub nm: Option<String>,
    #[command(flatten)]
    pub pruner: PrunerArgs,
    /// Output container (weights and masks).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Toy model and schedule flags shared by `toy` and `sweep`.
#[derive(Args, Debug, Clone)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// `in x out` (linear) or `in x hidden x out` (MLP).
    #[arg(long, default_value = "16x8x4")]
    pub dims: String,
    /// Distinct synthetic inputs.
    #[arg(long, default_value_t = 256)]
    pub inputs: usize,
    /// Label noise of the MLP toy.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Dense training steps before pruning [default: 3000, or 0 with --weights].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Start from a saved toy checkpoint instead of the random init.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Peak learning rate (also used for dense training).
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    /// Cycle length in steps [default: the sweep interval].
    #[arg(long)]
    pub period: Option<usize>,
    /// Single linear decay over the whole run instead of cycles.
    #[arg(long)]
    pub acyclic: bool,
    /// Recovery steps after each pruning event.
    #[arg(long)]
    pub interval: Option<usize>,
    /// Extra recovery on each checkpoint (a third of the main run's budget).
    #[arg(long)]
    pub extra_recovery: bool,
    /// TOML file with lr.max, lr.min, lr.period, sweep.targets, sweep.interval.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Plot data as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepCmd {
    /// Comma-separated increasing sparsities, e.g. 0.5,0.6,0.75.
    #[arg(long)]
    pub targets: Option<String>,
    #[command(flatten)]
    pub toy: ToyArgs,
    #[command(flatten)]
    pub pruner: PrunerArgs,
    /// Checkpoint prefix; files are named `<out>.<sparsity>.ovpt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("target").args(["sparsity", "nm", "targets"])))]
pub struct ToyCmd {
    /// One-shot target sparsity.
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[arg(long)]
    pub nm: Option<String>,
    /// Gradual sweep targets instead of a one-shot prune.
    #[arg(long)]
    pub targets: Option<String>,
    #[command(flatten)]
    pub toy: ToyArgs,
    #[command(flatten)]
    pub pruner: PrunerArgs,
    /// Checkpoint prefix for sweeps, or output container for one-shot runs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalCmd {
    #[arg(long)]
    pub weights_before: PathBuf,
    #[arg(long)]
    pub weights_after: PathBuf,
    #[arg(long)]
    pub grads: PathBuf,
    #[arg(long, default_value_t = obsprune::fisher::DEFAULT_DAMPENING)]
    pub damp: f64,
    #[arg(long, default_value_t = MAX_NUM_GRADS)]
    pub num_grads: usize,
    /// Check an N:M pattern on the after-masks.
    #[arg(long)]
    pub nm: Option<String>,
}

#[derive(Args, Debug)]
pub struct OracleCmd {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub grads: PathBuf,
    /// Layer name [default: the first layer].
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub damp: f64,
}

#[derive(Args, Debug)]
pub struct GenFixtureCmd {
    #[arg(long, default_value = "crates/cli/fixtures")]
    pub dir: PathBuf,
    /// Also rewrite the golden reports from fresh runs.
    #[arg(long)]
    pub bless_golden: bool,
}
