use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use utweak_core::DEFAULT_SEED;

/// Euler-scheme weak-error experiments and structural condition checks for SDEs.
#[derive(Debug, Parser)]
#[command(name = "utweak", version)]
pub struct Cli {
    /// Worker threads (output does not depend on this).
    #[arg(long, env = "UTWEAK_THREADS", global = true)]
    pub threads: Option<usize>,

    /// Re-run the command recorded in a `summary.json`.
    #[arg(long, value_name = "FILE")]
    pub from_summary: Option<PathBuf>,

    /// With `--from-summary`: write into this directory instead of the recorded one.
    #[arg(long, value_name = "DIR", requires = "from_summary")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Simulate Euler paths and dump them as CSV.
    Simulate(SimulateArgs),
    /// Audit the structural hypotheses on a grid.
    Check(CheckArgs),
    /// Weak error against a closed form or a finer coupled path.
    WeakError(WeakErrorArgs),
    /// Decay of E exp(-2 int lambda) along paths.
    Decay(DecayArgs),
    /// Derivative of the semigroup along a direction.
    Derivative(DerivativeArgs),
    /// Time averages against the invariant law.
    Ergodic(ErgodicArgs),
    /// Scripted run of a builtin example.
    Reproduce(ReproduceArgs),
    /// List the builtin examples and their oracles.
    Examples(ExamplesArgs),
}

impl Command {
    pub fn out_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::Simulate(a) => Some(&mut a.run.out),
            Command::Check(a) => Some(&mut a.out),
            Command::WeakError(a) => Some(&mut a.run.out),
            Command::Decay(a) => Some(&mut a.run.out),
            Command::Derivative(a) => Some(&mut a.run.out),
            Command::Ergodic(a) => Some(&mut a.run.out),
            Command::Reproduce(a) => Some(&mut a.out),
            Command::Examples(_) => None,
        }
    }
}

pub fn parse_seed(s: &str) -> Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("invalid seed `{s}`: {e}"))
}

/// Options shared by every Monte Carlo command.
#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct RunArgs {
    /// `builtin:NAME` or a path to a JSON model file.
    #[arg(long)]
    pub model: String,
    /// Initial point, comma separated (defaults to the builtin's, else the origin).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long, value_parser = parse_seed, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Record every `stride`-th mesh time.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Also record the variational Jacobian.
    #[arg(long)]
    pub jacobian: bool,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct CheckArgs {
    #[arg(long)]
    pub model: String,
    /// Exponent in `u = cosh(alpha x)` for the gap check.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// One-dimensional grid `lo,hi,step`.
    #[arg(long, value_delimiter = ',', num_args = 3, allow_hyphen_values = true)]
    pub grid: Option<Vec<f64>>,
    /// Half-width of the box grid used in two or more dimensions.
    #[arg(long)]
    pub box_radius: Option<f64>,
    /// Grid points per axis in the box grid.
    #[arg(long)]
    pub points_per_axis: Option<usize>,
    /// Lyapunov function to check, as an expression.
    #[arg(long)]
    pub lyapunov: Option<String>,
    /// Check dissipativity outside this radius.
    #[arg(long)]
    pub dissipativity: Option<f64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct WeakErrorArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Observable, in the model's expression language.
    #[arg(long, default_value = "tanh(x1)")]
    pub phi: String,
    /// Use the builtin's closed-form law instead of a fine coupled path.
    #[arg(long)]
    pub exact: bool,
    /// Refinement factor of the coupled reference (power of two).
    #[arg(long, default_value_t = 64)]
    pub refine: usize,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct DecayArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Rate function as an expression (default: induced from a 1-D model).
    #[arg(long)]
    pub lambda: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct DerivativeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "tanh(x1)")]
    pub f: String,
    /// Direction field, comma separated components (default: the first axis).
    #[arg(long, value_delimiter = ',')]
    pub direction: Option<Vec<String>>,
    /// Fail if the estimate exceeds `exp(-rate t) + 3 stderr` anywhere.
    #[arg(long)]
    pub bound_rate: Option<f64>,
    /// Also run the pathwise gradient inequality check at this relative slack.
    #[arg(long)]
    pub gamma_slack: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ErgodicArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "tanh(x1)")]
    pub phi: String,
    /// Reference value of the invariant expectation.
    #[arg(long, conflicts_with = "invariant")]
    pub oracle: Option<f64>,
    /// Compute the reference by quadrature against the builtin's invariant density.
    #[arg(long)]
    pub invariant: bool,
    /// Allowed absolute gap at the horizon, on top of three standard errors.
    #[arg(long, default_value_t = 0.02)]
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ReproduceArgs {
    /// Builtin example name.
    pub name: String,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long, value_parser = parse_seed)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ExamplesArgs {
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seeds_accept_hex() {
        assert_eq!(parse_seed("0x5DE5EED0").unwrap(), DEFAULT_SEED);
        assert_eq!(parse_seed("17").unwrap(), 17);
        assert!(parse_seed("zz").is_err());
    }

    #[test]
    fn commands_round_trip_through_json() {
        let cli = Cli::try_parse_from(["utweak", "weak-error", "--model", "builtin:ou", "--x0", "-1.5", "--exact", "--phi", "x1^2"]).unwrap();
        let cmd = cli.command.unwrap();
        let text = serde_json::to_string(&cmd).unwrap();
        assert!(text.contains("\"subcommand\":\"weak-error\""));
        assert_eq!(serde_json::from_str::<Command>(&text).unwrap(), cmd);
    }
}
