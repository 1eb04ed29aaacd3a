//! Config-driven driver for the kconvex toolkit.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "kconvex", version, about = "Verify K-convexity and K-monotonicity on discretized metric measure spaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Config file (TOML or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed for randomly drawn inputs.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Multiplies every check tolerance.
    #[arg(long = "tol-scale", global = true)]
    pub tol_scale: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub method: Option<MethodArg>,
    /// Entropic regularization strength.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Config override `key.path=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Exact,
    Entropic,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Space operations.
    Space {
        #[command(subcommand)]
        action: SpaceAction,
    },
    /// Optimal transport.
    Transport {
        #[command(subcommand)]
        action: TransportAction,
    },
    /// Hopf-Lax semigroup.
    Hopflax {
        #[command(subcommand)]
        action: HopflaxAction,
    },
    /// Flows of the velocity field -grad u.
    Flow {
        #[command(subcommand)]
        action: FlowAction,
    },
    /// Run the equivalence suite.
    Verify {
        /// Moduli to test; overrides the config's K list.
        #[arg(long = "K", value_delimiter = ',', allow_hyphen_values = true)]
        k: Vec<f64>,
    },
    /// Rigidity demonstrations.
    Demo {
        #[arg(value_enum)]
        mode: DemoMode,
    },
}

#[derive(Debug, Subcommand)]
pub enum SpaceAction {
    /// Check the metric-measure invariants.
    Validate,
}

#[derive(Debug, Subcommand)]
pub enum TransportAction {
    /// W₂ between the configured measures.
    W2 {
        /// Also write the plan as CSV.
        #[arg(long)]
        plan: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum HopflaxAction {
    /// Evaluate Q_t at the configured times.
    Eval,
}

#[derive(Debug, Subcommand)]
pub enum FlowAction {
    /// Integrate the flow and write snapshots.
    Run,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoMode {
    Splitting,
    Cone,
}
