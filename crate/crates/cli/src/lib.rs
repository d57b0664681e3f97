//! `ergoreach` command-line driver.
//!
//! ```text
//! ergoreach plan --scene scara-trap.json --step 0.08
//! ergoreach evaluate --scene scara-trap.json --trace scara-trap.trace.json --mvc 100
//! ergoreach accessibility --scene scara-three-obstacles.json --links 20,10,20 --links 20,20,25
//! ergoreach fixtures --out fixtures
//! ergoreach serve --port 8080 --fixtures fixtures
//! ```
//!
//! `plan` exits with 0 when the goal is reached, 2 when the run ended on a
//! local minimum and 3 when it was blocked or ran out of iterations. Any
//! error, including bad usage, exits with 1.

pub mod commands;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ergoreach_core::ergonomics::ErgonomicsError;
use ergoreach_core::planner::PlannerError;
use ergoreach_core::scene_io::SceneError;
use ergoreach_core::{InterventionPolicy, Termination};
use thiserror::Error;

pub use commands::{accessibility, evaluate, fixtures, plan, serve};

pub const EXIT_GOAL: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_LOCAL_MINIMUM: i32 = 2;
pub const EXIT_STUCK: i32 = 3;

pub fn exit_code(termination: Termination) -> i32 {
    match termination {
        Termination::GoalReached => EXIT_GOAL,
        Termination::LocalMinimum => EXIT_LOCAL_MINIMUM,
        Termination::Blocked | Termination::Exhausted => EXIT_STUCK,
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Scene {
        path: PathBuf,
        #[source]
        source: SceneError,
    },
    #[error("{path}: {message}")]
    Document { path: PathBuf, message: String },
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Ergonomics(#[from] ErgonomicsError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot serve on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Parser)]
#[command(
    name = "ergoreach",
    version,
    about = "Plan, evaluate and serve serial-chain reaching tasks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan a trajectory and write its trace.
    Plan(PlanArgs),
    /// Compute a fatigue report for a trace.
    Evaluate(EvaluateArgs),
    /// Plan a grid of step lengths and chain variants and count solutions.
    Accessibility(AccessibilityArgs),
    /// Write the bundled fixture scenes.
    Fixtures(FixturesArgs),
    /// Run the HTTP planning service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Halt,
    Auto,
    External,
}

impl From<PolicyArg> for InterventionPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Halt => InterventionPolicy::Halt,
            PolicyArg::Auto => InterventionPolicy::auto_escalate(),
            PolicyArg::External => InterventionPolicy::External,
        }
    }
}

/// Planner settings shared by the planning commands. Unset values come
/// from the scene document.
#[derive(Debug, Clone, Default, Args)]
pub struct PlannerFlags {
    /// Step length in radians.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    /// Goal distance tolerance.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Accepted for reproducible invocations. No command draws random numbers.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[command(flatten)]
    pub planner: PlannerFlags,
    /// What happens at a local minimum. `external` leaves the run waiting,
    /// which ends it here.
    #[arg(long, value_enum, default_value = "halt")]
    pub policy: PolicyArg,
    /// JSON list of scripted interventions.
    #[arg(long)]
    pub interventions: Option<PathBuf>,
    /// Trace output. Defaults to `<scene stem>.trace.json` beside the scene.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
    /// JSON list of per-joint capacities (`mvc`, `f_cem`, optional `k`, `r`).
    #[arg(long, conflicts_with = "mvc")]
    pub capacities: Option<PathBuf>,
    /// Fresh capacity with this MVC on every joint.
    #[arg(long)]
    pub mvc: Option<f64>,
    /// The same load on every joint at every step instead of static loads.
    #[arg(long = "constant-load", conflicts_with_all = ["link_masses", "external_load"])]
    pub constant_load: Option<f64>,
    /// Link masses, comma separated. Default: massless links.
    #[arg(long = "link-masses", value_delimiter = ',')]
    pub link_masses: Option<Vec<f64>>,
    /// Force at the end effector as x,y,z. Default: none.
    #[arg(long = "external-load", value_delimiter = ',', allow_hyphen_values = true)]
    pub external_load: Option<Vec<f64>>,
    /// Gravity as x,y,z. Default: -9.81 along y for planar chains, along z otherwise.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub gravity: Option<Vec<f64>>,
    /// Minutes per trace step.
    #[arg(long, conflicts_with = "duration")]
    pub dt: Option<f64>,
    /// Total minutes spread evenly over the trace.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, default_value = "model units")]
    pub units: String,
    /// Report output. Defaults to `<scene stem>.report.json` beside the scene.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AccessibilityArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[command(flatten)]
    pub planner: PlannerFlags,
    /// Step lengths of the grid, comma separated. Default: the single
    /// step length of `--step` or the scene.
    #[arg(long, value_delimiter = ',')]
    pub steps: Option<Vec<f64>>,
    /// One chain variant as comma separated link lengths; repeatable.
    /// Default: the scene's chain.
    #[arg(long = "links", value_parser = parse_lengths)]
    pub links: Vec<Vec<f64>>,
    /// CSV output. Defaults to `<scene stem>.accessibility.csv` beside the scene.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_lengths(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect()
}

#[derive(Debug, Clone, Args)]
pub struct FixturesArgs {
    #[arg(long, default_value = "fixtures")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory of scene documents served as fixtures. Default: the bundled set.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
}

/// Runs one command, writing its human-readable output to `out`, and
/// returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    match cli.command {
        Command::Plan(args) => {
            let run = plan(&args)?;
            write_out(out, &run.summary)?;
            Ok(exit_code(run.termination))
        }
        Command::Evaluate(args) => {
            let run = evaluate(&args)?;
            write_out(out, &run.summary)?;
            Ok(EXIT_GOAL)
        }
        Command::Accessibility(args) => {
            let run = accessibility(&args)?;
            write_out(out, &run.summary)?;
            Ok(EXIT_GOAL)
        }
        Command::Fixtures(args) => {
            let written = fixtures(&args.out)?;
            let mut text = String::new();
            for path in &written {
                text.push_str(&format!("wrote {}\n", path.display()));
            }
            write_out(out, &text)?;
            Ok(EXIT_GOAL)
        }
        Command::Serve(args) => {
            serve(&args, out)?;
            Ok(EXIT_GOAL)
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}
