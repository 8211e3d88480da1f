//! `anticipate`: train, evaluate and verify subgoal-anticipation agents on
//! grid maps.
//!
//! Exit status is 0 on success, 1 when a checked bound is violated or
//! training diverges, and 2 for configuration or input errors.

mod commands;
mod setup;

use std::ops::Range;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use subgoal_rl::EnvKind;

#[derive(Parser, Debug)]
#[command(name = "anticipate", version, about = "Tabular goal-conditioned RL with subgoal anticipation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train critic and anticipation model; writes a manifest, metrics.jsonl
    /// and checkpoints.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint on every (start, goal) pair.
    Eval(EvalArgs),
    /// Measure error constants and check the cost bounds.
    Verify(VerifyArgs),
    /// Write shortest-distance and hitting-time tables and check the
    /// triangle inequality.
    Oracle(OracleArgs),
    /// Compare episodes-to-threshold against the flat baseline on corridors.
    CompareFlat(CompareArgs),
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Shared {
    /// ASCII map: `#` wall, `.` free, `S` start cell.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// TOML hyperparameter file; missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for the run; overrides the config's `seed`.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Half-open seed range `a..b`, run concurrently with one output
    /// directory per seed.
    #[arg(long, value_parser = parse_seed_range)]
    pub seeds: Option<Range<u64>>,
    /// Output directory [default: out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `det` or `slip=<p>`.
    #[arg(long)]
    pub env: Option<EnvKind>,
    /// Replace the learned model with exhaustive loss minimization.
    #[arg(long)]
    pub exact_argmin: bool,
    /// Use the oracle's optimal values as the critic.
    #[arg(long)]
    pub oracle_critic: bool,
    /// End each segment as soon as its subgoal is reached.
    #[arg(long)]
    pub early_stop_subgoal: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    shared: Shared,
    /// Directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Episodes per task on stochastic maps.
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Print the planner's subgoals towards the goal cell `row,col`.
    #[arg(long, value_parser = parse_cell)]
    overlay: Option<(usize, usize)>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    shared: Shared,
    /// Directory written by `train`; without it the components are trained
    /// (or injected) in memory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Sampled tasks on stochastic maps.
    #[arg(long, default_value_t = 20)]
    tasks: usize,
    #[arg(long, default_value_t = 1000)]
    episodes_per_task: usize,
    /// Rollouts per pair or triple for the stochastic policy and drift
    /// constants.
    #[arg(long, default_value_t = 500)]
    rollouts: usize,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    shared: Shared,
    /// Corridor lengths.
    #[arg(long, value_delimiter = ',', default_value = "20,40")]
    lengths: Vec<usize>,
    /// Success rate that counts as solved.
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
}

fn parse_seed_range(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected a..b, got {s:?}"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("bad range start {a:?}: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad range end {b:?}: {e}"))?;
    if a >= b {
        return Err(format!("empty seed range {a}..{b}"));
    }
    Ok(a..b)
}

fn parse_cell(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected row,col, got {s:?}"))?;
    let r = r.trim().parse().map_err(|e| format!("bad row {r:?}: {e}"))?;
    let c = c.trim().parse().map_err(|e| format!("bad column {c:?}: {e}"))?;
    Ok((r, c))
}

/// Result of a command that ran to completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Ok,
    Violation,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(&a.shared),
        Command::Eval(a) => commands::eval(&a.shared, &a.checkpoint, a.episodes, a.overlay),
        Command::Verify(a) => commands::verify(
            &a.shared,
            a.checkpoint.as_deref(),
            commands::SuiteSizes { tasks: a.tasks, episodes_per_task: a.episodes_per_task, rollouts: a.rollouts },
        ),
        Command::Oracle(a) => commands::oracle(&a.shared),
        Command::CompareFlat(a) => commands::compare_flat(&a.shared, &a.lengths, a.threshold),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Violation) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
