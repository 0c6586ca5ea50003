use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hetnet::harness::{cmd_eval, cmd_plot, cmd_train};
use hetnet::policy::ActMode;

/// Heterogeneous graph attention communication for multi-agent teams:
/// train, evaluate and plot PP/PCP experiments.
#[derive(Parser)]
#[command(name = "hetnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy from an experiment config (JSON).
    Train(TrainArgs),
    /// Evaluate a checkpoint in execution mode (SSN removed).
    Eval(EvalArgs),
    /// Render learning curves from metrics CSVs to a PNG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Path to the experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config's out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Resume from a checkpoint written by an earlier run of the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Episodes per seed (default: the config's eval block).
    #[arg(long)]
    episodes: Option<usize>,
    /// Force greedy action selection.
    #[arg(long)]
    greedy: bool,
    /// Force sampled action selection.
    #[arg(long, conflicts_with = "greedy")]
    sample: bool,
    /// Comma-separated evaluation seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    /// Write the full report as JSON to this path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Metrics CSV files; files sharing a run label form one curve with a
    /// min/max band across seeds.
    #[arg(required = true)]
    csvs: Vec<PathBuf>,
    /// Output PNG path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Plot(args) => cmd_plot(&args.csvs, &args.out).map(|()| {
            println!("wrote {}", args.out.display());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run_train(args: TrainArgs) -> Result<(), hetnet::harness::HarnessError> {
    let quiet = args.quiet;
    let outcome = cmd_train(&args.config, args.seed, args.out, args.resume, |row| {
        if !quiet {
            println!(
                "epoch {:>5}  steps {:>7.2}  return {:>8.4}  success {:>5.1}%  ploss {:>9.5}  closs {:>9.5}",
                row.epoch,
                row.mean_steps,
                row.mean_episode_return,
                100.0 * row.success_rate,
                row.policy_loss,
                row.critic_loss,
            );
        }
    })?;
    println!("metrics:    {}", outcome.metrics.display());
    println!("checkpoint: {}", outcome.checkpoint.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<(), hetnet::harness::HarnessError> {
    let mode = if args.greedy {
        Some(ActMode::Greedy)
    } else if args.sample {
        Some(ActMode::Sample)
    } else {
        None
    };
    let report = cmd_eval(&args.checkpoint, args.episodes, mode, &args.seeds)?;
    println!(
        "steps:   {:.2} +/- {:.2} (std across seeds; stderr {:.2})",
        report.mean_steps, report.std_steps_across_seeds, report.stderr_steps_across_seeds
    );
    println!(
        "return:  {:.3} +/- {:.3} (std across seeds; stderr {:.3})",
        report.mean_return, report.std_return_across_seeds, report.stderr_return_across_seeds
    );
    println!("success: {:.1}%", 100.0 * report.success_rate);
    for s in &report.per_seed {
        println!(
            "  seed {:>3}: steps {:.2} +/- {:.2}, return {:.3}, success {:.1}%",
            s.seed,
            s.mean_steps,
            s.std_steps,
            s.mean_return,
            100.0 * s.success_rate
        );
    }
    if let Some(path) = args.report {
        std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap())?;
        println!("report: {}", path.display());
    }
    Ok(())
}
