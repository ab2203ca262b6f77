use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adaptive_decoding::harness::{
    cmd_eval, cmd_select_actions, cmd_sweep, cmd_train, with_workers, RunConfig,
};
use adaptive_decoding::Result;

/// Select decoding action sets, train adapters, evaluate and sweep.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the reward matrix and write greedy / top-k action sets.
    SelectActions(Common),
    /// Train the configured adapter (resume with --checkpoint).
    Train(Common),
    /// Evaluate static baselines and adapter checkpoints.
    Eval(Common),
    /// Train and evaluate over the config's seeds and budgets.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rollout worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Checkpoint to resume from (train) or evaluate (eval, repeatable).
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        Ok(cfg)
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::SelectActions(c) => {
            let cfg = c.load()?;
            let out = with_workers(c.workers, || cmd_select_actions(&cfg))??;
            let names: Vec<String> = out.greedy.actions.iter().map(ToString::to_string).collect();
            println!("greedy selection: {}", names.join(", "));
            println!("wrote {}", out.action_set_path.display());
        }
        Command::Train(c) => {
            if c.checkpoint.len() > 1 {
                return Err(adaptive_decoding::Error::InvalidInput(
                    "train resumes from at most one --checkpoint".into(),
                ));
            }
            let cfg = c.load()?;
            let resume = c.checkpoint.first().map(PathBuf::as_path);
            let out = with_workers(c.workers, || cmd_train(&cfg, resume))??;
            if let Some(v) = out.trace.iter().rev().find_map(|r| r.validation) {
                println!("final validation: {v}");
            }
            println!("wrote {}", out.checkpoint.display());
        }
        Command::Eval(c) => {
            let cfg = c.load()?;
            let report = with_workers(c.workers, || cmd_eval(&cfg, &c.checkpoint))??;
            for cell in &report.cells {
                println!(
                    "{:<18} {:<7} {:.4} ± {:.4}",
                    cell.method.name(),
                    String::from(cell.metric),
                    cell.mean,
                    cell.ci95
                );
            }
        }
        Command::Sweep(c) => {
            let cfg = c.load()?;
            let out = with_workers(c.workers, || cmd_sweep(&cfg))??;
            println!("wrote {}", out.aggregate_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
