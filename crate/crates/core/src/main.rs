use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use infoctl::cli::{
    cmd_analyze, cmd_corpus, cmd_reward, cmd_simulate, selftest, RunConfig, TRACES_FILE,
};
use infoctl::simenv::Profile;

#[derive(Parser)]
#[command(name = "infoctl", version, about = "Information-control simulator")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Episode planning seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Episodes per epoch.
    #[arg(long, global = true)]
    episodes: Option<usize>,
    /// Scripted agent profile.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate corpus.jsonl and tasks.jsonl.
    Corpus,
    /// Run every epoch of the schedule and write traces.jsonl.
    Simulate,
    /// Per-step utility curves and summary statistics.
    Analyze {
        /// Trace file; defaults to traces.jsonl in the output directory.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Recompute rewards from traces and report mismatches.
    Reward {
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Check built-in defaults against the published constants.
    Selftest,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(n) = cli.episodes {
        cfg.episodes_per_epoch = n;
    }
    if let Some(p) = cli.profile {
        cfg.agent_profile = p;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::Corpus => {
            let s = cmd_corpus(&cfg)?;
            println!(
                "wrote {} documents and {} tasks to {}",
                s.documents,
                s.tasks,
                cfg.output_dir.display()
            );
        }
        Command::Simulate => {
            let s = cmd_simulate(&cfg)?;
            println!(
                "wrote {} episodes ({} controlled) to {}",
                s.episodes,
                s.controlled,
                s.path.display()
            );
        }
        Command::Analyze { traces } => {
            let path = traces.clone().unwrap_or_else(|| cfg.output_dir.join(TRACES_FILE));
            let a = cmd_analyze(&path, cli.out.as_deref())?;
            let s = &a.summary;
            println!("episodes {} rows {} mean_reward {:.4}", s.episodes, s.rows, s.mean_reward);
            println!(
                "stop_events {} continue_events {} expand_events {}",
                s.stop_events, s.continue_events, s.expand_events
            );
            println!("step,count,novelty,effectiveness,utility");
            for m in &s.per_step {
                println!(
                    "{},{},{:.4},{:.4},{:.4}",
                    m.step + 1,
                    m.count,
                    m.novelty,
                    m.effectiveness,
                    m.utility
                );
            }
        }
        Command::Reward { traces } => {
            let path = traces.clone().unwrap_or_else(|| cfg.output_dir.join(TRACES_FILE));
            let audit = cmd_reward(&path, &cfg.reward)?;
            for m in &audit.mismatches {
                println!(
                    "mismatch line {} task {}: recorded {:.6} recomputed {:.6}",
                    m.line, m.task_id, m.recorded.total, m.recomputed.total
                );
            }
            println!(
                "audited {} episodes, {} mismatches, max total {:.4}",
                audit.episodes,
                audit.mismatches.len(),
                audit.max_total
            );
            if !audit.mismatches.is_empty() {
                bail!("{} reward mismatches", audit.mismatches.len());
            }
        }
        Command::Selftest => {
            let bad = selftest();
            for line in &bad {
                println!("{line}");
            }
            if !bad.is_empty() {
                bail!("selftest failed");
            }
            println!("defaults ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).context("infoctl") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
