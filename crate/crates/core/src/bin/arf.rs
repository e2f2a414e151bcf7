//! Command-line entry point for the experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use arf_core::config::ExperimentConfig;
use arf_core::experiments;

#[derive(Parser)]
#[command(
    name = "arf",
    about = "Self-supervised preference pipeline: scorer training, online tracking, method comparison, and ablations",
    version
)]
struct Cli {
    /// Configuration file (flat `section.key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed override; every experiment is a pure function of (config, seed).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the trace corpus, static pool, lexicon, and vocabulary.
    GenCorpus,
    /// Train the static satisfaction scorer and report held-out accuracy.
    TrainStatic,
    /// Run the preference-flip schedule and log per-domain probe scores.
    TrackArf,
    /// Compare SFT, PPO, DPO, and TraceBias under one frozen scorer.
    Compare,
    /// Ablate the experience-replay ratio on recent vs static accuracy.
    AblateEr,
    /// Log gradient norms of the clipped and trace trainers on a matched task.
    GradStability,
    /// Rerun tracking with re-scoring on and off and report probe deltas.
    AblateRescore,
}

impl Command {
    fn id(&self) -> &'static str {
        match self {
            Command::GenCorpus => "gen-corpus",
            Command::TrainStatic => "train-static",
            Command::TrackArf => "track-arf",
            Command::Compare => "compare",
            Command::AblateEr => "ablate-er",
            Command::GradStability => "grad-stability",
            Command::AblateRescore => "ablate-rescore",
        }
    }
}

fn run(cli: Cli) -> arf_core::Result<()> {
    let mut cfg = ExperimentConfig::load_or_default(cli.config.as_deref())?;
    cfg.apply_overrides(cli.seed, cli.out);
    cfg.experiment = cli.command.id().to_string();
    cfg.validate()?;

    match cli.command {
        Command::GenCorpus => {
            let report = experiments::run_gen_corpus(&cfg)?;
            println!(
                "wrote {} traces, {} static samples, {} lexicon entries",
                report.trace_count, report.pool_count, report.lexicon_count
            );
            for path in &report.paths {
                println!("  {}", path.display());
            }
        }
        Command::TrainStatic => {
            let report = experiments::run_train_static(&cfg)?;
            println!(
                "static scorer: holdout accuracy {:.4} over {} samples ({} train, {} steps)",
                report.holdout_accuracy, report.holdout_n, report.train_n, report.steps
            );
            println!("  fingerprint {}", report.scorer_fingerprint);
        }
        Command::TrackArf => {
            let outcome = experiments::run_track_arf(&cfg)?;
            println!(
                "tracked {} steps: {} records stored, {} re-scoring sweeps",
                cfg.track_steps, outcome.records_stored, outcome.rescore_sweeps
            );
            for (domain, step) in &outcome.flips {
                let before = outcome.probe_at(domain, *step).unwrap_or(f64::NAN);
                let after = outcome
                    .probe_at(domain, step + cfg.flip_period)
                    .unwrap_or(f64::NAN);
                println!("  flip {domain}@{step}: probe {before:+.4} -> {after:+.4}");
            }
        }
        Command::Compare => {
            let report = experiments::run_compare(&cfg)?;
            println!("frozen scorer {}", report.scorer_hash);
            for row in &report.rows {
                println!(
                    "  {:10} mean score {:+.4}  ratio vs sft {:.4}  (n={})",
                    row.method, row.mean_score, row.normalized_ratio, row.n
                );
            }
        }
        Command::AblateEr => {
            let rows = experiments::run_ablate_er(&cfg)?;
            for row in &rows {
                println!(
                    "  er={:5}  recent accuracy {:.4}  static accuracy {:.4}",
                    row.label, row.recent_accuracy, row.static_accuracy
                );
            }
        }
        Command::GradStability => {
            let summaries = experiments::run_grad_stability(&cfg)?;
            for s in &summaries {
                println!(
                    "  {:10} {} updates: norm mean {:.4}, variance {:.6}",
                    s.method,
                    s.norms.len(),
                    s.mean,
                    s.variance
                );
            }
        }
        Command::AblateRescore => {
            let rows = experiments::run_ablate_rescore(&cfg)?;
            for row in &rows {
                println!(
                    "  {:16} {:6} {} delta {:+.4}",
                    row.arm,
                    row.domain,
                    if row.flipped { "flipped" } else { "control" },
                    row.delta
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
