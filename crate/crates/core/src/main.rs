use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sparseq::experiment::{self, ExperimentConfig};
use sparseq::model::LossKind;
use sparseq::{Error, Result};

/// Quantile regression with sparse track labels: synthetic experiments.
///
/// Exit status: 0 on success, 1 on runtime failure, 2 on configuration
/// errors. `SPARSEQ_THREADS` caps the number of worker threads.
#[derive(Debug, Parser)]
#[command(name = "sparseq", version)]
struct Cli {
    /// Experiment config (flat `section.key = value`); defaults apply when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Root seed; overrides `seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate training and evaluation scenes.
    Synth,
    /// Train the surrogate model; writes the checkpoint and loss trace.
    Train {
        /// Loss family: quantile, gaussian or log_gaussian.
        #[arg(long)]
        loss: Option<String>,
        /// Use the shift-resilient loss (true/false).
        #[arg(long, value_name = "BOOL", action = clap::ArgAction::Set)]
        shift: Option<bool>,
    },
    /// Write per-channel prediction rasters for the evaluation scenes.
    Predict {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Calibration report (JSON, CSV) and SVG plots.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Border, slope and suspect-label analyses.
    Analyze {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Compare evaluated runs in one table.
    Report {
        #[arg(required = true, value_name = "RUN_DIR")]
        runs: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            log::info!("no --config given, using defaults");
            ExperimentConfig::default()
        }
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Command::Train { loss, shift } = &cli.command {
        if let Some(l) = loss {
            cfg.trainer.loss_kind = LossKind::parse(l)?;
        }
        if let Some(s) = shift {
            cfg.trainer.use_shift_loss = *s;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Report { runs } = &cli.command {
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("comparison"));
        let cmp = experiment::cmd_report(runs, &out)?;
        experiment::write_digest(&out)?;
        if !cli.quiet {
            print!("{}", cmp.to_markdown());
        }
        return Ok(());
    }
    let cfg = load_config(cli)?;
    let out = &cfg.output_dir;
    let message = match &cli.command {
        Command::Synth => {
            let s = experiment::cmd_synth(&cfg)?;
            format!(
                "{} train scenes ({} labels), {} eval scenes ({} labels) in {}",
                s.train_scenes,
                s.train_labels,
                s.eval_scenes,
                s.eval_labels,
                out.display()
            )
        }
        Command::Train { .. } => {
            let t = experiment::cmd_train(&cfg)?;
            let last = t.trace.last().map_or(f64::NAN, |r| r.loss);
            format!("{} steps, final batch loss {last:.4}", t.trace.len())
        }
        Command::Predict { checkpoint } => {
            let n = experiment::cmd_predict(&cfg, checkpoint.as_deref())?;
            format!("predicted {n} scenes into {}", out.join("predictions").display())
        }
        Command::Eval { checkpoint } => {
            let ev = experiment::cmd_eval(&cfg, checkpoint.as_deref())?;
            let mut s = format!("{} labels\n", ev.report.label_count);
            for m in &ev.report.intervals {
                s.push_str(&format!(
                    "alpha {}: MPIW {:.3} m, PICP {:.4}\n",
                    m.alpha, m.mpiw, m.picp
                ));
            }
            s.trim_end().to_string()
        }
        Command::Analyze { checkpoint } => {
            let a = experiment::cmd_analyze(&cfg, checkpoint.as_deref())?;
            let mut s = String::new();
            for g in a.border.iter().chain(&a.slope) {
                s.push_str(&format!(
                    "{}: n={} median PIW {:.3} m, PICP {:.4}\n",
                    g.group, g.count, g.piw.median, g.picp
                ));
            }
            s.push_str(&format!("{} suspect labels", a.suspect_count));
            s
        }
        Command::Report { .. } => unreachable!("handled above"),
    };
    let digest = experiment::write_digest(out)?;
    if !cli.quiet {
        println!("{message}");
        println!("artifacts digest {digest}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
