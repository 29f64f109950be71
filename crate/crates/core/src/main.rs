use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use uwbpos::dataio::AdapterConfig;
use uwbpos::pipeline::{self, EvalKind, ModelKind, RunConfig};
use uwbpos::sim::Scenario;
use uwbpos::{Error, Result};

#[derive(Parser)]
#[command(name = "uwbpos", version, about = "UWB CIR ranging and positioning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Environment name.
    #[arg(long, global = true)]
    env: Option<String>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Single repetition; all repetitions of the split plan when omitted.
    #[arg(long, global = true)]
    rep: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from a preset or a scenario file.
    Simulate {
        /// Scenario file (TOML); the preset named by --env when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Convert a public dataset into canonical corpora.
    Ingest {
        /// Adapter config naming the source columns (TOML).
        #[arg(long)]
        adapter: PathBuf,
        /// Dataset file or directory.
        #[arg(long)]
        input: PathBuf,
    },
    /// Grid-tune Peak and LDE on the training split.
    Tune,
    /// Train a network on the training split.
    Train {
        #[arg(value_enum)]
        model: ModelArg,
    },
    /// Evaluate on the test split.
    Eval {
        #[arg(value_enum)]
        task: TaskArg,
    },
    /// Merge repetitions into tables and CDF files.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    AnnToa,
    AnnFp,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Ranging,
    Positioning,
}

fn require_env(env: &Option<String>) -> Result<&str> {
    env.as_deref().ok_or_else(|| Error::Config("--env is required".into()))
}

fn run(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out: &Path = &cli.out_dir;
    match cli.command {
        Command::Simulate { scenario } => {
            let sc = match (&scenario, &cli.env) {
                (Some(p), _) => Scenario::from_file(p)?,
                (None, Some(e)) => Scenario::preset(e)?,
                (None, None) => return Err(Error::Config("simulate needs --env or --scenario".into())),
            };
            let path = pipeline::simulate(&cfg, sc, cli.seed, out)?;
            Ok(format!("wrote {}", path.display()))
        }
        Command::Ingest { adapter, input } => {
            let report = pipeline::ingest(&AdapterConfig::from_file(&adapter)?, &input, cli.env.as_deref(), out)?;
            Ok(format!("ingested {} records, skipped {} rows", report.records.len(), report.skipped.len()))
        }
        Command::Tune => {
            let data = pipeline::load_env(&cfg, out, require_env(&cli.env)?)?;
            let reps = cfg.reps(cli.rep)?;
            pipeline::tune_stage(&cfg, &data, out, &reps)?;
            Ok(format!("tuned {} repetition(s) of {}", reps.len(), data.env))
        }
        Command::Train { model } => {
            let data = pipeline::load_env(&cfg, out, require_env(&cli.env)?)?;
            let reps = cfg.reps(cli.rep)?;
            let kind = match model {
                ModelArg::AnnToa => ModelKind::AnnToa,
                ModelArg::AnnFp => ModelKind::AnnFp,
            };
            let hist = pipeline::train_stage(&cfg, &data, out, &reps, kind)?;
            let epochs: Vec<String> = hist.iter().map(|h| h.epochs.len().to_string()).collect();
            Ok(format!("trained {} for {} (epochs per rep: {})", kind.file_stem(), data.env, epochs.join(",")))
        }
        Command::Eval { task } => {
            let data = pipeline::load_env(&cfg, out, require_env(&cli.env)?)?;
            let reps = cfg.reps(cli.rep)?;
            let kind = match task {
                TaskArg::Ranging => EvalKind::Ranging,
                TaskArg::Positioning => EvalKind::Positioning,
            };
            let reports = pipeline::eval_stage(&cfg, &data, out, &reps, kind)?;
            let mut lines = Vec::new();
            for (r, reps) in reps.iter().zip(&reports) {
                for rep in reps {
                    lines.push(format!("{} rep{} {}: p90 {:.1} cm", data.env, r, rep.method, rep.p90));
                }
            }
            Ok(lines.join("\n"))
        }
        Command::Report => {
            let envs = match &cli.env {
                Some(e) => vec![e.clone()],
                None => pipeline::discover_envs(out)?,
            };
            let merged = pipeline::report_stage(out, &envs)?;
            Ok(format!("merged {} method/environment pairs into {}", merged.len(), out.join("report").display()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let summary = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{summary}");
            ExitCode::from(2)
        }
    }
}
