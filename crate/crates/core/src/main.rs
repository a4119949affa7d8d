use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use speechinstruct::cli::{self, CliError, PipelineConfig, SourceKind, SourceSpec, Stage};
use speechinstruct::metrics::Task;
use speechinstruct::tts::BackendKind;

#[derive(Parser)]
#[command(
    name = "speechinstruct",
    version,
    about = "Instruction-speech corpus builder and SLU scorer"
)]
struct Args {
    /// Pipeline configuration JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse source datasets into unified examples.
    Ingest {
        /// Super-NaturalInstructions task files.
        #[arg(long)]
        superni: Vec<PathBuf>,
        /// Alpaca-style JSON files.
        #[arg(long)]
        alpaca: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drop irrelevant tasks and unspeakable inputs.
    Filter {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize speech for kept examples and write the manifest.
    Synth {
        input: PathBuf,
        /// Output directory; `out_dir` from the config when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add speed-perturbed copies of every entry.
    Augment {
        manifest: PathBuf,
        /// Speed factors; the configured factors when omitted.
        #[arg(long = "factor")]
        factors: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded random subset of a manifest.
    Subsample {
        manifest: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add paraphrased-instruction copies of entries.
    Expand {
        manifest: PathBuf,
        /// Paraphrase map JSON; `paraphrases` from the config when omitted.
        #[arg(long)]
        paraphrases: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenize and collate a manifest into training batches.
    Batches {
        manifest: PathBuf,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus statistics as JSON.
    Stats {
        manifest: PathBuf,
        #[arg(long)]
        drops: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against references.
    Score {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Print a table instead of JSON.
        #[arg(long)]
        table: bool,
    },
}

fn load_config(args: &Args) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(b) = args.backend {
        cfg.backend = b;
    }
    if let Some(p) = args.parallelism {
        cfg.parallelism = p;
    }
    Ok(cfg)
}

fn emit<T: Serialize>(value: &T, out: Option<&PathBuf>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::new(Stage::Config, "io", e.to_string()))?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")
            .map_err(|e| CliError::new(Stage::Stats, "io", format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(args: Args) -> Result<(), CliError> {
    let mut cfg = load_config(&args)?;
    match args.command {
        Command::Ingest {
            superni,
            alpaca,
            out,
        } => {
            cfg.sources
                .extend(superni.into_iter().map(|path| SourceSpec {
                    kind: SourceKind::Superni,
                    path,
                }));
            cfg.sources
                .extend(alpaca.into_iter().map(|path| SourceSpec {
                    kind: SourceKind::Alpaca,
                    path,
                }));
            cfg.validate()?;
            emit(&cli::cmd_ingest(&cfg, &out)?, None)
        }
        Command::Filter { input, out } => {
            cfg.validate()?;
            emit(&cli::cmd_filter(&cfg, &input, &out)?, None)
        }
        Command::Synth { input, out } => {
            cfg.validate()?;
            let backend = cfg.make_backend()?;
            let out_dir = out.unwrap_or_else(|| cfg.out_dir.clone());
            emit(
                &cli::cmd_synth(&cfg, backend.as_ref(), &input, &out_dir)?,
                None,
            )
        }
        Command::Augment {
            manifest,
            factors,
            out,
        } => {
            if !factors.is_empty() {
                cfg.augment_factors = factors;
            }
            cfg.validate()?;
            emit(
                &cli::cmd_augment(&manifest, &cfg.augment_factors, &out)?,
                None,
            )
        }
        Command::Subsample {
            manifest,
            fraction,
            out,
        } => {
            cfg.validate()?;
            emit(
                &cli::cmd_subsample(&manifest, fraction, cfg.seed, &out)?,
                None,
            )
        }
        Command::Expand {
            manifest,
            paraphrases,
            out,
        } => {
            cfg.validate()?;
            let map = paraphrases
                .or_else(|| cfg.paraphrases.clone())
                .ok_or_else(|| {
                    CliError::new(Stage::Expand, "config", "no paraphrase file given")
                })?;
            emit(&cli::cmd_expand(&manifest, &map, &out)?, None)
        }
        Command::Batches {
            manifest,
            batch_size,
            out,
        } => {
            if let Some(b) = batch_size {
                cfg.batch_size = b;
            }
            cfg.validate()?;
            emit(&cli::cmd_batches(&cfg, &manifest, &out)?, None)
        }
        Command::Stats {
            manifest,
            drops,
            out,
        } => {
            let stats = cli::cmd_stats(&manifest, drops.as_deref())?;
            emit(&stats, out.as_ref())
        }
        Command::Score {
            task,
            predictions,
            references,
            table,
        } => {
            let report = cli::cmd_score(task, &predictions, &references)?;
            if table {
                print!("{}", report.table());
                Ok(())
            } else {
                emit(&report, None)
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
