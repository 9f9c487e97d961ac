use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use evgen_core::commands::{self, AuditArgs, CommandError, EvaluateArgs, EvidenceSource, GenerateArgs};
use evgen_core::config::{CassetteConfig, PipelineConfig, PipelineMode};
use evgen_core::gateway::CassetteMode;

/// Generate, evaluate and audit evidence for text-to-SQL benchmarks.
#[derive(Debug, Parser)]
#[command(name = "evgen", version)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cassette file for model responses; overrides the configured path.
    #[arg(long, global = true)]
    cassette: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    cassette_mode: Option<ModeArg>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Directory holding `<db_id>/<db_id>.sqlite`.
    #[arg(long, global = true)]
    db_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Record,
    Replay,
    Passthrough,
}

impl From<ModeArg> for CassetteMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Record => CassetteMode::Record,
            ModeArg::Replay => CassetteMode::Replay,
            ModeArg::Passthrough => CassetteMode::Passthrough,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ArchArg {
    FullSchema,
    Summarized,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Introspect and profile every database under the root.
    Profile {
        /// Directory for catalog caches.
        #[arg(long)]
        out: PathBuf,
        /// Generate description files for databases that have none.
        #[arg(long)]
        describe: bool,
    },
    /// Generate evidence for a question set.
    Generate {
        #[arg(long)]
        questions: PathBuf,
        /// Training split used for few-shot retrieval.
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ArchArg>,
        #[arg(long)]
        token_budget: Option<usize>,
        /// Drop join clauses from the generated evidence.
        #[arg(long)]
        revised: bool,
        /// Catalog caches written by `profile`.
        #[arg(long)]
        catalogs: Option<PathBuf>,
        /// JSON-lines log of every probe.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long)]
        embedding_cache: Option<PathBuf>,
    },
    /// Score predicted SQL with EX and, when timed, VES.
    Evaluate {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        evidence: EvidenceArgs,
        /// Measure execution times and report VES.
        #[arg(long)]
        timing: bool,
        #[arg(long, default_value = "predictions")]
        condition: String,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
        #[arg(long)]
        catalogs: Option<PathBuf>,
    },
    /// Check evidence for missing entries, case errors, unknown schema
    /// references, invalid values and unrelated clauses.
    Audit {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        evidence: EvidenceArgs,
        #[arg(long)]
        catalogs: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct EvidenceArgs {
    /// Evidence file: generator output or a question file with `evidence`.
    #[arg(long, conflicts_with = "gold_evidence")]
    evidence: Option<PathBuf>,
    /// Use the question file's own `evidence` field.
    #[arg(long)]
    gold_evidence: bool,
}

impl EvidenceArgs {
    fn source(&self) -> EvidenceSource {
        match (&self.evidence, self.gold_evidence) {
            (Some(p), _) => EvidenceSource::File(p.clone()),
            (None, true) => EvidenceSource::Gold,
            (None, false) => EvidenceSource::None,
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CommandError> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match (&cli.cassette, cli.cassette_mode) {
        (Some(path), mode) => {
            let mode = mode.map(CassetteMode::from).unwrap_or(CassetteMode::Replay);
            config.cassette = Some(CassetteConfig { path: path.clone(), mode });
        }
        (None, Some(mode)) => match &mut config.cassette {
            Some(c) => c.mode = mode.into(),
            None => return Err(CommandError::Usage("--cassette-mode needs a cassette path".into())),
        },
        (None, None) => {}
    }
    if let Some(n) = cli.parallelism {
        config.parallelism = n;
    }
    Ok(config)
}

fn db_root(cli: &Cli) -> Result<PathBuf, CommandError> {
    cli.db_root.clone().ok_or_else(|| CommandError::Usage("--db-root is required".into()))
}

fn warn_credentials(config: &PipelineConfig) {
    if let Some(w) = commands::credential_warning(config) {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<(), CommandError> {
    let mut config = load_config(&cli)?;
    let root = db_root(&cli)?;
    match &cli.command {
        Command::Profile { out, describe } => {
            config.validate()?;
            let prompts = commands::load_prompts(&config)?;
            let gateway = if *describe {
                warn_credentials(&config);
                Some(commands::build_gateway(&config)?)
            } else {
                None
            };
            let summary = commands::cmd_profile(&root, out, &config, gateway.as_ref().map(|g| (g, &prompts)))?;
            eprintln!("profiled {} databases, {} failed", summary.catalogs.len(), summary.errors.len());
            for e in &summary.errors {
                eprintln!("error: {}: {}", e.db_id, e.message);
            }
            if !summary.errors.is_empty() {
                return Err(CommandError::Failed(format!("{} databases could not be profiled", summary.errors.len())));
            }
        }
        Command::Generate {
            questions,
            train,
            out,
            mode,
            token_budget,
            revised,
            catalogs,
            transcript,
            embedding_cache,
        } => {
            if let Some(m) = mode {
                config.mode = match m {
                    ArchArg::FullSchema => PipelineMode::FullSchema,
                    ArchArg::Summarized => PipelineMode::Summarized,
                };
            }
            if token_budget.is_some() {
                config.token_budget = *token_budget;
            }
            config.validate()?;
            let prompts = commands::load_prompts(&config)?;
            warn_credentials(&config);
            let gateway = commands::build_gateway(&config)?;
            let args = GenerateArgs {
                questions: questions.clone(),
                train: train.clone(),
                db_root: root,
                out: out.clone(),
                revised: *revised,
                catalogs: catalogs.clone(),
                transcript: transcript.clone(),
                embedding_cache: embedding_cache.clone(),
            };
            let s = commands::cmd_generate(&args, &config, &gateway, &prompts)?;
            eprintln!("wrote {} records to {} ({} failed)", s.records, out.display(), s.failures);
            if s.records > 0 && s.failures == s.records {
                return Err(CommandError::Failed("evidence generation failed for every question".into()));
            }
        }
        Command::Evaluate { questions, predictions, out_dir, evidence, timing, condition, timeout_secs, catalogs } => {
            if *timeout_secs == 0 {
                return Err(CommandError::Usage("--timeout-secs must be positive".into()));
            }
            std::fs::create_dir_all(out_dir).map_err(|e| CommandError::Failed(format!("{}: {e}", out_dir.display())))?;
            let args = EvaluateArgs {
                questions: questions.clone(),
                predictions: predictions.clone(),
                db_root: root,
                evidence: evidence.source(),
                timing: *timing,
                out_dir: out_dir.clone(),
                catalogs: catalogs.clone(),
                condition: condition.clone(),
                timeout: Duration::from_secs(*timeout_secs),
            };
            let report = commands::cmd_evaluate(&args, &config)?;
            print!("{}", evgen_core::evaluator::render_table(&[&report]));
            if let Some(a) = &report.audit {
                print!("{}", evgen_core::evaluator::render_audit(a));
            }
        }
        Command::Audit { questions, out, evidence, catalogs } => {
            let args = AuditArgs {
                questions: questions.clone(),
                evidence: evidence.source(),
                db_root: root,
                out: out.clone(),
                catalogs: catalogs.clone(),
            };
            let summary = commands::cmd_audit(&args, &config)?;
            print!("{}", evgen_core::evaluator::render_audit(&summary));
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
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
