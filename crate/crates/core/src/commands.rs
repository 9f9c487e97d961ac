//! The `profile`, `generate`, `evaluate` and `audit` commands.

use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;
use thiserror::Error;

use crate::catalog::{self, SchemaCatalog};
use crate::config::{ConfigError, Layout, PipelineConfig, PipelineMode, ReviserKind};
use crate::dataset::{self, QuestionId, QuestionRecord, Split, TrainingPool};
use crate::evaluator::{self, AuditSummary, BenchmarkConfig, EvalReport};
use crate::finding::Finding;
use crate::gateway::{Cassette, CassetteMode, Gateway, HashedNgramEmbedder, OpenAiChat, OpenAiEmbeddings};
use crate::generator::{self, EvidenceMode, EvidenceRecord, LlmReviser, PatternReviser, PromptExample, Reviser};
use crate::prober;
use crate::prompts::PromptAssets;
use crate::retriever::{self, EmbeddingCache, PoolIndex};
use crate::summarizer::{self, MIN_BUDGET};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("configuration error: {0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CommandError {
    /// 2 for configuration errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) | CommandError::Usage(_) => 2,
            CommandError::Failed(_) => 1,
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CommandError {
    CommandError::Failed(e.to_string())
}

pub fn db_file(db_root: &Path, db_id: &str) -> PathBuf {
    db_root.join(db_id).join(format!("{db_id}.sqlite"))
}

fn description_dir(db_root: &Path, db_id: &str, layout: Layout) -> Option<PathBuf> {
    match layout {
        Layout::Bird => Some(db_root.join(db_id).join("database_description")),
        Layout::Spider => None,
    }
}

/// Chat transport unless replaying, embedder per `models.embed`, and the
/// configured cassette. Replay never constructs a network transport.
pub fn build_gateway(config: &PipelineConfig) -> Result<Gateway, CommandError> {
    let mut b = Gateway::builder().max_in_flight(config.parallelism);
    let replay = config.cassette.as_ref().is_some_and(|c| c.mode == CassetteMode::Replay);
    if let Some(c) = &config.cassette {
        b = b.cassette(Cassette::open(&c.path, c.mode).map_err(failed)?);
    }
    if !replay {
        b = b.chat(Arc::new(OpenAiChat::from_env(&config.provider.base_url, &config.provider.api_key_env)));
    }
    b = match &config.models.embed {
        Some(model) => {
            b.embedder(Arc::new(OpenAiEmbeddings::from_env(&config.provider.base_url, model, &config.provider.api_key_env)))
        }
        None => b.embedder(Arc::new(HashedNgramEmbedder::default())),
    };
    Ok(b.build())
}

/// Warning naming the credential variable when a live provider may be
/// called and the variable is unset. The value is never included.
pub fn credential_warning(config: &PipelineConfig) -> Option<String> {
    let replay = config.cassette.as_ref().is_some_and(|c| c.mode == CassetteMode::Replay);
    let var = &config.provider.api_key_env;
    let unset = std::env::var(var).map_or(true, |v| v.is_empty());
    (!replay && unset).then(|| format!("{var} is not set; provider calls will be unauthenticated"))
}

pub fn load_prompts(config: &PipelineConfig) -> Result<PromptAssets, CommandError> {
    match &config.prompts_dir {
        Some(dir) => PromptAssets::from_dir(dir)
            .map_err(|e| CommandError::Usage(format!("prompt directory {}: {e}", dir.display()))),
        None => Ok(PromptAssets::default()),
    }
}

/// Database ids under `db_root`, sorted: every directory holding
/// `<name>/<name>.sqlite`.
pub fn discover_databases(db_root: &Path) -> Result<Vec<String>, CommandError> {
    let entries = std::fs::read_dir(db_root)
        .map_err(|e| CommandError::Usage(format!("database root {}: {e}", db_root.display())))?;
    let mut ids: Vec<String> = entries
        .filter_map(Result::ok)
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|name| !name.starts_with('.') && db_file(db_root, name).is_file())
        .collect();
    ids.sort();
    Ok(ids)
}

fn build_catalog(db_root: &Path, db_id: &str, config: &PipelineConfig) -> Result<(SchemaCatalog, Vec<Finding>), CommandError> {
    let path = db_file(db_root, db_id);
    let desc = description_dir(db_root, db_id, config.layout).filter(|d| d.is_dir());
    let (cat, mut findings) = catalog::load_catalog(&path, desc.as_deref()).map_err(failed)?;
    let (cat, more) = catalog::profile_values(cat, config.caps.distinct).map_err(failed)?;
    findings.extend(more);
    Ok((cat, findings))
}

/// Catalog cache file name for a database.
pub fn cache_file(dir: &Path, db_id: &str) -> PathBuf {
    dir.join(format!("{db_id}.catalog.json"))
}

/// Uses a cached catalog when one exists with the configured distinct cap,
/// otherwise introspects and profiles the database.
fn obtain_catalog(db_root: &Path, db_id: &str, cache: Option<&Path>, config: &PipelineConfig) -> Result<SchemaCatalog, CommandError> {
    if let Some(dir) = cache {
        let file = cache_file(dir, db_id);
        if file.is_file() {
            let mut cat = SchemaCatalog::read_cache(&file).map_err(failed)?;
            if cat.profile_cap == Some(config.caps.distinct) {
                cat.db_path = db_file(db_root, db_id);
                return Ok(cat);
            }
        }
    }
    Ok(build_catalog(db_root, db_id, config)?.0)
}

fn obtain_catalogs<'a>(
    db_ids: impl IntoIterator<Item = &'a str>,
    db_root: &Path,
    cache: Option<&Path>,
    config: &PipelineConfig,
) -> Result<BTreeMap<String, SchemaCatalog>, CommandError> {
    let mut out = BTreeMap::new();
    for id in db_ids {
        if !out.contains_key(id) {
            out.insert(id.to_string(), obtain_catalog(db_root, id, cache, config)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct ProfileError {
    pub db_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct ProfileSummary {
    pub catalogs: Vec<String>,
    pub errors: Vec<ProfileError>,
    pub findings: Vec<Finding>,
}

pub const PROFILE_REPORT: &str = "profile_report.json";

/// Writes `<out>/<db_id>.catalog.json` for every database and
/// `<out>/profile_report.json`. A database that fails is recorded and the
/// rest continue. With `describe`, databases lacking description files get
/// generated ones under `<out>/<db_id>/database_description/`.
pub fn cmd_profile(
    db_root: &Path,
    out_dir: &Path,
    config: &PipelineConfig,
    describe: Option<(&Gateway, &PromptAssets)>,
) -> Result<ProfileSummary, CommandError> {
    config.validate()?;
    let ids = discover_databases(db_root)?;
    std::fs::create_dir_all(out_dir).map_err(|e| failed(format!("{}: {e}", out_dir.display())))?;
    let mut summary = ProfileSummary { catalogs: Vec::new(), errors: Vec::new(), findings: Vec::new() };
    for id in ids {
        match profile_one(db_root, &id, out_dir, config, describe) {
            Ok(findings) => {
                summary.catalogs.push(id);
                summary.findings.extend(findings);
            }
            Err(e) => summary.errors.push(ProfileError { db_id: id, message: e.to_string() }),
        }
    }
    let mut report = serde_json::to_string_pretty(&summary).expect("serializable");
    report.push('\n');
    let report_path = out_dir.join(PROFILE_REPORT);
    std::fs::write(&report_path, report).map_err(|e| failed(format!("{}: {e}", report_path.display())))?;
    Ok(summary)
}

fn profile_one(
    db_root: &Path,
    db_id: &str,
    out_dir: &Path,
    config: &PipelineConfig,
    describe: Option<(&Gateway, &PromptAssets)>,
) -> Result<Vec<Finding>, CommandError> {
    let (mut cat, mut findings) = build_catalog(db_root, db_id, config)?;
    let has_descriptions = description_dir(db_root, db_id, config.layout).is_some_and(|d| d.is_dir());
    if let (Some((gateway, prompts)), false) = (describe, has_descriptions) {
        let (files, more) = catalog::synthesize_descriptions(&cat, gateway, &config.models.describe, prompts);
        findings.extend(more);
        let dir = out_dir.join(db_id).join("database_description");
        std::fs::create_dir_all(&dir).map_err(|e| failed(format!("{}: {e}", dir.display())))?;
        for f in &files {
            std::fs::write(dir.join(f.file_name()), &f.csv).map_err(|e| failed(format!("{}: {e}", dir.display())))?;
        }
        let (reloaded, more) = catalog::load_catalog(&db_file(db_root, db_id), Some(&dir)).map_err(failed)?;
        findings.extend(more);
        cat = catalog::profile_values(reloaded, config.caps.distinct).map_err(failed)?.0;
    }
    cat.write_cache(&cache_file(out_dir, db_id)).map_err(failed)?;
    Ok(findings)
}

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub questions: PathBuf,
    pub train: PathBuf,
    pub db_root: PathBuf,
    pub out: PathBuf,
    pub revised: bool,
    /// Directory of catalog caches written by `profile`.
    pub catalogs: Option<PathBuf>,
    /// JSON-lines probe transcript.
    pub transcript: Option<PathBuf>,
    pub embedding_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerateSummary {
    pub records: usize,
    pub failures: usize,
}

struct Context<'a> {
    config: &'a PipelineConfig,
    gateway: &'a Gateway,
    prompts: &'a PromptAssets,
    catalogs: BTreeMap<String, SchemaCatalog>,
    pool: TrainingPool,
    index: PoolIndex,
    mode: EvidenceMode,
    revised: bool,
    transcript: Option<Mutex<PathBuf>>,
}

/// Generates evidence for every question and writes one record per question
/// to `args.out` as a JSON array in input order. Per-question failures are
/// recorded inline.
pub fn cmd_generate(
    args: &GenerateArgs,
    config: &PipelineConfig,
    gateway: &Gateway,
    prompts: &PromptAssets,
) -> Result<GenerateSummary, CommandError> {
    config.validate()?;
    let questions = dataset::load_split(&args.questions, Split::Dev).map_err(failed)?;
    let train = dataset::load_split(&args.train, Split::Train).map_err(failed)?;
    dataset::check_db_ids(&questions, &args.db_root).map_err(failed)?;
    let (pool, _) = TrainingPool::new(train).map_err(failed)?;
    dataset::check_db_ids(pool.records(), &args.db_root).map_err(failed)?;

    let mode = match config.mode {
        PipelineMode::FullSchema => EvidenceMode::FullSchema,
        PipelineMode::Summarized => EvidenceMode::Summarized,
    };
    let mut needed: BTreeSet<&str> = questions.iter().map(|q| q.db_id.as_str()).collect();
    if mode == EvidenceMode::Summarized {
        needed.extend(pool.iter().map(|r| r.db_id.as_str()));
    }
    let catalogs = obtain_catalogs(needed, &args.db_root, args.catalogs.as_deref(), config)?;

    let mut cache = match &args.embedding_cache {
        Some(p) => EmbeddingCache::open(p).map_err(failed)?,
        None => EmbeddingCache::in_memory(),
    };
    let index = retriever::precompute_pool_embeddings(&pool, gateway, &mut cache, retriever::DEFAULT_BATCH).map_err(failed)?;
    if let Some(t) = &args.transcript {
        std::fs::write(t, "").map_err(|e| failed(format!("{}: {e}", t.display())))?;
    }

    let ctx = Context {
        config,
        gateway,
        prompts,
        catalogs,
        pool,
        index,
        mode,
        revised: args.revised,
        transcript: args.transcript.clone().map(Mutex::new),
    };
    let slots: Mutex<Vec<Option<EvidenceRecord>>> = Mutex::new(vec![None; questions.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..config.parallelism.min(questions.len()).max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= questions.len() {
                    break;
                }
                let rec = generate_one(&ctx, &questions[i]);
                slots.lock().expect("worker panicked")[i] = Some(rec);
            });
        }
    });
    let records: Vec<EvidenceRecord> =
        slots.into_inner().expect("worker panicked").into_iter().map(|r| r.expect("all slots filled")).collect();
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    write_json(&args.out, &records)?;
    Ok(GenerateSummary { records: records.len(), failures })
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CommandError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| failed(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn generate_one(ctx: &Context<'_>, q: &QuestionRecord) -> EvidenceRecord {
    let mut findings = Vec::new();
    let out_mode = if ctx.revised { EvidenceMode::Revised } else { ctx.mode };
    match generate_inner(ctx, q, &mut findings) {
        Ok((bundle, tokens)) => EvidenceRecord::from_bundle(&bundle, tokens, findings),
        Err(e) => EvidenceRecord::failed(q.question_id.clone(), q.db_id.clone(), out_mode, e, findings),
    }
}

fn generate_inner(
    ctx: &Context<'_>,
    q: &QuestionRecord,
    findings: &mut Vec<Finding>,
) -> Result<(generator::EvidenceBundle, usize), String> {
    let config = ctx.config;
    let cat = &ctx.catalogs[&q.db_id];
    let probe_cfg = config.probe_config();

    let (keywords, f) = prober::extract_keywords(&q.question, cat, ctx.gateway, &config.models.keywords, ctx.prompts);
    findings.extend(f);
    let (specs, f) = prober::build_probes(&keywords, cat, &probe_cfg);
    findings.extend(f);
    let probes = prober::execute_probes(cat, &specs, &probe_cfg);
    if let Some(path) = &ctx.transcript {
        let path = path.lock().map_err(|_| "transcript writer poisoned".to_string())?;
        prober::append_transcript(&path, q.question_id.as_str(), &probes).map_err(|e| e.to_string())?;
    }

    let query = ctx.gateway.embed(std::slice::from_ref(&q.question)).map_err(|e| e.to_string())?.remove(0);
    let exclude = (q.split == Split::Train).then_some(&q.question_id);
    let (few_shot, f) = retriever::select_few_shot(&query, &ctx.pool, &ctx.index, config.caps.few_shot, exclude)
        .map_err(|e| e.to_string())?;
    findings.extend(f);

    let budget = config.effective_budget();
    let (view, examples) = match ctx.mode {
        EvidenceMode::Summarized => {
            let target_budget = MIN_BUDGET.max(budget.unwrap_or(0) / 2);
            let (view, f) = summarizer::summarize(
                cat,
                &q.question,
                target_budget,
                ctx.gateway,
                &config.models.summarize,
                ctx.prompts,
                config.granularity,
            )
            .map_err(|e| e.to_string())?;
            findings.extend(f);
            let mut examples = Vec::new();
            for ex in few_shot.examples() {
                let ex_cat = &ctx.catalogs[&ex.record.db_id];
                let (ex_view, f) = summarizer::summarize(
                    ex_cat,
                    &ex.record.question,
                    MIN_BUDGET,
                    ctx.gateway,
                    &config.models.summarize,
                    ctx.prompts,
                    config.granularity,
                )
                .map_err(|e| e.to_string())?;
                findings.extend(f);
                examples.push(PromptExample::from_record(&ex.record, Some(ex_view.rendered)));
            }
            (view, examples)
        }
        _ => {
            let examples = few_shot.examples().map(|e| PromptExample::from_record(&e.record, None)).collect();
            (summarizer::full_view(cat), examples)
        }
    };

    let instruction = generator::instruction_for(ctx.mode, ctx.prompts);
    let (prompt, f) = generator::assemble_prompt(instruction, &q.question, &view, probes, examples, budget)
        .map_err(|e| e.to_string())?;
    findings.extend(f);
    let tokens = prompt.tokens();
    let bundle = generator::generate_evidence(&prompt, &q.question_id, ctx.mode, cat, ctx.gateway, &config.models.generate)
        .map_err(|e| e.to_string())?;
    findings.extend(bundle.findings.iter().cloned());
    let bundle = if ctx.revised {
        let reviser: Box<dyn Reviser + '_> = match config.reviser {
            ReviserKind::Pattern => Box::new(PatternReviser),
            ReviserKind::Llm => Box::new(LlmReviser {
                gateway: ctx.gateway,
                model_id: config.models.revise.clone(),
                prompts: ctx.prompts,
            }),
        };
        reviser.revise(&bundle).map_err(|e| e.to_string())?
    } else {
        bundle
    };
    Ok((bundle, tokens))
}

/// Where evidence for evaluation or audit comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvidenceSource {
    None,
    /// The questions' own `evidence` field.
    Gold,
    File(PathBuf),
}

fn evidence_map(
    source: &EvidenceSource,
    questions: &[QuestionRecord],
) -> Result<Option<BTreeMap<QuestionId, Option<String>>>, CommandError> {
    match source {
        EvidenceSource::None => Ok(None),
        EvidenceSource::Gold => {
            Ok(Some(questions.iter().map(|q| (q.question_id.clone(), q.gold_evidence.clone())).collect()))
        }
        EvidenceSource::File(path) => {
            let map = generator::load_evidence_map(path).map_err(failed)?;
            evaluator::check_orphans(questions, map.iter()).map_err(failed)?;
            Ok(Some(map))
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub questions: PathBuf,
    pub predictions: PathBuf,
    pub db_root: PathBuf,
    pub evidence: EvidenceSource,
    pub timing: bool,
    pub out_dir: PathBuf,
    pub catalogs: Option<PathBuf>,
    pub condition: String,
    pub timeout: Duration,
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const PER_QUESTION_FILE: &str = "per_question.jsonl";
pub const TABLE_FILE: &str = "report.txt";

/// Scores predictions and writes `summary.json`, `per_question.jsonl` and
/// `report.txt` to `out_dir`. Low scores are not errors.
pub fn cmd_evaluate(args: &EvaluateArgs, config: &PipelineConfig) -> Result<EvalReport, CommandError> {
    config.validate()?;
    let questions = dataset::load_split(&args.questions, Split::Dev).map_err(failed)?;
    let predictions = evaluator::load_predictions(&args.predictions).map_err(failed)?;
    evaluator::check_orphans(&questions, predictions.iter()).map_err(failed)?;
    dataset::check_db_ids(&questions, &args.db_root).map_err(failed)?;
    let evidence = evidence_map(&args.evidence, &questions)?;
    let catalogs = match &evidence {
        Some(_) => obtain_catalogs(questions.iter().map(|q| q.db_id.as_str()), &args.db_root, args.catalogs.as_deref(), config)?,
        None => BTreeMap::new(),
    };
    let bench = BenchmarkConfig {
        timeout: args.timeout,
        timed_runs: if args.timing { evaluator::DEFAULT_TIMED_RUNS } else { 0 },
        parallelism: config.parallelism,
        condition: args.condition.clone(),
    };
    let root = args.db_root.clone();
    let path = move |db: &str| db_file(&root, db);
    let report = evaluator::run_benchmark(&questions, &predictions, &path, evidence.as_ref().map(|e| (e, &catalogs)), &bench)
        .map_err(failed)?;

    write_json(&args.out_dir.join(SUMMARY_FILE), &ReportSummary::from(&report))?;
    let mut lines = String::new();
    for q in &report.per_question {
        lines.push_str(&serde_json::to_string(q).expect("serializable"));
        lines.push('\n');
    }
    std::fs::write(args.out_dir.join(PER_QUESTION_FILE), lines).map_err(failed)?;
    std::fs::write(args.out_dir.join(TABLE_FILE), evaluator::render_table(&[&report])).map_err(failed)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
struct ReportSummary<'a> {
    condition: &'a str,
    n_questions: usize,
    matches: usize,
    ex_percent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    ves_percent: Option<f64>,
    gold_failures: &'a [QuestionId],
    #[serde(skip_serializing_if = "Option::is_none")]
    audit: Option<AuditHeadline<'a>>,
}

#[derive(Debug, Serialize)]
struct AuditHeadline<'a> {
    n_questions: usize,
    missing_evidence: usize,
    missing_evidence_rate: f64,
    histogram: &'a BTreeMap<evaluator::AuditCategory, usize>,
}

impl<'a> From<&'a EvalReport> for ReportSummary<'a> {
    fn from(r: &'a EvalReport) -> Self {
        Self {
            condition: &r.condition,
            n_questions: r.n_questions,
            matches: r.matches,
            ex_percent: r.ex_percent,
            ves_percent: r.ves_percent,
            gold_failures: &r.gold_failures,
            audit: r.audit.as_ref().map(|a| AuditHeadline {
                n_questions: a.n_questions,
                missing_evidence: a.missing_evidence,
                missing_evidence_rate: a.missing_evidence_rate,
                histogram: &a.histogram,
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuditArgs {
    pub questions: PathBuf,
    pub evidence: EvidenceSource,
    pub db_root: PathBuf,
    pub out: PathBuf,
    pub catalogs: Option<PathBuf>,
}

/// Audits evidence and writes the findings, histogram and missing-evidence
/// rate to `args.out` as JSON.
pub fn cmd_audit(args: &AuditArgs, config: &PipelineConfig) -> Result<AuditSummary, CommandError> {
    config.validate()?;
    if args.evidence == EvidenceSource::None {
        return Err(CommandError::Usage("audit needs an evidence source".into()));
    }
    let questions = dataset::load_split(&args.questions, Split::Dev).map_err(failed)?;
    dataset::check_db_ids(&questions, &args.db_root).map_err(failed)?;
    let evidence = evidence_map(&args.evidence, &questions)?.expect("source is not none");
    let catalogs = obtain_catalogs(questions.iter().map(|q| q.db_id.as_str()), &args.db_root, args.catalogs.as_deref(), config)?;
    let summary = evaluator::audit_set(&questions, &evidence, &catalogs);
    write_json(&args.out, &summary)?;
    Ok(summary)
}
