//! Execution accuracy, valid efficiency score and the evidence auditor.

use regex::Regex;
use rusqlite::types::ValueRef;
use rusqlite::Connection;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;
use std::time::{Duration, Instant};
use thiserror::Error;

use crate::catalog::{ColumnDescriptor, SchemaCatalog};
use crate::dataset::{QuestionId, QuestionRecord};
use crate::finding::{Finding, Severity};
use crate::sqlguard::{self, QueryFailure};
use crate::text;

const STAGE: &str = "evaluator";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_TIMED_RUNS: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no questions to evaluate")]
    NoQuestions,
    #[error("every gold query failed; nothing to score")]
    NoScorableQuestions,
    #[error("non-positive time {value} at entry {index}")]
    NonPositiveTime { index: usize, value: f64 },
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("ids without a matching question: {}", .0.join(", "))]
    Orphans(Vec<String>),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// A result cell. Integral reals compare equal to integers, NULL equals NULL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CellValue {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl CellValue {
    pub fn from_ref(v: ValueRef<'_>) -> Self {
        match v {
            ValueRef::Null => CellValue::Null,
            ValueRef::Integer(i) => CellValue::Int(i),
            ValueRef::Real(f) => CellValue::real(f),
            ValueRef::Text(t) => CellValue::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => CellValue::Blob(b.to_vec()),
        }
    }

    pub fn real(f: f64) -> Self {
        if f.fract() == 0.0 && f >= i64::MIN as f64 && f < i64::MAX as f64 {
            CellValue::Int(f as i64)
        } else {
            CellValue::Real(f)
        }
    }

    fn rank(&self) -> u8 {
        match self {
            CellValue::Null => 0,
            CellValue::Int(_) | CellValue::Real(_) => 1,
            CellValue::Text(_) => 2,
            CellValue::Blob(_) => 3,
        }
    }
}

impl Ord for CellValue {
    fn cmp(&self, other: &Self) -> Ordering {
        use CellValue::*;
        match (self, other) {
            (Int(a), Int(b)) => a.cmp(b),
            (Real(a), Real(b)) => a.total_cmp(b),
            (Int(a), Real(b)) => (*a as f64).total_cmp(b).then(Ordering::Less),
            (Real(a), Int(b)) => a.total_cmp(&(*b as f64)).then(Ordering::Greater),
            (Text(a), Text(b)) => a.cmp(b),
            (Blob(a), Blob(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for CellValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for CellValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for CellValue {}

pub type RowSignature = BTreeSet<Vec<CellValue>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Error(String),
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    /// Set only when `status` is ok.
    pub row_signature: Option<RowSignature>,
    /// Milliseconds per timed run.
    pub elapsed_samples: Vec<f64>,
}

impl ExecOutcome {
    pub fn failed(status: ExecStatus) -> Self {
        Self { status, row_signature: None, elapsed_samples: Vec::new() }
    }

    pub fn mean_time(&self) -> Option<f64> {
        trimmed_mean(&self.elapsed_samples)
    }
}

fn collect_rows(conn: &Connection, sql: &str, timeout: Duration) -> Result<RowSignature, ExecStatus> {
    let mut sig = RowSignature::new();
    sqlguard::run_query(conn, sql, &[], timeout, |row| {
        let n = row.as_ref().column_count();
        let tuple = (0..n).map(|i| row.get_ref(i).map_or(CellValue::Null, CellValue::from_ref)).collect();
        sig.insert(tuple);
        true
    })
    .map_err(|e| match e {
        QueryFailure::Timeout(_) => ExecStatus::Timeout,
        other => ExecStatus::Error(other.to_string()),
    })?;
    Ok(sig)
}

/// Runs `sql` once for its result set. With `timed_runs > 0` that first run
/// is a warmup followed by `timed_runs` timed repetitions.
pub fn execute_sql(conn: &Connection, sql: &str, timeout: Duration, timed_runs: usize) -> ExecOutcome {
    let sig = match collect_rows(conn, sql, timeout) {
        Ok(s) => s,
        Err(status) => return ExecOutcome::failed(status),
    };
    let mut samples = Vec::with_capacity(timed_runs);
    for _ in 0..timed_runs {
        let start = Instant::now();
        if let Err(status) = collect_rows(conn, sql, timeout) {
            return ExecOutcome::failed(status);
        }
        samples.push((start.elapsed().as_secs_f64() * 1000.0).max(1e-6));
    }
    ExecOutcome { status: ExecStatus::Ok, row_signature: Some(sig), elapsed_samples: samples }
}

pub fn execution_match(pred: &ExecOutcome, gold: &ExecOutcome) -> bool {
    match (&pred.status, &gold.status, &pred.row_signature, &gold.row_signature) {
        (ExecStatus::Ok, ExecStatus::Ok, Some(p), Some(g)) => p == g,
        _ => false,
    }
}

/// Mean after dropping one minimum and one maximum when there are at least
/// four samples.
pub fn trimmed_mean(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let kept = if s.len() >= 4 { &s[1..s.len() - 1] } else { &s[..] };
    Some(kept.iter().sum::<f64>() / kept.len() as f64)
}

pub fn ex_percent(matches: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * matches as f64 / n as f64
    }
}

/// `(matched, t_gold, t_pred)` per question. Times of unmatched entries are
/// not used and not checked.
pub fn ves(outcomes: &[(bool, f64, f64)]) -> Result<f64, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::NoQuestions);
    }
    let mut sum = 0.0;
    for (index, &(matched, t_gold, t_pred)) in outcomes.iter().enumerate() {
        if !matched {
            continue;
        }
        for value in [t_gold, t_pred] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(EvalError::NonPositiveTime { index, value });
            }
        }
        sum += (t_gold / t_pred).sqrt();
    }
    Ok(100.0 * sum / outcomes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditCategory {
    MissingEvidence,
    CaseSensitivity,
    UnknownSchemaRef,
    InvalidValueMapping,
    UnnecessaryInformation,
}

impl AuditCategory {
    pub const ALL: [AuditCategory; 5] = [
        AuditCategory::MissingEvidence,
        AuditCategory::CaseSensitivity,
        AuditCategory::UnknownSchemaRef,
        AuditCategory::InvalidValueMapping,
        AuditCategory::UnnecessaryInformation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AuditCategory::MissingEvidence => "missing_evidence",
            AuditCategory::CaseSensitivity => "case_sensitivity",
            AuditCategory::UnknownSchemaRef => "unknown_schema_ref",
            AuditCategory::InvalidValueMapping => "invalid_value_mapping",
            AuditCategory::UnnecessaryInformation => "unnecessary_information",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub question_id: QuestionId,
    pub category: AuditCategory,
    pub severity: Severity,
    pub detail: String,
    /// Character range in the evidence.
    pub span: Range<usize>,
}

static VALUE_MAPPING: LazyLock<Regex> = LazyLock::new(|| {
    let part = r"(?:`[^`]+`|[A-Za-z_][A-Za-z0-9_]*)";
    Regex::new(&format!(r"({part}(?:\s*\.\s*{part})?)\s*=\s*'((?:[^']|'')*)'")).expect("valid regex")
});

fn unquote_ident(s: &str) -> String {
    s.trim().trim_matches('`').to_string()
}

fn resolve_target<'a>(target: &str, catalog: &'a SchemaCatalog) -> Vec<&'a ColumnDescriptor> {
    let parts: Vec<&str> = target.splitn(2, '.').collect();
    match parts.as_slice() {
        [t, c] => catalog.column(&unquote_ident(t), &unquote_ident(c)).into_iter().collect(),
        [c] => catalog.columns_named(&unquote_ident(c)),
        _ => Vec::new(),
    }
}

fn missing_evidence(question_id: &QuestionId) -> AuditFinding {
    AuditFinding {
        question_id: question_id.clone(),
        category: AuditCategory::MissingEvidence,
        severity: Severity::Warning,
        detail: "question has no evidence".into(),
        span: 0..0,
    }
}

/// Mechanically checkable evidence defects. Pure: uses the catalog's value
/// profiles and never touches the database.
pub fn audit_evidence(
    question_id: &QuestionId,
    evidence: Option<&str>,
    question: &str,
    catalog: &SchemaCatalog,
) -> Vec<AuditFinding> {
    let finding = |category, severity, detail: String, evidence: &str, span: Range<usize>| AuditFinding {
        question_id: question_id.clone(),
        category,
        severity,
        detail,
        span: text::char_range(evidence, &span),
    };
    let Some(ev) = evidence.filter(|e| !e.trim().is_empty()) else {
        return vec![missing_evidence(question_id)];
    };
    let mut out = Vec::new();

    for m in text::schema_mentions(ev) {
        let known = match &m.table {
            Some(t) => catalog.column(t, &m.name).is_some(),
            None => catalog.table(&m.name).is_some() || !catalog.columns_named(&m.name).is_empty(),
        };
        if !known {
            let shown = ev[m.span.clone()].to_string();
            out.push(finding(
                AuditCategory::UnknownSchemaRef,
                Severity::Warning,
                format!("{shown} is not in database {}", catalog.db_id),
                ev,
                m.span,
            ));
        }
    }

    for cap in VALUE_MAPPING.captures_iter(ev) {
        let whole = cap.get(0).expect("match");
        let target = &cap[1];
        let literal = cap[2].replace("''", "'");
        let cols = resolve_target(target, catalog);
        let profiles: Vec<_> = cols.iter().filter_map(|c| catalog.profile(&c.column_ref())).filter(|p| p.is_textual()).collect();
        if profiles.is_empty() {
            continue;
        }
        let exact = profiles.iter().any(|p| p.sampled_values.contains(&literal));
        if exact {
            continue;
        }
        let folded = literal.to_lowercase();
        let near: Vec<&String> = profiles
            .iter()
            .flat_map(|p| p.sampled_values.iter())
            .filter(|v| v.to_lowercase() == folded)
            .collect();
        if let Some(stored) = near.first() {
            out.push(finding(
                AuditCategory::CaseSensitivity,
                Severity::Warning,
                format!("'{literal}' differs in case from stored value '{stored}' of {target}"),
                ev,
                whole.range(),
            ));
        } else if profiles.iter().all(|p| !p.is_capped) {
            out.push(finding(
                AuditCategory::InvalidValueMapping,
                Severity::Warning,
                format!("'{literal}' is not a stored value of {target}"),
                ev,
                whole.range(),
            ));
        }
    }

    let question_words: BTreeSet<String> = text::tokenize(question).into_iter().map(|t| t.lower).collect();
    let mut start = 0;
    for (i, ch) in ev.char_indices().chain(std::iter::once((ev.len(), ';'))) {
        if ch != ',' && ch != ';' {
            continue;
        }
        let seg = &ev[start..i];
        let seg_start = start;
        start = i + ch.len_utf8().min(ev.len() - i);
        if !VALUE_MAPPING.is_match(seg) && !seg.contains('=') {
            continue;
        }
        let words: Vec<String> =
            text::tokenize(seg).into_iter().map(|t| t.lower).filter(|w| !text::is_stopword(w)).collect();
        if !words.is_empty() && !words.iter().any(|w| question_words.contains(w)) {
            let trimmed = seg.trim();
            let offset = seg_start + (seg.len() - seg.trim_start().len());
            out.push(finding(
                AuditCategory::UnnecessaryInformation,
                Severity::Info,
                format!("`{trimmed}` shares no word with the question"),
                ev,
                offset..offset + trimmed.len(),
            ));
        }
    }
    out.sort_by(|a, b| a.span.start.cmp(&b.span.start).then(a.category.cmp(&b.category)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub n_questions: usize,
    pub missing_evidence: usize,
    pub missing_evidence_rate: f64,
    pub histogram: BTreeMap<AuditCategory, usize>,
    pub findings: Vec<AuditFinding>,
}

/// Audits each question's evidence; `evidence` is keyed by question id and
/// absent keys count as missing evidence.
pub fn audit_set(
    questions: &[QuestionRecord],
    evidence: &BTreeMap<QuestionId, Option<String>>,
    catalogs: &BTreeMap<String, SchemaCatalog>,
) -> AuditSummary {
    let mut findings = Vec::new();
    let mut histogram: BTreeMap<AuditCategory, usize> = AuditCategory::ALL.iter().map(|&c| (c, 0)).collect();
    for q in questions {
        let ev = evidence.get(&q.question_id).and_then(|e| e.as_deref());
        let found = match catalogs.get(&q.db_id) {
            Some(cat) => audit_evidence(&q.question_id, ev, &q.question, cat),
            None if ev.is_none_or(|e| e.trim().is_empty()) => vec![missing_evidence(&q.question_id)],
            None => Vec::new(),
        };
        for f in &found {
            *histogram.entry(f.category).or_default() += 1;
        }
        findings.extend(found);
    }
    let missing = histogram[&AuditCategory::MissingEvidence];
    AuditSummary {
        n_questions: questions.len(),
        missing_evidence: missing,
        missing_evidence_rate: ex_percent(missing, questions.len()),
        histogram,
        findings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionEval {
    pub question_id: QuestionId,
    pub db_id: String,
    pub matched: bool,
    /// `t_gold / t_pred`, when timed and matched.
    pub time_ratio: Option<f64>,
    pub pred_status: Option<ExecStatus>,
    pub gold_failed: bool,
    pub findings: Vec<Finding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: String,
    /// Questions scored; gold failures are excluded.
    pub n_questions: usize,
    pub matches: usize,
    pub ex_percent: f64,
    pub ves_percent: Option<f64>,
    pub gold_failures: Vec<QuestionId>,
    pub audit: Option<AuditSummary>,
    pub per_question: Vec<QuestionEval>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub timeout: Duration,
    /// Zero disables timing and VES.
    pub timed_runs: usize,
    pub parallelism: usize,
    pub condition: String,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { timeout: DEFAULT_TIMEOUT, timed_runs: 0, parallelism: 1, condition: "predictions".into() }
    }
}

fn evaluate_one(q: &QuestionRecord, pred: Option<&String>, db_path: &Path, config: &BenchmarkConfig) -> (QuestionEval, Option<(bool, f64, f64)>) {
    let mut eval = QuestionEval {
        question_id: q.question_id.clone(),
        db_id: q.db_id.clone(),
        matched: false,
        time_ratio: None,
        pred_status: None,
        gold_failed: false,
        findings: Vec::new(),
    };
    let conn = match sqlguard::open_read_only(db_path) {
        Ok(c) => c,
        Err(e) => {
            eval.gold_failed = true;
            eval.findings.push(Finding::error(STAGE, format!("cannot open {}: {e}", db_path.display())));
            return (eval, None);
        }
    };
    let Some(gold_sql) = q.gold_sql.as_deref() else {
        eval.gold_failed = true;
        eval.findings.push(Finding::error(STAGE, "question has no gold SQL"));
        return (eval, None);
    };
    let gold = execute_sql(&conn, gold_sql, config.timeout, config.timed_runs);
    if gold.status != ExecStatus::Ok {
        eval.gold_failed = true;
        eval.findings.push(Finding::error(STAGE, format!("gold SQL failed: {:?}", gold.status)));
        return (eval, None);
    }
    let Some(pred_sql) = pred else {
        eval.findings.push(Finding::warning(STAGE, "no prediction"));
        return (eval, Some((false, 1.0, 1.0)));
    };
    let pred = execute_sql(&conn, pred_sql, config.timeout, config.timed_runs);
    eval.matched = execution_match(&pred, &gold);
    eval.pred_status = Some(pred.status.clone());
    let times = match (gold.mean_time(), pred.mean_time()) {
        (Some(g), Some(p)) => (g, p),
        _ => (1.0, 1.0),
    };
    if eval.matched && config.timed_runs > 0 {
        eval.time_ratio = Some(times.0 / times.1);
    }
    let matched = eval.matched;
    (eval, Some((matched, times.0, times.1)))
}

/// Scores predictions by execution. Timed runs are executed serially so
/// measurements do not contend.
pub fn run_benchmark(
    questions: &[QuestionRecord],
    predictions: &BTreeMap<QuestionId, String>,
    db_path: &dyn Fn(&str) -> PathBuf,
    audit: Option<(&BTreeMap<QuestionId, Option<String>>, &BTreeMap<String, SchemaCatalog>)>,
    config: &BenchmarkConfig,
) -> Result<EvalReport, EvalError> {
    if questions.is_empty() {
        return Err(EvalError::NoQuestions);
    }
    let workers = if config.timed_runs > 0 { 1 } else { config.parallelism.max(1) };
    let paths: Vec<PathBuf> = questions.iter().map(|q| db_path(&q.db_id)).collect();
    let mut results: Vec<Option<(QuestionEval, Option<(bool, f64, f64)>)>> = vec![None; questions.len()];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= questions.len() {
                    break;
                }
                let r = evaluate_one(&questions[i], predictions.get(&questions[i].question_id), &paths[i], config);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    let mut per_question = Vec::with_capacity(questions.len());
    let mut timing = Vec::new();
    let mut gold_failures = Vec::new();
    for (eval, t) in results.into_iter().map(|r| r.expect("every slot filled")) {
        match t {
            Some(t) => timing.push(t),
            None => gold_failures.push(eval.question_id.clone()),
        }
        per_question.push(eval);
    }
    if timing.is_empty() {
        return Err(EvalError::NoScorableQuestions);
    }
    let matches = timing.iter().filter(|t| t.0).count();
    let ves_percent = if config.timed_runs > 0 { Some(ves(&timing)?) } else { None };
    Ok(EvalReport {
        condition: config.condition.clone(),
        n_questions: timing.len(),
        matches,
        ex_percent: ex_percent(matches, timing.len()),
        ves_percent,
        gold_failures,
        audit: audit.map(|(ev, cats)| audit_set(questions, ev, cats)),
        per_question,
    })
}

/// Accepts a JSON object `{id: sql}` (BIRD's `\t----- bird -----\t<db>`
/// suffix is stripped) or an array of `{question_id, sql}` records.
pub fn load_predictions(path: &Path) -> Result<BTreeMap<QuestionId, String>, EvalError> {
    let err = |message: String| EvalError::Input { path: path.into(), message };
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.into(), source })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    let strip = |s: &str| s.split("\t----- bird -----").next().unwrap_or("").trim().to_string();
    let mut out = BTreeMap::new();
    match value {
        serde_json::Value::Object(map) => {
            for (id, v) in map {
                let sql = v.as_str().ok_or_else(|| err(format!("prediction {id} is not a string")))?;
                out.insert(QuestionId(id), strip(sql));
            }
        }
        serde_json::Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                let id = match &item["question_id"] {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Number(n) => n.to_string(),
                    _ => return Err(err(format!("entry {i}: missing question_id"))),
                };
                let sql = item["sql"].as_str().ok_or_else(|| err(format!("entry {i}: missing sql")))?;
                if out.insert(QuestionId(id.clone()), strip(sql)).is_some() {
                    return Err(err(format!("entry {i}: duplicate question_id {id}")));
                }
            }
        }
        _ => return Err(err("expected an object or an array".into())),
    }
    Ok(out)
}

/// Fails when any key does not name a question.
pub fn check_orphans<'a, V>(questions: &[QuestionRecord], keys: impl Iterator<Item = (&'a QuestionId, V)>) -> Result<(), EvalError> {
    let known: BTreeSet<&QuestionId> = questions.iter().map(|q| &q.question_id).collect();
    let orphans: Vec<String> = keys.filter(|(k, _)| !known.contains(k)).map(|(k, _)| k.to_string()).collect();
    if orphans.is_empty() {
        Ok(())
    } else {
        Err(EvalError::Orphans(orphans))
    }
}

/// Plain-text table with one row per condition. The VES column appears only
/// when timing was enabled for every report.
pub fn render_table(reports: &[&EvalReport]) -> String {
    let timed = !reports.is_empty() && reports.iter().all(|r| r.ves_percent.is_some());
    let width = reports.iter().map(|r| r.condition.len()).max().unwrap_or(0).max("condition".len());
    let mut out = format!("{:<width$}  {:>5}  {:>7}", "condition", "N", "EX%");
    if timed {
        out.push_str(&format!("  {:>7}", "VES%"));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!("{:<width$}  {:>5}  {:>7.2}", r.condition, r.n_questions, r.ex_percent));
        if let (true, Some(v)) = (timed, r.ves_percent) {
            out.push_str(&format!("  {v:>7.2}"));
        }
        out.push('\n');
    }
    for r in reports {
        if let Some(a) = &r.audit {
            out.push_str(&render_audit(a));
        }
    }
    out
}

pub fn render_audit(a: &AuditSummary) -> String {
    let mut out = format!(
        "\naudit: {} questions, missing evidence {} ({:.2}%)\n",
        a.n_questions, a.missing_evidence, a.missing_evidence_rate
    );
    for (cat, n) in &a.histogram {
        out.push_str(&format!("  {:<24} {n}\n", cat.as_str()));
    }
    out
}
