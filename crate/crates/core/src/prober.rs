//! Keyword extraction and read-only value probes.

use rusqlite::types::ToSql;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::time::{Duration, Instant};
use thiserror::Error;

use crate::catalog::{self, ColumnRef, SchemaCatalog};
use crate::finding::Finding;
use crate::gateway::{ChatMessage, ChatRequest, Gateway, Stage};
use crate::prompts::PromptAssets;
use crate::sqlguard::{self, quote_ident, QueryFailure};
use crate::text::{self, Token};

const STAGE: &str = "prober";

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("transcript io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordKind {
    ColumnRef,
    ValueLiteral,
    Ambiguous,
}

impl std::str::FromStr for KeywordKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "column" | "column_ref" | "columnref" => Ok(Self::ColumnRef),
            "value" | "value_literal" | "literal" => Ok(Self::ValueLiteral),
            "ambiguous" => Ok(Self::Ambiguous),
            _ => Err(()),
        }
    }
}

/// A question substring that names a column or a stored value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordCandidate {
    pub text: String,
    /// Byte span in the question.
    pub span: Range<usize>,
    pub kind: KeywordKind,
    pub candidate_columns: Vec<ColumnRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Distinct,
    Like,
    EditDistance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub kind: ProbeKind,
    pub column: ColumnRef,
    /// Question literal a like or edit-distance probe is looking for.
    pub literal: Option<String>,
    pub sql: String,
    /// Bound positionally; never spliced into `sql`.
    pub params: Vec<String>,
    pub row_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum ProbeStatus {
    Ok,
    Timeout,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub spec: ProbeSpec,
    pub rows: Vec<String>,
    /// More rows existed than `row_cap`.
    pub truncated: bool,
    pub status: ProbeStatus,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub row_cap: usize,
    pub timeout_ms: u64,
    pub max_probes: usize,
    /// Number of nearest values an edit-distance probe reports.
    pub edit_k: usize,
    /// Distinct values scanned per edit-distance probe.
    pub edit_scan_limit: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { row_cap: 10, timeout_ms: 2000, max_probes: 16, edit_k: 3, edit_scan_limit: 1000 }
    }
}

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Extracts keywords with the model when one is configured, falling back to
/// n-gram matching against column names and profiled values.
pub fn extract_keywords(
    question: &str,
    catalog: &SchemaCatalog,
    gateway: &Gateway,
    model_id: &str,
    prompts: &PromptAssets,
) -> (Vec<KeywordCandidate>, Vec<Finding>) {
    let mut findings = Vec::new();
    if gateway.has_chat() {
        let request = ChatRequest::new(
            model_id,
            vec![ChatMessage::user(
                prompts
                    .keywords
                    .replace("{columns}", &column_listing(catalog))
                    .replace("{question}", question),
            )],
        );
        match gateway.chat(Stage::Keywords, &request) {
            Ok(reply) => {
                let found = parse_keyword_reply(&reply, question, catalog, &mut findings);
                if !found.is_empty() {
                    return (found, findings);
                }
                findings.push(Finding::info(STAGE, "model returned no usable keywords; using n-gram matching"));
            }
            Err(e) => findings.push(Finding::warning(STAGE, format!("keyword extraction failed: {e}; using n-gram matching"))),
        }
    }
    (fallback_keywords(question, catalog), findings)
}

fn column_listing(catalog: &SchemaCatalog) -> String {
    let mut out = String::new();
    for col in catalog.columns() {
        out.push_str(&format!("{}.{}", col.table_name, col.original_column_name));
        if !col.display_name.is_empty() && col.display_name != col.original_column_name {
            out.push_str(&format!(" ({})", col.display_name));
        }
        out.push('\n');
    }
    out
}

/// Parses `keyword | kind | t.c, t.c` lines. Keywords that are not
/// question substrings and columns absent from the catalog are dropped.
pub fn parse_keyword_reply(
    reply: &str,
    question: &str,
    catalog: &SchemaCatalog,
    findings: &mut Vec<Finding>,
) -> Vec<KeywordCandidate> {
    let lower_q = question.to_lowercase();
    let mut out: Vec<KeywordCandidate> = Vec::new();
    for line in catalog::strip_code_fence(reply).lines() {
        let line = line.trim().trim_start_matches(['-', '*']).trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('|').map(str::trim).collect();
        if parts.len() < 3 {
            findings.push(Finding::warning(STAGE, format!("unparseable keyword line `{line}`")));
            continue;
        }
        let keyword = parts[0].trim_matches(['"', '\'']);
        if keyword.trim().is_empty() {
            continue;
        }
        let Ok(kind) = parts[1].parse::<KeywordKind>() else {
            findings.push(Finding::warning(STAGE, format!("unknown keyword kind `{}`", parts[1])));
            continue;
        };
        // lowercasing can shift byte offsets, so only trust exact-length hits
        let span = match question.find(keyword) {
            Some(s) => s..s + keyword.len(),
            None => match lower_q.find(&keyword.to_lowercase()) {
                Some(s) if lower_q.len() == question.len() && question.get(s..s + keyword.len()).is_some() => {
                    s..s + keyword.len()
                }
                _ => {
                    findings.push(Finding::warning(STAGE, format!("keyword `{keyword}` is not in the question")));
                    continue;
                }
            },
        };
        let mut cols = Vec::new();
        for c in parts[2..].join("|").split(',') {
            let c = c.trim().replace('`', "");
            if c.is_empty() {
                continue;
            }
            let resolved = c.split_once('.').and_then(|(t, col)| catalog.resolve(t.trim(), col.trim()));
            match resolved {
                Some(r) if !cols.contains(&r) => cols.push(r),
                Some(_) => {}
                None => findings.push(Finding::warning(STAGE, format!("keyword `{keyword}` names unknown column `{c}`"))),
            }
        }
        if cols.is_empty() {
            continue;
        }
        let cand = KeywordCandidate { text: question[span.clone()].to_string(), span, kind, candidate_columns: cols };
        if !out.iter().any(|o| o.span == cand.span && o.kind == cand.kind) {
            out.push(cand);
        }
    }
    out
}

/// Longest-first n-gram (n <= 4) matching. Capitalized words that match
/// nothing become ambiguous candidates over every capped text column.
pub fn fallback_keywords(question: &str, catalog: &SchemaCatalog) -> Vec<KeywordCandidate> {
    let tokens = text::tokenize(question);
    let mut used = vec![false; tokens.len()];
    let mut out = Vec::new();
    for n in (1..=4usize).rev() {
        for start in 0..tokens.len().saturating_sub(n - 1) {
            let window = &tokens[start..start + n];
            if used[start..start + n].iter().any(|&u| u) {
                continue;
            }
            if text::is_stopword(&window[0].lower) || text::is_stopword(&window[n - 1].lower) {
                continue;
            }
            let phrase = window.iter().map(|t| t.lower.as_str()).collect::<Vec<_>>().join(" ");
            let (columns, values) = match_phrase(&phrase, catalog);
            let kind = match (columns.is_empty(), values.is_empty()) {
                (true, true) => continue,
                (false, true) => KeywordKind::ColumnRef,
                (true, false) => KeywordKind::ValueLiteral,
                (false, false) => KeywordKind::Ambiguous,
            };
            let mut cols = columns;
            for v in values {
                if !cols.contains(&v) {
                    cols.push(v);
                }
            }
            used[start..start + n].iter_mut().for_each(|u| *u = true);
            out.push(candidate(question, window, kind, cols));
        }
    }
    let capped_text: Vec<ColumnRef> = catalog
        .profiles
        .values()
        .filter(|p| p.is_capped && p.is_textual())
        .map(|p| p.column.clone())
        .collect();
    if !capped_text.is_empty() {
        for (i, tok) in tokens.iter().enumerate() {
            let first_char = question[tok.span.clone()].chars().next();
            if i > 0 && !used[i] && first_char.is_some_and(char::is_uppercase) && !text::is_stopword(&tok.lower) {
                used[i] = true;
                out.push(candidate(question, std::slice::from_ref(tok), KeywordKind::Ambiguous, capped_text.clone()));
            }
        }
    }
    out.sort_by_key(|c| c.span.start);
    out
}

fn candidate(question: &str, window: &[Token], kind: KeywordKind, cols: Vec<ColumnRef>) -> KeywordCandidate {
    let span = window[0].span.start..window[window.len() - 1].span.end;
    KeywordCandidate { text: question[span.clone()].to_string(), span, kind, candidate_columns: cols }
}

fn match_phrase(phrase: &str, catalog: &SchemaCatalog) -> (Vec<ColumnRef>, Vec<ColumnRef>) {
    let mut columns = Vec::new();
    for col in catalog.columns() {
        if text::normalize_phrase(&col.original_column_name) == phrase
            || (!col.display_name.is_empty() && text::normalize_phrase(&col.display_name) == phrase)
        {
            columns.push(col.column_ref());
        }
    }
    let mut values = Vec::new();
    for p in catalog.profiles.values().filter(|p| p.is_textual()) {
        if p.sampled_values.iter().any(|v| v.chars().count() >= 3 && text::normalize_phrase(v) == phrase) {
            values.push(p.column.clone());
        }
    }
    (columns, values)
}

/// `%`, `_` and the escape character itself are escaped so a literal only
/// ever matches as a plain substring.
pub fn like_pattern(literal: &str) -> String {
    let mut out = String::with_capacity(literal.len() + 2);
    out.push('%');
    for ch in literal.chars() {
        if matches!(ch, '%' | '_' | '\\') {
            out.push('\\');
        }
        out.push(ch);
    }
    out.push('%');
    out
}

/// Literals containing NUL match nothing: SQLite ends a LIKE pattern at the
/// first NUL.
pub fn like_probe(column: &ColumnRef, literal: &str, row_cap: usize) -> ProbeSpec {
    let c = quote_ident(&column.column);
    let guard = if literal.contains('\0') { " AND 0" } else { "" };
    ProbeSpec {
        kind: ProbeKind::Like,
        column: column.clone(),
        literal: Some(literal.to_string()),
        sql: format!(
            "SELECT DISTINCT {c} FROM {} WHERE {c} LIKE ?1 ESCAPE '\\'{guard} ORDER BY 1 LIMIT {}",
            quote_ident(&column.table),
            row_cap + 1
        ),
        params: vec![like_pattern(literal)],
        row_cap,
    }
}

pub fn distinct_probe(column: &ColumnRef, row_cap: usize) -> ProbeSpec {
    ProbeSpec {
        kind: ProbeKind::Distinct,
        column: column.clone(),
        literal: None,
        sql: catalog::distinct_sample_sql(column, row_cap + 1),
        params: Vec::new(),
        row_cap,
    }
}

pub fn edit_distance_probe(column: &ColumnRef, literal: &str, config: &ProbeConfig) -> ProbeSpec {
    ProbeSpec {
        kind: ProbeKind::EditDistance,
        column: column.clone(),
        literal: Some(literal.to_string()),
        sql: catalog::distinct_sample_sql(column, config.edit_scan_limit),
        params: Vec::new(),
        row_cap: config.edit_k,
    }
}

/// Column keywords get a distinct-value probe; value keywords get like and
/// edit-distance probes on text columns; ambiguous keywords get both.
/// Duplicates are dropped and the total is capped at `max_probes`.
pub fn build_probes(
    keywords: &[KeywordCandidate],
    catalog: &SchemaCatalog,
    config: &ProbeConfig,
) -> (Vec<ProbeSpec>, Vec<Finding>) {
    let mut findings = Vec::new();
    let mut specs: Vec<ProbeSpec> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |spec: ProbeSpec, specs: &mut Vec<ProbeSpec>| {
        let key = (spec.kind, spec.column.clone(), spec.literal.as_ref().map(|l| l.to_lowercase()));
        if seen.insert(key) {
            specs.push(spec);
        }
    };
    for kw in keywords {
        for col in &kw.candidate_columns {
            if catalog.column(&col.table, &col.column).is_none() {
                findings.push(Finding::warning(STAGE, format!("probe target {col} is not in the catalog")));
                continue;
            }
            let textual = catalog.profile(col).is_none_or(|p| p.is_textual());
            if matches!(kw.kind, KeywordKind::ColumnRef | KeywordKind::Ambiguous) {
                push(distinct_probe(col, config.row_cap), &mut specs);
            }
            if matches!(kw.kind, KeywordKind::ValueLiteral | KeywordKind::Ambiguous) {
                if textual {
                    push(like_probe(col, &kw.text, config.row_cap), &mut specs);
                    push(edit_distance_probe(col, &kw.text, config), &mut specs);
                } else {
                    findings.push(Finding::info(STAGE, format!("value `{}` not probed on non-text column {col}", kw.text)));
                }
            }
        }
    }
    if specs.len() > config.max_probes {
        findings.push(Finding::info(STAGE, format!("{} probes dropped over the cap of {}", specs.len() - config.max_probes, config.max_probes)));
        specs.truncate(config.max_probes);
    }
    (specs, findings)
}

/// Runs every probe on one read-only connection. Failures are reported per
/// probe and never abort the batch.
pub fn execute_probes(catalog: &SchemaCatalog, specs: &[ProbeSpec], config: &ProbeConfig) -> Vec<ProbeResult> {
    let conn = match catalog.open() {
        Ok(c) => c,
        Err(e) => {
            return specs
                .iter()
                .map(|s| ProbeResult {
                    spec: s.clone(),
                    rows: Vec::new(),
                    truncated: false,
                    status: ProbeStatus::Failed(e.to_string()),
                    elapsed_ms: 0,
                })
                .collect()
        }
    };
    let timeout = Duration::from_millis(config.timeout_ms);
    specs.iter().map(|s| run_probe(&conn, s, timeout)).collect()
}

fn run_probe(conn: &rusqlite::Connection, spec: &ProbeSpec, timeout: Duration) -> ProbeResult {
    let started = Instant::now();
    let params: Vec<&dyn ToSql> = spec.params.iter().map(|p| p as &dyn ToSql).collect();
    let mut values = Vec::new();
    let outcome = sqlguard::run_query(conn, &spec.sql, &params, timeout, |row| {
        if let Ok(v) = row.get_ref(0) {
            values.push(catalog::render_value(v));
        }
        true
    });
    let status = match outcome {
        Ok(()) => ProbeStatus::Ok,
        Err(QueryFailure::Timeout(_)) => ProbeStatus::Timeout,
        Err(e) => ProbeStatus::Failed(e.to_string()),
    };
    let (rows, truncated) = match spec.kind {
        ProbeKind::EditDistance => {
            let target = spec.literal.as_deref().unwrap_or("").to_lowercase();
            (nearest(&target, values, spec.row_cap), false)
        }
        _ => {
            let truncated = values.len() > spec.row_cap;
            values.truncate(spec.row_cap);
            (values, truncated)
        }
    };
    ProbeResult { spec: spec.clone(), rows, truncated, status, elapsed_ms: started.elapsed().as_millis() as u64 }
}

/// Top `k` values by lowercase edit distance, ties broken lexicographically.
pub fn nearest(target: &str, values: Vec<String>, k: usize) -> Vec<String> {
    let mut scored: Vec<(usize, String)> =
        values.into_iter().map(|v| (edit_distance(target, &v.to_lowercase()), v)).collect();
    scored.sort();
    scored.dedup();
    scored.into_iter().take(k).map(|(_, v)| v).collect()
}

/// Prompt section for probe results. Timing is left out so prompts are
/// reproducible.
pub fn render_probe_results(results: &[ProbeResult]) -> String {
    let mut out = String::new();
    for r in results {
        let head = match (&r.spec.kind, &r.spec.literal) {
            (ProbeKind::Distinct, _) => format!("distinct values of {}", r.spec.column),
            (ProbeKind::Like, Some(l)) => format!("values of {} containing '{l}'", r.spec.column),
            (ProbeKind::EditDistance, Some(l)) => format!("values of {} closest to '{l}'", r.spec.column),
            (_, None) => format!("values of {}", r.spec.column),
        };
        let body = match &r.status {
            ProbeStatus::Ok if r.rows.is_empty() => "(none)".to_string(),
            ProbeStatus::Ok => {
                let quoted: Vec<String> = r.rows.iter().map(|v| format!("'{v}'")).collect();
                let more = if r.truncated { ", ..." } else { "" };
                format!("{}{more}", quoted.join(", "))
            }
            ProbeStatus::Timeout => "(timed out)".to_string(),
            ProbeStatus::Failed(_) => "(failed)".to_string(),
        };
        out.push_str(&format!("{head}: {body}\n"));
    }
    out
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    question_id: &'a str,
    #[serde(flatten)]
    result: &'a ProbeResult,
}

/// Appends one JSON line per probe.
pub fn append_transcript(path: &Path, question_id: &str, results: &[ProbeResult]) -> Result<(), ProbeError> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = String::new();
    for result in results {
        buf.push_str(&serde_json::to_string(&TranscriptLine { question_id, result }).expect("serializable"));
        buf.push('\n');
    }
    f.write_all(buf.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil;
    use proptest::prelude::*;

    fn lev_oracle(a: &[char], b: &[char]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                if x == y {
                    lev_oracle(ra, rb)
                } else {
                    1 + lev_oracle(ra, b).min(lev_oracle(a, rb)).min(lev_oracle(ra, rb))
                }
            }
        }
    }

    #[test]
    fn edit_distance_known_values() {
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("flaw", "lawn"), 2);
        assert_eq!(edit_distance("é", "e"), 1);
    }

    proptest! {
        #[test]
        fn edit_distance_matches_recursive_oracle(a in "\\PC{0,6}", b in "\\PC{0,6}") {
            let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
            prop_assert_eq!(edit_distance(&a, &b), lev_oracle(&ca, &cb));
        }

        #[test]
        fn like_pattern_only_escapes_wildcards(s in "\\PC{0,12}") {
            let p = like_pattern(&s);
            let inner = &p[1..p.len() - 1];
            let mut unescaped = String::new();
            let mut it = inner.chars();
            while let Some(c) = it.next() {
                if c == '\\' {
                    let next = it.next();
                    prop_assert!(matches!(next, Some('%' | '_' | '\\')));
                    unescaped.extend(next);
                } else {
                    prop_assert!(c != '%' && c != '_');
                    unescaped.push(c);
                }
            }
            prop_assert_eq!(unescaped, s);
        }
    }

    #[test]
    fn nul_literals_match_nothing() {
        let root = testutil::fixture_root();
        let cat = testutil::profiled(root.path(), "financial");
        let col = ColumnRef::new("district", "A2");
        let specs = [like_probe(&col, "\0", 5), like_probe(&col, "a\0b", 5), like_probe(&col, "Praha", 5)];
        let results = execute_probes(&cat, &specs, &ProbeConfig::default());
        assert!(results[0].rows.is_empty() && results[1].rows.is_empty());
        assert_eq!(results[2].rows, ["Hl.m. Praha"]);
    }

    #[test]
    fn nearest_breaks_ties_lexicographically() {
        let vals = ["Fremont", "Fresno", "Frank", "fremont"].map(String::from).to_vec();
        assert_eq!(nearest("fremond", vals, 3), ["Fremont", "fremont", "Fresno"]);
    }

    #[test]
    fn fallback_finds_columns_and_values() {
        let root = testutil::fixture_root();
        let cat = testutil::profiled(root.path(), "california_schools");
        let kws = fallback_keywords("What is the average math score of schools in Fremont?", &cat);
        let fremont = kws.iter().find(|k| k.text == "Fremont").expect("Fremont found");
        assert_eq!(fremont.kind, KeywordKind::ValueLiteral);
        assert!(fremont.candidate_columns.contains(&ColumnRef::new("schools", "City")));
    }

    #[test]
    fn llm_reply_is_validated_against_question_and_catalog() {
        let root = testutil::fixture_root();
        let cat = testutil::profiled(root.path(), "financial");
        let mut findings = Vec::new();
        let reply = "weekly | value | account.frequency\nmonthly | value | account.frequency\ngender | column | client.gender, client.sex\n";
        let kws = parse_keyword_reply(reply, "How many accounts have weekly issuance by gender?", &cat, &mut findings);
        assert_eq!(kws.len(), 2);
        assert_eq!(kws[0].text, "weekly");
        assert_eq!(&"How many accounts have weekly issuance by gender?"[kws[0].span.clone()], "weekly");
        assert_eq!(kws[1].candidate_columns, [ColumnRef::new("client", "gender")]);
        assert_eq!(findings.len(), 2, "{findings:?}");
    }

    #[test]
    fn probes_depend_on_keyword_kind_and_column_type() {
        let root = testutil::fixture_root();
        let cat = testutil::profiled(root.path(), "financial");
        let kws = vec![
            KeywordCandidate {
                text: "weekly".into(),
                span: 0..6,
                kind: KeywordKind::ValueLiteral,
                candidate_columns: vec![ColumnRef::new("account", "frequency"), ColumnRef::new("account", "account_id")],
            },
            KeywordCandidate {
                text: "gender".into(),
                span: 7..13,
                kind: KeywordKind::ColumnRef,
                candidate_columns: vec![ColumnRef::new("client", "gender")],
            },
        ];
        let (specs, findings) = build_probes(&kws, &cat, &ProbeConfig::default());
        let kinds: Vec<_> = specs.iter().map(|s| (s.kind, s.column.column.as_str())).collect();
        assert_eq!(
            kinds,
            [(ProbeKind::Like, "frequency"), (ProbeKind::EditDistance, "frequency"), (ProbeKind::Distinct, "gender")]
        );
        assert_eq!(findings.len(), 1);
        let results = execute_probes(&cat, &specs, &ProbeConfig::default());
        assert!(results[0].rows.is_empty(), "no stored value contains 'weekly'");
        assert_eq!(results[2].rows, ["F", "M"]);
        assert!(results.iter().all(|r| r.status == ProbeStatus::Ok));
    }

    #[test]
    fn probe_cap_and_truncation() {
        let root = testutil::fixture_root();
        let cat = testutil::profiled(root.path(), "financial");
        let config = ProbeConfig { row_cap: 2, max_probes: 1, ..ProbeConfig::default() };
        let kw = KeywordCandidate {
            text: "x".into(),
            span: 0..1,
            kind: KeywordKind::ColumnRef,
            candidate_columns: vec![ColumnRef::new("district", "A2"), ColumnRef::new("client", "gender")],
        };
        let (specs, findings) = build_probes(&[kw], &cat, &config);
        assert_eq!(specs.len(), 1);
        assert_eq!(findings.len(), 1);
        let r = &execute_probes(&cat, &specs, &config)[0];
        assert_eq!(r.rows.len(), 2);
        assert!(r.truncated);
        let rendered = render_probe_results(std::slice::from_ref(r));
        assert!(rendered.ends_with(", ...\n"), "{rendered}");
    }

    #[test]
    fn transcript_lines_are_json() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        let r = ProbeResult {
            spec: distinct_probe(&ColumnRef::new("t", "c"), 3),
            rows: vec!["a".into()],
            truncated: false,
            status: ProbeStatus::Ok,
            elapsed_ms: 1,
        };
        append_transcript(&p, "7", &[r.clone(), r]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["question_id"], "7");
        assert_eq!(v["spec"]["kind"], "distinct");
    }
}
