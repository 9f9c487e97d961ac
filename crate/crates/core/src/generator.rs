//! Evidence prompt assembly, generation and join-clause revision.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::LazyLock;
use thiserror::Error;

use crate::catalog::SchemaCatalog;
use crate::dataset::{QuestionId, QuestionRecord};
use crate::finding::Finding;
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError, Stage};
use crate::prober::{self, ProbeResult};
use crate::prompts::PromptAssets;
use crate::summarizer::SchemaView;
use crate::text;

const STAGE: &str = "generator";

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("prompt needs {tokens} tokens after truncation, budget is {budget}")]
    PromptTooLarge { tokens: usize, budget: usize },
    #[error("question {question_id}: {source}")]
    Gateway {
        question_id: QuestionId,
        #[source]
        source: GatewayError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceMode {
    FullSchema,
    Summarized,
    Revised,
}

impl fmt::Display for EvidenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvidenceMode::FullSchema => "full_schema",
            EvidenceMode::Summarized => "summarized",
            EvidenceMode::Revised => "revised",
        })
    }
}

impl std::str::FromStr for EvidenceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full_schema" => Ok(Self::FullSchema),
            "summarized" => Ok(Self::Summarized),
            "revised" => Ok(Self::Revised),
            other => Err(format!("unknown evidence mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptExample {
    pub question_id: QuestionId,
    pub question: String,
    pub evidence: String,
    /// Summarized schema of the example's database, when shown.
    pub schema: Option<String>,
}

impl PromptExample {
    pub fn from_record(record: &QuestionRecord, schema: Option<String>) -> Self {
        Self {
            question_id: record.question_id.clone(),
            question: record.question.clone(),
            evidence: record.gold_evidence.clone().unwrap_or_default(),
            schema,
        }
    }
}

/// Sections render in a fixed order: instruction, examples, probe results,
/// schema, question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidencePrompt {
    pub instruction: String,
    /// Anchor first.
    pub examples: Vec<PromptExample>,
    pub probe_results: Vec<ProbeResult>,
    pub schema: String,
    pub question: String,
}

impl EvidencePrompt {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(self.instruction.trim_end());
        out.push_str("\n\n### Examples\n");
        for ex in &self.examples {
            out.push_str(&format!("\nQuestion: {}\n", ex.question));
            if let Some(schema) = &ex.schema {
                out.push_str(&format!("Schema:\n{schema}\n"));
            }
            out.push_str(&format!("Evidence: {}\n", ex.evidence));
        }
        out.push_str("\n### Sample SQL results\n\n");
        out.push_str(&prober::render_probe_results(&self.probe_results));
        out.push_str("\n### Schema\n\n");
        out.push_str(&self.schema);
        out.push_str("\n\n### Question\n\n");
        out.push_str(&self.question);
        out.push('\n');
        out
    }

    pub fn tokens(&self) -> usize {
        text::estimate_tokens(&self.render())
    }
}

pub fn instruction_for(mode: EvidenceMode, prompts: &PromptAssets) -> &str {
    match mode {
        EvidenceMode::Summarized => &prompts.evidence_summarized,
        _ => &prompts.evidence_full_schema,
    }
}

/// Builds the prompt and, when `budget` is set, drops probe results from the
/// end, then companions from the last, then the anchor until it fits.
pub fn assemble_prompt(
    instruction: &str,
    question: &str,
    schema: &SchemaView,
    probes: Vec<ProbeResult>,
    examples: Vec<PromptExample>,
    budget: Option<usize>,
) -> Result<(EvidencePrompt, Vec<Finding>), GeneratorError> {
    let mut prompt = EvidencePrompt {
        instruction: instruction.to_string(),
        examples,
        probe_results: probes,
        schema: schema.rendered.clone(),
        question: question.to_string(),
    };
    let mut findings = Vec::new();
    let Some(budget) = budget else {
        return Ok((prompt, findings));
    };
    let (mut dropped_probes, mut dropped_examples) = (0, 0);
    loop {
        let tokens = prompt.tokens();
        if tokens <= budget {
            break;
        }
        if prompt.probe_results.pop().is_some() {
            dropped_probes += 1;
        } else if prompt.examples.pop().is_some() {
            dropped_examples += 1;
        } else {
            return Err(GeneratorError::PromptTooLarge { tokens, budget });
        }
    }
    if dropped_probes + dropped_examples > 0 {
        findings.push(Finding::info(
            STAGE,
            format!("prompt over budget: dropped {dropped_probes} probe results and {dropped_examples} examples"),
        ));
    }
    Ok((prompt, findings))
}

/// Where a clause's content can be traced to.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClauseProvenance {
    /// Schema references found in the catalog.
    pub schema_refs: Vec<String>,
    /// Schema-looking references the catalog does not contain.
    pub unknown_refs: Vec<String>,
    /// Quoted literals that a probe returned verbatim.
    pub probe_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub question_id: QuestionId,
    pub db_id: String,
    pub mode: EvidenceMode,
    pub clauses: Vec<String>,
    /// Model response as received.
    pub raw: String,
    pub provenance: Vec<ClauseProvenance>,
    pub findings: Vec<Finding>,
}

impl EvidenceBundle {
    /// Every clause terminated by `;`, separated by single spaces.
    pub fn text(&self) -> String {
        canonical_text(&self.clauses)
    }
}

pub fn canonical_text(clauses: &[String]) -> String {
    clauses.iter().map(|c| format!("{c};")).collect::<Vec<_>>().join(" ")
}

/// Splits on `;` and line breaks outside single-quoted literals. Bullets and
/// an `Evidence:` label are stripped; empty clauses are dropped.
pub fn parse_clauses(raw: &str) -> Vec<String> {
    let body = crate::catalog::strip_code_fence(raw);
    let bytes = body.as_bytes();
    let mut pieces = Vec::new();
    let (mut start, mut i) = (0, 0);
    while i < bytes.len() {
        match bytes[i] {
            b'\'' => i = text::literal_end(bytes, i).unwrap_or(i + 1),
            b';' | b'\n' => {
                pieces.push(&body[start..i]);
                i += 1;
                start = i;
            }
            _ => i += 1,
        }
    }
    pieces.push(&body[start..]);
    pieces.into_iter().map(clean_clause).filter(|c| !c.is_empty()).collect()
}

fn clean_clause(piece: &str) -> String {
    let mut s = piece.trim();
    if s.get(..9).is_some_and(|h| h.eq_ignore_ascii_case("evidence:")) {
        s = s[9..].trim_start();
    }
    s = s.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && s[digits..].starts_with(". ") {
        s = s[digits + 2..].trim_start();
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn provenance(clause: &str, catalog: &SchemaCatalog, probes: &[ProbeResult]) -> ClauseProvenance {
    let mut p = ClauseProvenance::default();
    for m in text::schema_mentions(clause) {
        let known = match &m.table {
            Some(t) => catalog.column(t, &m.name).is_some(),
            None => catalog.table(&m.name).is_some() || !catalog.columns_named(&m.name).is_empty(),
        };
        let shown = clause[m.span.clone()].to_string();
        if known {
            p.schema_refs.push(shown);
        } else {
            p.unknown_refs.push(shown);
        }
    }
    for lit in quoted_literals(clause) {
        if probes.iter().any(|r| r.rows.contains(&lit)) && !p.probe_values.contains(&lit) {
            p.probe_values.push(lit);
        }
    }
    p
}

fn quoted_literals(clause: &str) -> Vec<String> {
    let bytes = clause.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match (bytes[i], text::literal_end(bytes, i)) {
            (b'\'', Some(end)) => {
                out.push(clause[i + 1..end - 1].replace("''", "'"));
                i = end;
            }
            _ => i += 1,
        }
    }
    out
}

/// Builds a bundle from a model response; an empty response yields zero
/// clauses and a finding.
pub fn bundle_from_response(
    raw: String,
    question_id: QuestionId,
    mode: EvidenceMode,
    catalog: &SchemaCatalog,
    probes: &[ProbeResult],
) -> EvidenceBundle {
    let clauses = parse_clauses(&raw);
    let provenance: Vec<ClauseProvenance> = clauses.iter().map(|c| provenance(c, catalog, probes)).collect();
    let mut findings = Vec::new();
    if clauses.is_empty() {
        findings.push(Finding::warning(STAGE, format!("question {question_id}: model returned no evidence")));
    }
    for (c, p) in clauses.iter().zip(&provenance) {
        for u in &p.unknown_refs {
            findings.push(Finding::info(STAGE, format!("question {question_id}: clause `{c}` names unknown {u}")));
        }
    }
    EvidenceBundle { question_id, db_id: catalog.db_id.clone(), mode, clauses, raw, provenance, findings }
}

pub fn generate_evidence(
    prompt: &EvidencePrompt,
    question_id: &QuestionId,
    mode: EvidenceMode,
    catalog: &SchemaCatalog,
    gateway: &Gateway,
    model_id: &str,
) -> Result<EvidenceBundle, GeneratorError> {
    let request = ChatRequest::new(model_id, vec![ChatMessage::user(prompt.render())]);
    let raw = gateway
        .chat(Stage::Generate, &request)
        .map_err(|source| GeneratorError::Gateway { question_id: question_id.clone(), source })?;
    Ok(bundle_from_response(raw, question_id.clone(), mode, catalog, &prompt.probe_results))
}

/// One entry of an evidence output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub question_id: QuestionId,
    pub db_id: String,
    pub mode: EvidenceMode,
    /// Canonical clause text, ready for a downstream `evidence` field.
    pub evidence: String,
    #[serde(default)]
    pub clauses: Vec<String>,
    #[serde(default)]
    pub prompt_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub findings: Vec<Finding>,
}

impl EvidenceRecord {
    pub fn from_bundle(bundle: &EvidenceBundle, prompt_tokens: usize, findings: Vec<Finding>) -> Self {
        Self {
            question_id: bundle.question_id.clone(),
            db_id: bundle.db_id.clone(),
            mode: bundle.mode,
            evidence: bundle.text(),
            clauses: bundle.clauses.clone(),
            prompt_tokens,
            error: None,
            findings,
        }
    }

    pub fn failed(question_id: QuestionId, db_id: String, mode: EvidenceMode, error: String, findings: Vec<Finding>) -> Self {
        Self { question_id, db_id, mode, evidence: String::new(), clauses: Vec::new(), prompt_tokens: 0, error: Some(error), findings }
    }
}

/// Evidence keyed by question id from any JSON array of objects carrying
/// `question_id` and `evidence` (generator output or a BIRD question file).
/// Failed records and blank evidence map to `None`.
pub fn load_evidence_map(path: &std::path::Path) -> Result<std::collections::BTreeMap<QuestionId, Option<String>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let items = value.as_array().ok_or_else(|| format!("{}: expected a JSON array", path.display()))?;
    let mut out = std::collections::BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        let id = match &item["question_id"] {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            _ => return Err(format!("{}: entry {i} has no question_id", path.display())),
        };
        let failed = item.get("error").is_some_and(|e| !e.is_null());
        let evidence = item["evidence"].as_str().filter(|e| !failed && !e.trim().is_empty()).map(str::to_string);
        if out.insert(QuestionId(id.clone()), evidence).is_some() {
            return Err(format!("{}: duplicate question_id {id}", path.display()));
        }
    }
    Ok(out)
}

static QUALIFIED_EQ: LazyLock<Regex> = LazyLock::new(|| {
    let part = r"(?:`[^`]+`|[A-Za-z_][A-Za-z0-9_]*)";
    let qref = format!(r"{part}\s*\.\s*{part}");
    Regex::new(&format!(r"{qref}\s*=\s*{qref}")).expect("valid regex")
});

/// Clauses that only state how tables are joined.
pub fn is_join_clause(clause: &str) -> bool {
    let lower = clause.trim().to_lowercase();
    if lower.starts_with("join on") {
        return true;
    }
    let padded = format!(" {} ", lower.split_whitespace().collect::<Vec<_>>().join(" "));
    padded.contains(" join ") && !padded.contains("refers to") && QUALIFIED_EQ.is_match(clause)
}

/// Removes join clauses. No gateway call.
pub fn revise_evidence(bundle: &EvidenceBundle) -> EvidenceBundle {
    let mut out = bundle.clone();
    out.mode = EvidenceMode::Revised;
    let (clauses, provenance): (Vec<_>, Vec<_>) = bundle
        .clauses
        .iter()
        .cloned()
        .zip(bundle.provenance.iter().cloned())
        .filter(|(c, _)| !is_join_clause(c))
        .unzip();
    out.clauses = clauses;
    out.provenance = provenance;
    out
}

pub trait Reviser: Send + Sync {
    fn revise(&self, bundle: &EvidenceBundle) -> Result<EvidenceBundle, GeneratorError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct PatternReviser;

impl Reviser for PatternReviser {
    fn revise(&self, bundle: &EvidenceBundle) -> Result<EvidenceBundle, GeneratorError> {
        Ok(revise_evidence(bundle))
    }
}

/// Asks a model which clauses to keep. Only clauses already in the bundle
/// survive, so the result is always a subset of the input.
pub struct LlmReviser<'a> {
    pub gateway: &'a Gateway,
    pub model_id: String,
    pub prompts: &'a PromptAssets,
}

impl Reviser for LlmReviser<'_> {
    fn revise(&self, bundle: &EvidenceBundle) -> Result<EvidenceBundle, GeneratorError> {
        let request = ChatRequest::new(
            &self.model_id,
            vec![ChatMessage::user(self.prompts.revise.replace("{evidence}", &bundle.text()))],
        );
        let reply = self
            .gateway
            .chat(Stage::Revise, &request)
            .map_err(|source| GeneratorError::Gateway { question_id: bundle.question_id.clone(), source })?;
        let keep: Vec<String> = parse_clauses(&reply).into_iter().map(|c| c.to_lowercase()).collect();
        let mut out = bundle.clone();
        out.mode = EvidenceMode::Revised;
        let (clauses, provenance): (Vec<_>, Vec<_>) = bundle
            .clauses
            .iter()
            .cloned()
            .zip(bundle.provenance.iter().cloned())
            .filter(|(c, _)| keep.contains(&c.to_lowercase()))
            .unzip();
        out.clauses = clauses;
        out.provenance = provenance;
        Ok(out)
    }
}
