//! Automatic evidence generation for text-to-SQL.
//!
//! The pipeline reads a database and its description files into a
//! [`SchemaCatalog`], probes stored values with read-only sample SQL,
//! retrieves similar training questions as few-shot examples, and asks a
//! model for evidence clauses. The [`evaluator`] scores downstream SQL with
//! execution accuracy and the valid efficiency score, and audits evidence
//! for mechanically detectable defects.

pub mod catalog;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod evaluator;
pub mod finding;
pub mod gateway;
pub mod generator;
pub mod prober;
pub mod prompts;
pub mod retriever;
pub mod sqlguard;
pub mod summarizer;
pub mod text;

#[cfg(test)]
mod testutil;

pub use catalog::{ColumnDescriptor, ColumnRef, SchemaCatalog, ValueKind, ValueProfile};
pub use dataset::{QuestionId, QuestionRecord, Split, TrainingPool};
pub use evaluator::{AuditCategory, AuditFinding, EvalReport, ExecOutcome};
pub use finding::{Finding, Severity};
pub use gateway::{Cassette, CassetteMode, ChatRequest, EmbeddingVector, Gateway, GatewayError, Stage};
pub use generator::{EvidenceBundle, EvidenceMode, EvidencePrompt};
pub use prober::{KeywordCandidate, ProbeResult, ProbeSpec};
pub use retriever::FewShotSet;
pub use summarizer::SchemaView;
