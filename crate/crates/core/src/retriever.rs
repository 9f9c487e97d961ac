//! Few-shot example selection over the training pool.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::dataset::{QuestionId, QuestionRecord, TrainingPool};
use crate::finding::Finding;
use crate::gateway::{cosine_similarity, EmbeddingError, EmbeddingVector, Gateway, GatewayError};

const STAGE: &str = "retriever";
pub const DEFAULT_FEW_SHOT: usize = 5;
pub const DEFAULT_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("embedding cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("pool index has {index} vectors for {pool} pool members")]
    IndexMismatch { index: usize, pool: usize },
    #[error("few-shot count must be at least 1")]
    ZeroK,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    provider_id: String,
    question_id: QuestionId,
    dim: usize,
    values: Vec<f64>,
}

/// Pool embeddings keyed by provider and question, persisted as JSON lines.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    entries: HashMap<(String, QuestionId), EmbeddingVector>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// A missing file is an empty cache.
    pub fn open(path: &Path) -> Result<Self, RetrieverError> {
        let err = |message: String| RetrieverError::Cache { path: path.into(), message };
        let mut entries = HashMap::new();
        match std::fs::read_to_string(path) {
            Ok(text) => {
                for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    let l: CacheLine = serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", n + 1)))?;
                    if l.values.len() != l.dim {
                        return Err(err(format!("line {}: dim {} but {} values", n + 1, l.dim, l.values.len())));
                    }
                    let v = EmbeddingVector::new(l.values, &l.provider_id).map_err(|e| err(format!("line {}: {e}", n + 1)))?;
                    entries.insert((l.provider_id, l.question_id), v);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(err(e.to_string())),
        }
        Ok(Self { path: Some(path.into()), entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, provider_id: &str, id: &QuestionId) -> Option<&EmbeddingVector> {
        self.entries.get(&(provider_id.to_string(), id.clone()))
    }

    fn insert_all(&mut self, items: Vec<(QuestionId, EmbeddingVector)>) -> Result<(), RetrieverError> {
        if let Some(path) = &self.path {
            let mut buf = String::new();
            for (id, v) in &items {
                let line = CacheLine {
                    provider_id: v.provider_id().to_string(),
                    question_id: id.clone(),
                    dim: v.dim(),
                    values: v.values().to_vec(),
                };
                buf.push_str(&serde_json::to_string(&line).expect("serializable"));
                buf.push('\n');
            }
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(buf.as_bytes()))
                .map_err(|e| RetrieverError::Cache { path: path.clone(), message: e.to_string() })?;
        }
        for (id, v) in items {
            self.entries.insert((v.provider_id().to_string(), id), v);
        }
        Ok(())
    }
}

/// Pool vectors aligned with [`TrainingPool::records`].
#[derive(Debug, Clone)]
pub struct PoolIndex {
    pub vectors: Vec<EmbeddingVector>,
}

/// Embeds pool members missing from `cache`. Nothing is cached unless every
/// batch succeeds.
pub fn precompute_pool_embeddings(
    pool: &TrainingPool,
    gateway: &Gateway,
    cache: &mut EmbeddingCache,
    batch_size: usize,
) -> Result<PoolIndex, RetrieverError> {
    let provider = gateway.embedder_id().to_string();
    let missing: Vec<&QuestionRecord> = pool.iter().filter(|r| cache.get(&provider, &r.question_id).is_none()).collect();
    let mut fresh = Vec::with_capacity(missing.len());
    for chunk in missing.chunks(batch_size.max(1)) {
        let texts: Vec<String> = chunk.iter().map(|r| r.question.clone()).collect();
        let vectors = gateway.embed(&texts)?;
        fresh.extend(chunk.iter().map(|r| r.question_id.clone()).zip(vectors));
    }
    cache.insert_all(fresh)?;
    let vectors = pool
        .iter()
        .map(|r| cache.get(&provider, &r.question_id).cloned().expect("inserted above"))
        .collect();
    Ok(PoolIndex { vectors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub record: QuestionRecord,
    pub similarity: f64,
}

/// The anchor is the most similar pool question overall; companions are the
/// next most similar questions from the anchor's database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotSet {
    pub anchor: ScoredExample,
    pub companions: Vec<ScoredExample>,
}

impl FewShotSet {
    pub fn db_id(&self) -> &str {
        &self.anchor.record.db_id
    }

    /// Anchor first, then companions by descending similarity.
    pub fn examples(&self) -> impl Iterator<Item = &ScoredExample> {
        std::iter::once(&self.anchor).chain(self.companions.iter())
    }

    pub fn len(&self) -> usize {
        1 + self.companions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Descending similarity, ascending question id on ties.
fn rank(a: &(f64, &QuestionRecord), b: &(f64, &QuestionRecord)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.question_id.cmp(&b.1.question_id))
}

/// Picks `k` examples. `exclude` removes the target itself when it is a
/// pool member.
pub fn select_few_shot(
    query: &EmbeddingVector,
    pool: &TrainingPool,
    index: &PoolIndex,
    k: usize,
    exclude: Option<&QuestionId>,
) -> Result<(FewShotSet, Vec<Finding>), RetrieverError> {
    if k == 0 {
        return Err(RetrieverError::ZeroK);
    }
    if index.vectors.len() != pool.len() {
        return Err(RetrieverError::IndexMismatch { index: index.vectors.len(), pool: pool.len() });
    }
    let mut scored = Vec::with_capacity(pool.len());
    for (r, v) in pool.iter().zip(&index.vectors) {
        if exclude == Some(&r.question_id) {
            continue;
        }
        scored.push((cosine_similarity(query, v)?, r));
    }
    let Some(anchor) = scored.iter().copied().min_by(rank) else {
        return Err(RetrieverError::IndexMismatch { index: 0, pool: pool.len() });
    };
    let mut same_db: Vec<(f64, &QuestionRecord)> = scored
        .iter()
        .copied()
        .filter(|(_, r)| r.db_id == anchor.1.db_id && r.question_id != anchor.1.question_id)
        .collect();
    same_db.sort_by(rank);
    same_db.truncate(k - 1);
    let mut findings = Vec::new();
    if same_db.len() < k - 1 {
        findings.push(Finding::info(
            STAGE,
            format!("database {} has only {} companion examples of {} requested", anchor.1.db_id, same_db.len(), k - 1),
        ));
    }
    let wrap = |(similarity, r): (f64, &QuestionRecord)| ScoredExample { record: r.clone(), similarity };
    Ok((FewShotSet { anchor: wrap(anchor), companions: same_db.into_iter().map(wrap).collect() }, findings))
}
