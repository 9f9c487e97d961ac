//! BIRD and Spider question sets.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::finding::Finding;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid JSON: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: expected a JSON array of question objects")]
    NotArray { path: PathBuf },
    #[error("entry {index}: {message}")]
    Malformed { index: usize, message: String },
    #[error("entry {index}: duplicate question_id `{id}`")]
    Duplicate { index: usize, id: QuestionId },
    #[error("question {id}: database `{db_id}` not found under {root}")]
    UnknownDb { id: QuestionId, db_id: String, root: PathBuf },
    #[error("training pool is empty")]
    EmptyPool,
}

/// Question identifier. Orders naturally, so `"9" < "10"` and
/// `"dev:2" < "dev:10"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuestionId(pub String);

impl QuestionId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for QuestionId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl Ord for QuestionId {
    fn cmp(&self, other: &Self) -> Ordering {
        natural_cmp(&self.0, &other.0).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for QuestionId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut a, mut b) = (a.as_bytes(), b.as_bytes());
    loop {
        match (a.first(), b.first()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let da = a.iter().take_while(|c| c.is_ascii_digit()).count();
                let db = b.iter().take_while(|c| c.is_ascii_digit()).count();
                let na = trim_zeros(&a[..da]);
                let nb = trim_zeros(&b[..db]);
                let ord = na.len().cmp(&nb.len()).then_with(|| na.cmp(nb));
                if ord != Ordering::Equal {
                    return ord;
                }
                a = &a[da..];
                b = &b[db..];
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(y);
                }
                a = &a[1..];
                b = &b[1..];
            }
        }
    }
}

fn trim_zeros(digits: &[u8]) -> &[u8] {
    let n = digits.iter().take_while(|&&c| c == b'0').count();
    &digits[n.min(digits.len().saturating_sub(1))..]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: QuestionId,
    pub db_id: String,
    pub question: String,
    pub gold_sql: Option<String>,
    pub gold_evidence: Option<String>,
    pub split: Split,
}

/// Reads a BIRD (`question_id`, `db_id`, `question`, `evidence`, `SQL`) or
/// Spider (`db_id`, `question`, `query`) array. Records keep file order;
/// blank evidence is treated as absent; missing ids become `<split>:<index>`.
pub fn load_split(path: &Path, split: Split) -> Result<Vec<QuestionRecord>, DatasetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.into(), source })?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| DatasetError::Parse { path: path.into(), message: e.to_string() })?;
    let Value::Array(items) = value else {
        return Err(DatasetError::NotArray { path: path.into() });
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        let record = parse_entry(index, item, split)?;
        if !seen.insert(record.question_id.clone()) {
            return Err(DatasetError::Duplicate { index, id: record.question_id });
        }
        out.push(record);
    }
    Ok(out)
}

fn parse_entry(index: usize, item: &Value, split: Split) -> Result<QuestionRecord, DatasetError> {
    let malformed = |message: String| DatasetError::Malformed { index, message };
    let obj = item.as_object().ok_or_else(|| malformed("not an object".into()))?;
    let text_field = |name: &str| -> Result<Option<String>, DatasetError> {
        match obj.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(malformed(format!("field `{name}` must be a string, got {other}"))),
        }
    };
    let question_id = match obj.get("question_id") {
        None | Some(Value::Null) => QuestionId(format!("{split}:{index}")),
        Some(Value::String(s)) if !s.trim().is_empty() => QuestionId(s.clone()),
        Some(Value::Number(n)) if n.is_u64() || n.is_i64() => QuestionId(n.to_string()),
        Some(other) => return Err(malformed(format!("invalid question_id {other}"))),
    };
    let db_id = text_field("db_id")?
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| malformed("missing db_id".into()))?;
    let question = text_field("question")?.unwrap_or_default();
    if question.trim().is_empty() {
        return Err(malformed("question is empty".into()));
    }
    let gold_evidence = text_field("evidence")?.filter(|e| !e.trim().is_empty());
    let gold_sql = match text_field("SQL")? {
        Some(sql) => Some(sql),
        None => text_field("query")?,
    };
    Ok(QuestionRecord { question_id, db_id, question, gold_sql, gold_evidence, split })
}

/// Writes records in the BIRD field layout; absent fields are omitted.
pub fn write_split(records: &[QuestionRecord], path: &Path) -> Result<(), DatasetError> {
    let items: Vec<Value> = records
        .iter()
        .map(|r| {
            let mut m = Map::new();
            m.insert("question_id".into(), Value::String(r.question_id.0.clone()));
            m.insert("db_id".into(), Value::String(r.db_id.clone()));
            m.insert("question".into(), Value::String(r.question.clone()));
            if let Some(e) = &r.gold_evidence {
                m.insert("evidence".into(), Value::String(e.clone()));
            }
            if let Some(s) = &r.gold_sql {
                m.insert("SQL".into(), Value::String(s.clone()));
            }
            Value::Object(m)
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&items).expect("values serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| DatasetError::Io { path: path.into(), source })
}

/// Fails on the first record whose database directory is missing.
pub fn check_db_ids(records: &[QuestionRecord], db_root: &Path) -> Result<(), DatasetError> {
    for r in records {
        if !db_root.join(&r.db_id).is_dir() {
            return Err(DatasetError::UnknownDb {
                id: r.question_id.clone(),
                db_id: r.db_id.clone(),
                root: db_root.into(),
            });
        }
    }
    Ok(())
}

/// Training questions with gold evidence, the only source of few-shot
/// examples.
#[derive(Debug, Clone)]
pub struct TrainingPool {
    records: Vec<QuestionRecord>,
    by_db: BTreeMap<String, Vec<usize>>,
}

impl TrainingPool {
    /// Keeps train-split records that carry evidence; every excluded record
    /// yields one finding.
    pub fn new(records: Vec<QuestionRecord>) -> Result<(Self, Vec<Finding>), DatasetError> {
        let mut findings = Vec::new();
        let mut kept: Vec<QuestionRecord> = records
            .into_iter()
            .filter(|r| {
                let ok = r.split == Split::Train && r.gold_evidence.is_some();
                if !ok {
                    let why = if r.split != Split::Train { "not a train record" } else { "no evidence" };
                    findings.push(Finding::info("dataset", format!("question {} excluded from pool: {why}", r.question_id)));
                }
                ok
            })
            .collect();
        if kept.is_empty() {
            return Err(DatasetError::EmptyPool);
        }
        kept.sort_by(|a, b| a.question_id.cmp(&b.question_id));
        let mut by_db: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in kept.iter().enumerate() {
            by_db.entry(r.db_id.clone()).or_default().push(i);
        }
        Ok((Self { records: kept, by_db }, findings))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// All members in ascending question_id order.
    pub fn records(&self) -> &[QuestionRecord] {
        &self.records
    }

    pub fn iter(&self) -> impl Iterator<Item = &QuestionRecord> {
        self.records.iter()
    }

    /// Indices (into [`TrainingPool::records`]) of members from `db_id`.
    pub fn indices_for_db(&self, db_id: &str) -> &[usize] {
        self.by_db.get(db_id).map_or(&[], Vec::as_slice)
    }

    pub fn by_db<'a>(&'a self, db_id: &str) -> impl Iterator<Item = &'a QuestionRecord> + 'a {
        self.indices_for_db(db_id).iter().map(move |&i| &self.records[i])
    }

    pub fn db_ids(&self) -> impl Iterator<Item = &str> {
        self.by_db.keys().map(String::as_str)
    }
}
