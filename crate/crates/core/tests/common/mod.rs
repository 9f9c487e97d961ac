//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use evgen_core::gateway::{ChatRequest, ChatTransport, TransportError};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Materializes every fixture database as `<root>/<db_id>/<db_id>.sqlite`
/// with its description files.
pub fn db_root() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(fixtures().join("dbs")).unwrap() {
        let src = entry.unwrap().path();
        let db_id = src.file_name().unwrap().to_string_lossy().into_owned();
        let dest = tmp.path().join(&db_id);
        std::fs::create_dir_all(dest.join("database_description")).unwrap();
        let sql = std::fs::read_to_string(src.join("schema.sql")).unwrap();
        rusqlite::Connection::open(dest.join(format!("{db_id}.sqlite"))).unwrap().execute_batch(&sql).unwrap();
        for d in std::fs::read_dir(src.join("database_description")).unwrap() {
            let d = d.unwrap().path();
            std::fs::copy(&d, dest.join("database_description").join(d.file_name().unwrap())).unwrap();
        }
    }
    tmp
}

#[derive(Debug, Clone, Default, serde::Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub keywords: String,
    #[serde(default)]
    pub summarize: String,
    #[serde(default)]
    pub evidence: String,
}

/// Stand-in model that answers from a per-question script. Unscripted
/// summarization requests select the first listed table; other unscripted
/// requests get an empty reply.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    pub script: BTreeMap<String, ScriptEntry>,
    pub requests: Mutex<Vec<String>>,
}

impl ScriptedChat {
    pub fn from_file(path: &Path) -> Self {
        let script = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        Self { script, requests: Mutex::new(Vec::new()) }
    }
}

fn last_after<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.rfind(marker).map(|i| text[i + marker.len()..].lines().next().unwrap_or("").trim())
}

impl ChatTransport for ScriptedChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let prompt = &request.messages.last().unwrap().content;
        self.requests.lock().unwrap().push(prompt.clone());
        let (stage, question) = if prompt.starts_with("Identify the words") {
            ("keywords", last_after(prompt, "\nQuestion: "))
        } else if prompt.starts_with("Select the tables") {
            ("summarize", last_after(prompt, "\nQuestion: "))
        } else if prompt.contains("### Question") {
            ("evidence", last_after(prompt, "### Question\n\n"))
        } else {
            return Err(TransportError::permanent("unrecognized prompt"));
        };
        let entry = question.and_then(|q| self.script.get(q));
        Ok(match (stage, entry) {
            ("keywords", Some(e)) => e.keywords.clone(),
            ("summarize", Some(e)) if !e.summarize.is_empty() => e.summarize.clone(),
            ("summarize", _) => last_after(prompt, "Tables:\n")
                .and_then(|line| line.split('(').next())
                .unwrap_or("")
                .to_string(),
            ("evidence", Some(e)) => e.evidence.clone(),
            _ => String::new(),
        })
    }
}
