use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    /// Serve hits from the cassette, call the provider on misses and store them.
    Record,
    /// Serve hits only; a miss is an error and the provider is never called.
    Replay,
    /// Always call the provider; nothing is stored.
    Passthrough,
}

impl std::str::FromStr for CassetteMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            "passthrough" => Ok(Self::Passthrough),
            other => Err(format!("unknown cassette mode `{other}`")),
        }
    }
}

impl std::fmt::Display for CassetteMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Record => "record",
            Self::Replay => "replay",
            Self::Passthrough => "passthrough",
        })
    }
}

/// Recorded provider responses keyed by request fingerprint.
///
/// On disk a cassette is a sequence of `fingerprint<TAB>base64(response)`
/// lines. New entries are appended; existing lines are never rewritten.
#[derive(Debug)]
pub struct Cassette {
    mode: CassetteMode,
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, String>>,
    writer: Mutex<Option<File>>,
}

impl Cassette {
    pub fn in_memory(mode: CassetteMode) -> Self {
        Self { mode, path: None, entries: Mutex::new(HashMap::new()), writer: Mutex::new(None) }
    }

    /// Loads `path`. Replay mode requires the file to exist; record mode
    /// creates it on first write.
    pub fn open(path: impl AsRef<Path>, mode: CassetteMode) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                for (lineno, line) in text.lines().enumerate() {
                    if line.is_empty() {
                        continue;
                    }
                    let (fp, encoded) = line.split_once('\t').ok_or_else(|| {
                        GatewayError::Cassette(format!(
                            "{}:{}: missing tab separator",
                            path.display(),
                            lineno + 1
                        ))
                    })?;
                    let bytes = STANDARD.decode(encoded).map_err(|e| {
                        GatewayError::Cassette(format!("{}:{}: {e}", path.display(), lineno + 1))
                    })?;
                    let response = String::from_utf8(bytes).map_err(|e| {
                        GatewayError::Cassette(format!("{}:{}: {e}", path.display(), lineno + 1))
                    })?;
                    entries.entry(fp.to_string()).or_insert(response);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && mode != CassetteMode::Replay => {}
            Err(e) => {
                return Err(GatewayError::Cassette(format!("{}: {e}", path.display())));
            }
        }
        Ok(Self { mode, path: Some(path), entries: Mutex::new(entries), writer: Mutex::new(None) })
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fingerprint: &str) -> Option<String> {
        self.entries.lock().unwrap().get(fingerprint).cloned()
    }

    /// Stores a response unless the fingerprint is already present.
    pub fn insert(&self, fingerprint: &str, response: &str) -> Result<(), GatewayError> {
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(fingerprint) {
            return Ok(());
        }
        if let Some(path) = &self.path {
            let mut writer = self.writer.lock().unwrap();
            if writer.is_none() {
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
                *writer = Some(file);
            }
            let line = format!("{fingerprint}\t{}\n", STANDARD.encode(response.as_bytes()));
            writer
                .as_mut()
                .expect("writer opened above")
                .write_all(line.as_bytes())
                .map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
        }
        entries.insert(fingerprint.to_string(), response.to_string());
        Ok(())
    }
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String((*key).clone()).to_string());
                out.push(':');
                write_canonical(&map[*key], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// SHA-256 (hex) of the canonical form of `(kind, model_id, payload)`.
pub fn fingerprint(kind: &str, model_id: &str, payload: &Value) -> String {
    let doc = serde_json::json!({ "kind": kind, "model_id": model_id, "payload": payload });
    hex::encode(Sha256::digest(canonical_json(&doc).as_bytes()))
}
