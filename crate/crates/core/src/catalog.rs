//! Schema catalog: physical structure of one SQLite database, the BIRD-style
//! description files that accompany it, and per-column value profiles.

use rusqlite::types::ValueRef;
use rusqlite::Connection;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

use crate::finding::Finding;
use crate::gateway::{ChatMessage, ChatRequest, Gateway, Stage};
use crate::prompts::PromptAssets;
use crate::sqlguard::{self, quote_ident};

/// Header of every description CSV.
pub const DESCRIPTION_HEADER: [&str; 5] =
    ["original_column_name", "column_name", "column_description", "data_format", "value_description"];

/// Distinct values kept per column unless configured otherwise.
pub const DEFAULT_DISTINCT_CAP: usize = 20;

const STAGE: &str = "catalog";
const PROFILE_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot open database {path}: {source}")]
    Open { path: PathBuf, source: rusqlite::Error },
    #[error("cannot read schema of {path}: {message}")]
    Introspect { path: PathBuf, message: String },
    #[error("distinct-value cap must be positive")]
    ZeroCap,
    #[error("catalog cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// `(table, column)` pair naming one physical column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        Self { table: table.into(), column: column.into() }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}`.`{}`", self.table, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDescriptor {
    pub table_name: String,
    pub original_column_name: String,
    pub display_name: String,
    pub declared_type: String,
    pub column_description: String,
    pub data_format: String,
    pub value_description: String,
    pub is_primary_key: bool,
    pub foreign_refs: Vec<ColumnRef>,
}

impl ColumnDescriptor {
    pub fn column_ref(&self) -> ColumnRef {
        ColumnRef::new(&self.table_name, &self.original_column_name)
    }

    /// Declared type suggests dates or times.
    pub fn is_temporal(&self) -> bool {
        let t = self.declared_type.to_ascii_uppercase();
        t.contains("DATE") || t.contains("TIME")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub name: String,
    pub columns: Vec<ColumnDescriptor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Text,
    Numeric,
    Temporal,
    Blob,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueProfile {
    pub column: ColumnRef,
    pub distinct_count: u64,
    pub sampled_values: Vec<String>,
    pub is_capped: bool,
    pub value_kind: ValueKind,
}

impl ValueProfile {
    pub fn is_textual(&self) -> bool {
        matches!(self.value_kind, ValueKind::Text | ValueKind::Temporal)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaCatalog {
    pub db_id: String,
    pub db_path: PathBuf,
    pub tables: Vec<TableEntry>,
    /// Cap used by the last [`profile_values`] run.
    #[serde(default)]
    pub profile_cap: Option<usize>,
    #[serde(with = "profile_list", default)]
    pub profiles: BTreeMap<ColumnRef, ValueProfile>,
}

mod profile_list {
    use super::{ColumnRef, ValueProfile};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<ColumnRef, ValueProfile>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        map.values().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<ColumnRef, ValueProfile>, D::Error> {
        let list = Vec::<ValueProfile>::deserialize(d)?;
        Ok(list.into_iter().map(|p| (p.column.clone(), p)).collect())
    }
}

impl SchemaCatalog {
    /// Case-insensitive table lookup.
    pub fn table(&self, name: &str) -> Option<&TableEntry> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Case-insensitive column lookup.
    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnDescriptor> {
        self.table(table)?
            .columns
            .iter()
            .find(|c| c.original_column_name.eq_ignore_ascii_case(column))
    }

    /// Every column with a given name, in declaration order.
    pub fn columns_named(&self, column: &str) -> Vec<&ColumnDescriptor> {
        self.columns().filter(|c| c.original_column_name.eq_ignore_ascii_case(column)).collect()
    }

    pub fn columns(&self) -> impl Iterator<Item = &ColumnDescriptor> {
        self.tables.iter().flat_map(|t| t.columns.iter())
    }

    pub fn profile(&self, column: &ColumnRef) -> Option<&ValueProfile> {
        self.profiles.get(column)
    }

    /// Canonical ref for a possibly mis-cased `(table, column)`.
    pub fn resolve(&self, table: &str, column: &str) -> Option<ColumnRef> {
        self.column(table, column).map(ColumnDescriptor::column_ref)
    }

    pub fn write_cache(&self, path: &Path) -> Result<(), CatalogError> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CatalogError::Cache { path: path.into(), message: e.to_string() })?;
        text.push('\n');
        std::fs::write(path, text).map_err(|source| CatalogError::Io { path: path.into(), source })
    }

    pub fn read_cache(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CatalogError::Io { path: path.into(), source })?;
        serde_json::from_str(&text)
            .map_err(|e| CatalogError::Cache { path: path.into(), message: e.to_string() })
    }

    pub fn open(&self) -> Result<Connection, CatalogError> {
        sqlguard::open_read_only(&self.db_path)
            .map_err(|source| CatalogError::Open { path: self.db_path.clone(), source })
    }
}

/// Renders a stored value as prompt text: integers and reals in shortest
/// decimal form, text verbatim, blobs as `<blob:N bytes>`.
pub fn render_value(value: ValueRef<'_>) -> String {
    match value {
        ValueRef::Null => "NULL".to_string(),
        ValueRef::Integer(i) => i.to_string(),
        ValueRef::Real(f) => f.to_string(),
        ValueRef::Text(t) => String::from_utf8_lossy(t).into_owned(),
        ValueRef::Blob(b) => format!("<blob:{} bytes>", b.len()),
    }
}

/// Reads tables, columns, primary and foreign keys from the database and
/// merges description files from `description_dir` when given.
pub fn load_catalog(
    db_path: &Path,
    description_dir: Option<&Path>,
) -> Result<(SchemaCatalog, Vec<Finding>), CatalogError> {
    let conn = sqlguard::open_read_only(db_path)
        .map_err(|source| CatalogError::Open { path: db_path.into(), source })?;
    let introspect =
        |e: rusqlite::Error| CatalogError::Introspect { path: db_path.into(), message: e.to_string() };
    let mut findings = Vec::new();

    let names: Vec<String> = {
        let mut stmt = conn
            .prepare(
                "SELECT name FROM sqlite_master WHERE type = 'table' \
                 AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' ORDER BY rowid",
            )
            .map_err(introspect)?;
        let rows = stmt.query_map([], |r| r.get(0)).map_err(introspect)?;
        rows.collect::<Result<_, _>>().map_err(introspect)?
    };

    let mut tables = Vec::with_capacity(names.len());
    // (table, from column, referenced table, referenced column or None, seq)
    let mut raw_fks: Vec<(String, String, String, Option<String>, i64)> = Vec::new();
    for name in &names {
        let mut stmt = conn
            .prepare("SELECT name, type, pk FROM pragma_table_info(?1) ORDER BY cid")
            .map_err(introspect)?;
        let columns = stmt
            .query_map([name], |r| {
                Ok(ColumnDescriptor {
                    table_name: name.clone(),
                    original_column_name: r.get(0)?,
                    display_name: String::new(),
                    declared_type: r.get::<_, Option<String>>(1)?.unwrap_or_default(),
                    column_description: String::new(),
                    data_format: String::new(),
                    value_description: String::new(),
                    is_primary_key: r.get::<_, i64>(2)? > 0,
                    foreign_refs: Vec::new(),
                })
            })
            .map_err(introspect)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(introspect)?;
        tables.push(TableEntry { name: name.clone(), columns });

        let mut stmt = conn
            .prepare(
                "SELECT \"from\", \"table\", \"to\", seq FROM pragma_foreign_key_list(?1) \
                 ORDER BY id, seq",
            )
            .map_err(introspect)?;
        let fks = stmt
            .query_map([name], |r| {
                Ok((name.clone(), r.get::<_, String>(0)?, r.get(1)?, r.get(2)?, r.get(3)?))
            })
            .map_err(introspect)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(introspect)?;
        raw_fks.extend(fks);
    }

    let db_id = db_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut catalog = SchemaCatalog {
        db_id,
        db_path: db_path.to_path_buf(),
        tables,
        profile_cap: None,
        profiles: BTreeMap::new(),
    };
    resolve_foreign_keys(&mut catalog, raw_fks, &mut findings);

    if let Some(dir) = description_dir {
        merge_descriptions(&mut catalog, dir, &mut findings)?;
    }
    Ok((catalog, findings))
}

fn resolve_foreign_keys(
    catalog: &mut SchemaCatalog,
    raw: Vec<(String, String, String, Option<String>, i64)>,
    findings: &mut Vec<Finding>,
) {
    for (table, from, ref_table, ref_column, seq) in raw {
        let target = match ref_column {
            Some(col) => catalog.resolve(&ref_table, &col),
            None => catalog.table(&ref_table).and_then(|t| {
                t.columns.iter().filter(|c| c.is_primary_key).nth(seq as usize).map(|c| c.column_ref())
            }),
        };
        let Some(target) = target else {
            findings.push(Finding::warning(
                STAGE,
                format!("foreign key {table}.{from} references unknown column in `{ref_table}`; dropped"),
            ));
            continue;
        };
        let Some(col) = catalog
            .tables
            .iter_mut()
            .find(|t| t.name == table)
            .and_then(|t| t.columns.iter_mut().find(|c| c.original_column_name.eq_ignore_ascii_case(&from)))
        else {
            findings.push(Finding::warning(
                STAGE,
                format!("foreign key on unknown column {table}.{from}; dropped"),
            ));
            continue;
        };
        if !col.foreign_refs.contains(&target) {
            col.foreign_refs.push(target);
        }
    }
}

/// One description row as read from disk.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct DescriptionRow {
    original_column_name: String,
    column_name: String,
    column_description: String,
    data_format: String,
    value_description: String,
}

fn merge_descriptions(
    catalog: &mut SchemaCatalog,
    dir: &Path,
    findings: &mut Vec<Finding>,
) -> Result<(), CatalogError> {
    let entries =
        std::fs::read_dir(dir).map_err(|source| CatalogError::Io { path: dir.into(), source })?;
    let mut files: HashMap<String, PathBuf> = HashMap::new();
    let mut listed: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    listed.sort();
    for path in listed {
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if let (true, Some(stem)) = (is_csv, path.file_stem()) {
            files.entry(stem.to_string_lossy().trim().to_lowercase()).or_insert(path);
        }
    }

    for table in &mut catalog.tables {
        let Some(path) = files.get(&table.name.to_lowercase()) else {
            findings.push(Finding::info(STAGE, format!("no description file for table `{}`", table.name)));
            continue;
        };
        let bytes =
            std::fs::read(path).map_err(|source| CatalogError::Io { path: path.clone(), source })?;
        let file_label = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let rows = parse_description_csv(&bytes, &file_label, findings);
        let mut seen = std::collections::HashSet::new();
        for (line, row) in rows {
            let key = row.original_column_name.trim();
            let Some(col) = table
                .columns
                .iter_mut()
                .find(|c| c.original_column_name.trim().eq_ignore_ascii_case(key))
            else {
                findings.push(Finding::warning(
                    STAGE,
                    format!("{file_label}:{line}: column `{key}` not in table `{}`; row skipped", table.name),
                ));
                continue;
            };
            if !seen.insert(col.original_column_name.clone()) {
                findings.push(Finding::warning(
                    STAGE,
                    format!("{file_label}:{line}: duplicate row for `{key}`; row skipped"),
                ));
                continue;
            }
            col.display_name = row.column_name.trim().to_string();
            col.column_description = row.column_description;
            col.data_format = row.data_format;
            col.value_description = row.value_description;
        }
    }
    Ok(())
}

/// Parses a description CSV. Returns `(line, row)` pairs; every row that
/// cannot be used yields exactly one finding.
fn parse_description_csv(
    bytes: &[u8],
    file_label: &str,
    findings: &mut Vec<Finding>,
) -> Vec<(u64, DescriptionRow)> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let mut reader = csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(bytes);
    let header: Vec<String> = match reader.byte_headers() {
        Ok(h) => h.iter().map(|f| String::from_utf8_lossy(f).trim().to_lowercase()).collect(),
        Err(e) => {
            findings.push(Finding::warning(STAGE, format!("{file_label}: unreadable header: {e}")));
            return Vec::new();
        }
    };
    let index = |name: &str| header.iter().position(|h| h == name);
    let Some(orig_idx) = index("original_column_name") else {
        findings.push(Finding::warning(
            STAGE,
            format!("{file_label}: header lacks original_column_name; file skipped"),
        ));
        return Vec::new();
    };
    let idx = [index("column_name"), index("column_description"), index("data_format"), index("value_description")];

    let mut out = Vec::new();
    let mut record = csv::ByteRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                findings.push(Finding::warning(STAGE, format!("{file_label}:{line}: {e}; row skipped")));
                continue;
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        if record.len() != header.len() {
            findings.push(Finding::warning(
                STAGE,
                format!(
                    "{file_label}:{line}: expected {} fields, found {}; row skipped",
                    header.len(),
                    record.len()
                ),
            ));
            continue;
        }
        let field = |i: Option<usize>| {
            i.and_then(|i| record.get(i)).map(|f| String::from_utf8_lossy(f).into_owned()).unwrap_or_default()
        };
        let row = DescriptionRow {
            original_column_name: field(Some(orig_idx)),
            column_name: field(idx[0]),
            column_description: field(idx[1]),
            data_format: field(idx[2]),
            value_description: field(idx[3]),
        };
        if row.original_column_name.trim().is_empty() {
            findings.push(Finding::warning(
                STAGE,
                format!("{file_label}:{line}: empty original_column_name; row skipped"),
            ));
            continue;
        }
        out.push((line, row));
    }
    out
}

/// Fills one [`ValueProfile`] per column from
/// `SELECT DISTINCT c ... ORDER BY 1 LIMIT cap + 1` plus an exact
/// `COUNT(DISTINCT c)`. NULLs are not sampled.
pub fn profile_values(
    mut catalog: SchemaCatalog,
    cap: usize,
) -> Result<(SchemaCatalog, Vec<Finding>), CatalogError> {
    if cap == 0 {
        return Err(CatalogError::ZeroCap);
    }
    let conn = catalog.open()?;
    let mut findings = Vec::new();
    let mut profiles = BTreeMap::new();
    for col in catalog.columns() {
        let column = col.column_ref();
        let profile = match profile_column(&conn, col, cap) {
            Ok(p) => p,
            Err(message) => {
                findings.push(Finding::warning(STAGE, format!("profiling {column} failed: {message}")));
                ValueProfile {
                    column: column.clone(),
                    distinct_count: 0,
                    sampled_values: Vec::new(),
                    is_capped: false,
                    value_kind: ValueKind::Mixed,
                }
            }
        };
        profiles.insert(column, profile);
    }
    catalog.profiles = profiles;
    catalog.profile_cap = Some(cap);
    Ok((catalog, findings))
}

/// SQL of the distinct-value sample for `col`, fetching `limit` rows.
pub fn distinct_sample_sql(col: &ColumnRef, limit: usize) -> String {
    let c = quote_ident(&col.column);
    format!(
        "SELECT DISTINCT {c} FROM {} WHERE {c} IS NOT NULL ORDER BY 1 LIMIT {limit}",
        quote_ident(&col.table)
    )
}

fn profile_column(conn: &Connection, col: &ColumnDescriptor, cap: usize) -> Result<ValueProfile, String> {
    let column = col.column_ref();
    let count_sql = format!(
        "SELECT COUNT(DISTINCT {}) FROM {}",
        quote_ident(&column.column),
        quote_ident(&column.table)
    );
    let mut distinct_count = 0u64;
    sqlguard::run_query(conn, &count_sql, &[], PROFILE_TIMEOUT, |row| {
        distinct_count = row.get::<_, i64>(0).unwrap_or(0).max(0) as u64;
        false
    })
    .map_err(|e| e.to_string())?;

    let mut sampled = Vec::new();
    let mut classes = [false; 3]; // text, numeric, blob
    sqlguard::run_query(conn, &distinct_sample_sql(&column, cap + 1), &[], PROFILE_TIMEOUT, |row| {
        if let Ok(v) = row.get_ref(0) {
            match v {
                ValueRef::Text(_) => classes[0] = true,
                ValueRef::Integer(_) | ValueRef::Real(_) => classes[1] = true,
                ValueRef::Blob(_) => classes[2] = true,
                ValueRef::Null => {}
            }
            sampled.push(render_value(v));
        }
        true
    })
    .map_err(|e| e.to_string())?;
    sampled.truncate(cap);

    let value_kind = match classes {
        [false, false, false] => kind_from_declared(col),
        [true, false, false] | [false, true, false] if col.is_temporal() => ValueKind::Temporal,
        [true, false, false] => ValueKind::Text,
        [false, true, false] => ValueKind::Numeric,
        [false, false, true] => ValueKind::Blob,
        _ => ValueKind::Mixed,
    };
    Ok(ValueProfile {
        column,
        distinct_count,
        sampled_values: sampled,
        is_capped: distinct_count > cap as u64,
        value_kind,
    })
}

/// SQLite type-affinity rules applied to the declared type.
fn kind_from_declared(col: &ColumnDescriptor) -> ValueKind {
    if col.is_temporal() {
        return ValueKind::Temporal;
    }
    let t = col.declared_type.to_ascii_uppercase();
    if t.contains("INT") || t.contains("REAL") || t.contains("FLOA") || t.contains("DOUB") || t.contains("NUM") || t.contains("DEC") {
        ValueKind::Numeric
    } else if t.contains("CHAR") || t.contains("CLOB") || t.contains("TEXT") {
        ValueKind::Text
    } else if t.contains("BLOB") {
        ValueKind::Blob
    } else {
        ValueKind::Mixed
    }
}

/// Generated description CSV for one table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptionFile {
    pub table: String,
    pub csv: String,
}

impl DescriptionFile {
    pub fn file_name(&self) -> String {
        format!("{}.csv", self.table)
    }
}

/// Asks the model for one description row per column of every table and
/// keeps only rows naming real columns, in declaration order.
pub fn synthesize_descriptions(
    catalog: &SchemaCatalog,
    gateway: &Gateway,
    model_id: &str,
    prompts: &PromptAssets,
) -> (Vec<DescriptionFile>, Vec<Finding>) {
    let mut files = Vec::new();
    let mut findings = Vec::new();
    for table in &catalog.tables {
        if table.columns.is_empty() {
            files.push(DescriptionFile { table: table.name.clone(), csv: write_description_csv(&[]) });
            continue;
        }
        let prompt = describe_prompt(catalog, table, prompts);
        let req = ChatRequest::new(model_id, vec![ChatMessage::user(prompt)]);
        let response = match gateway.chat(Stage::Describe, &req) {
            Ok(r) => r,
            Err(e) => {
                findings.push(Finding::error("describe", format!("table `{}`: {e}", table.name)));
                continue;
            }
        };
        let rows = validate_generated_rows(table, &response, &mut findings);
        files.push(DescriptionFile { table: table.name.clone(), csv: write_description_csv(&rows) });
    }
    (files, findings)
}

fn describe_prompt(catalog: &SchemaCatalog, table: &TableEntry, prompts: &PromptAssets) -> String {
    let mut columns = String::new();
    for col in &table.columns {
        let samples = catalog
            .profile(&col.column_ref())
            .map(|p| p.sampled_values.iter().take(5).cloned().collect::<Vec<_>>().join(", "))
            .unwrap_or_default();
        let pk = if col.is_primary_key { " PRIMARY KEY" } else { "" };
        columns.push_str(&format!("- {} {}{pk}; sample values: {samples}\n", col.original_column_name, col.declared_type));
    }
    prompts
        .describe
        .replace("{table}", &table.name)
        .replace("{columns}", columns.trim_end())
        .replace("{header}", &DESCRIPTION_HEADER.join(","))
}

fn validate_generated_rows(
    table: &TableEntry,
    response: &str,
    findings: &mut Vec<Finding>,
) -> Vec<DescriptionRow> {
    let body = strip_code_fence(response);
    let mut reader =
        csv::ReaderBuilder::new().flexible(true).has_headers(false).from_reader(body.as_bytes());
    let mut by_column: HashMap<String, DescriptionRow> = HashMap::new();
    for record in reader.records() {
        let Ok(record) = record else {
            findings.push(Finding::warning("describe", format!("table `{}`: unparseable row dropped", table.name)));
            continue;
        };
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let name = field(0).trim().to_string();
        if name.is_empty() || name.eq_ignore_ascii_case("original_column_name") {
            continue;
        }
        let Some(col) = table.columns.iter().find(|c| c.original_column_name.eq_ignore_ascii_case(&name)) else {
            findings.push(Finding::warning(
                "describe",
                format!("table `{}`: generated row names unknown column `{name}`; dropped", table.name),
            ));
            continue;
        };
        by_column.entry(col.original_column_name.clone()).or_insert(DescriptionRow {
            original_column_name: col.original_column_name.clone(),
            column_name: field(1),
            column_description: field(2),
            data_format: field(3),
            value_description: field(4),
        });
    }
    table.columns.iter().filter_map(|c| by_column.remove(&c.original_column_name)).collect()
}

pub(crate) fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

fn write_description_csv(rows: &[DescriptionRow]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(DESCRIPTION_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            &r.original_column_name,
            &r.column_name,
            &r.column_description,
            &r.data_format,
            &r.value_description,
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}
