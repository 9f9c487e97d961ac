//! Read-only SQLite access: connection opening, statement screening and
//! deadline-bounded execution.

use rusqlite::{Connection, ErrorCode, OpenFlags, Row, ToSql};
use std::path::Path;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuardError {
    #[error("empty statement")]
    Empty,
    #[error("statement must begin with SELECT or WITH, found `{0}`")]
    NotSelect(String),
    #[error("multiple statements are not allowed")]
    MultipleStatements,
    #[error("forbidden keyword `{0}`")]
    ForbiddenKeyword(String),
    #[error("statement is not read-only")]
    NotReadOnly,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryFailure {
    #[error("query exceeded {0} ms")]
    Timeout(u64),
    #[error("rejected: {0}")]
    Rejected(#[from] GuardError),
    #[error("sql error: {0}")]
    Sql(String),
}

const FORBIDDEN: &[&str] = &[
    "ALTER", "ANALYZE", "ATTACH", "BEGIN", "COMMIT", "CREATE", "DELETE", "DETACH", "DROP",
    "END", "INSERT", "PRAGMA", "REINDEX", "RELEASE", "REPLACE", "ROLLBACK", "SAVEPOINT",
    "TRUNCATE", "UPDATE", "UPSERT", "VACUUM",
];

/// Opens `path` read-only with `query_only` set. Fails if the file is missing
/// or is not an SQLite database.
pub fn open_read_only(path: &Path) -> rusqlite::Result<Connection> {
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )?;
    conn.pragma_update(None, "query_only", true)?;
    // Forces the header to be read so corrupt files fail here.
    conn.query_row("SELECT count(*) FROM sqlite_master", [], |r| r.get::<_, i64>(0))?;
    Ok(conn)
}

/// Syntactic screen for a single read-only query.
///
/// Quoted strings, quoted identifiers and comments are skipped, so a literal
/// such as `'; DROP TABLE x'` is not mistaken for a statement. `END` is
/// allowed only inside a `CASE` expression and `REPLACE` only as the scalar
/// function `REPLACE(...)`.
pub fn validate_select(sql: &str) -> Result<(), GuardError> {
    let words = scan_words(sql)?;
    let Some((first, _)) = words.first() else {
        return Err(GuardError::Empty);
    };
    if first != "SELECT" && first != "WITH" {
        return Err(GuardError::NotSelect(first.clone()));
    }
    let mut case_depth = 0usize;
    for (word, followed_by_paren) in &words {
        match word.as_str() {
            "CASE" => case_depth += 1,
            "END" if case_depth > 0 => case_depth -= 1,
            "REPLACE" if *followed_by_paren => {}
            w if FORBIDDEN.binary_search(&w).is_ok() => {
                return Err(GuardError::ForbiddenKeyword(w.to_string()));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Uppercased bare words, each flagged when the next significant character
/// is `(`. Rejects content after a top-level `;`.
fn scan_words(sql: &str) -> Result<Vec<(String, bool)>, GuardError> {
    let bytes = sql.as_bytes();
    let mut words: Vec<(String, bool)> = Vec::new();
    let mut i = 0;
    let mut after_semicolon = false;
    // True while the last significant token was a bare word.
    let mut word_pending = false;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if b == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if b == b'/' && bytes.get(i + 1) == Some(&b'*') {
            i = sql[i + 2..].find("*/").map_or(bytes.len(), |p| i + 2 + p + 2);
            continue;
        }
        if after_semicolon {
            return Err(GuardError::MultipleStatements);
        }
        let is_word = b.is_ascii_alphabetic() || b == b'_';
        match b {
            b'\'' | b'"' | b'`' => i = crate::text::skip_quoted(bytes, i, b),
            b'[' => i = sql[i..].find(']').map_or(bytes.len(), |p| i + p + 1),
            b';' => {
                after_semicolon = true;
                i += 1;
            }
            b'(' => {
                if word_pending {
                    if let Some(last) = words.last_mut() {
                        last.1 = true;
                    }
                }
                i += 1;
            }
            _ if is_word => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                words.push((sql[start..i].to_ascii_uppercase(), false));
            }
            _ => i += sql[i..].chars().next().map_or(1, char::len_utf8),
        }
        word_pending = is_word;
    }
    Ok(words)
}

/// Executes a screened query, feeding each row to `on_row` until it returns
/// `false`. Interrupts the statement once `timeout` has elapsed.
pub fn run_query<F>(
    conn: &Connection,
    sql: &str,
    params: &[&dyn ToSql],
    timeout: Duration,
    mut on_row: F,
) -> Result<(), QueryFailure>
where
    F: FnMut(&Row<'_>) -> bool,
{
    validate_select(sql)?;
    let timeout_ms = timeout.as_millis() as u64;
    let deadline = Instant::now() + timeout;
    conn.progress_handler(1000, Some(move || Instant::now() >= deadline))
        .map_err(|e| QueryFailure::Sql(e.to_string()))?;
    let result = (|| {
        let mut stmt = conn.prepare(sql).map_err(|e| map_err(e, timeout_ms))?;
        if !stmt.readonly() {
            return Err(QueryFailure::Rejected(GuardError::NotReadOnly));
        }
        let mut rows = stmt.query(params).map_err(|e| map_err(e, timeout_ms))?;
        while let Some(row) = rows.next().map_err(|e| map_err(e, timeout_ms))? {
            if !on_row(row) {
                break;
            }
        }
        Ok(())
    })();
    let _ = conn.progress_handler(0, None::<fn() -> bool>);
    result
}

fn map_err(e: rusqlite::Error, timeout_ms: u64) -> QueryFailure {
    match &e {
        rusqlite::Error::SqliteFailure(f, _) if f.code == ErrorCode::OperationInterrupted => {
            QueryFailure::Timeout(timeout_ms)
        }
        rusqlite::Error::MultipleStatement => {
            QueryFailure::Rejected(GuardError::MultipleStatements)
        }
        _ => QueryFailure::Sql(e.to_string()),
    }
}

/// Double-quoted SQLite identifier.
pub fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forbidden_sorted() {
        let mut s = FORBIDDEN.to_vec();
        s.sort_unstable();
        assert_eq!(s, FORBIDDEN);
    }

    #[test]
    fn accepts_plain_selects() {
        for sql in [
            "SELECT 1",
            "select DISTINCT \"gender\" FROM \"client\" ORDER BY 1;",
            "WITH t AS (SELECT 1 AS x) SELECT x FROM t",
            "SELECT CASE WHEN a THEN 1 ELSE 0 END FROM t",
            "SELECT REPLACE(name, 'a', 'b') FROM t",
            "SELECT 'DROP TABLE x; DELETE' FROM t -- trailing; comment",
            "SELECT \"delete\" FROM `update`",
        ] {
            assert_eq!(validate_select(sql), Ok(()), "{sql}");
        }
    }

    #[test]
    fn rejects_writes_and_stacking() {
        assert_eq!(validate_select("  "), Err(GuardError::Empty));
        assert!(matches!(validate_select("PRAGMA table_info(x)"), Err(GuardError::NotSelect(_))));
        assert!(matches!(validate_select("DELETE FROM t"), Err(GuardError::NotSelect(_))));
        assert_eq!(validate_select("SELECT 1; DROP TABLE t"), Err(GuardError::MultipleStatements));
        assert_eq!(
            validate_select("WITH d AS (DELETE FROM t RETURNING *) SELECT * FROM d"),
            Err(GuardError::ForbiddenKeyword("DELETE".into()))
        );
        assert_eq!(
            validate_select("SELECT 1 END"),
            Err(GuardError::ForbiddenKeyword("END".into()))
        );
        assert_eq!(
            validate_select("SELECT * FROM t; REPLACE INTO t VALUES (1)"),
            Err(GuardError::MultipleStatements)
        );
    }

    #[test]
    fn read_only_connection_refuses_writes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sqlite");
        let rw = Connection::open(&path).unwrap();
        rw.execute_batch("CREATE TABLE t(x); INSERT INTO t VALUES (1);").unwrap();
        drop(rw);
        let conn = open_read_only(&path).unwrap();
        assert!(conn.execute("INSERT INTO t VALUES (2)", []).is_err());
        let mut n = 0;
        run_query(&conn, "SELECT x FROM t", &[], Duration::from_secs(1), |_| {
            n += 1;
            true
        })
        .unwrap();
        assert_eq!(n, 1);
    }

    #[test]
    fn missing_and_corrupt_files_fail_to_open() {
        let dir = tempfile::tempdir().unwrap();
        assert!(open_read_only(&dir.path().join("absent.sqlite")).is_err());
        let bad = dir.path().join("bad.sqlite");
        std::fs::write(&bad, b"definitely not a database, just some bytes padding it out").unwrap();
        assert!(open_read_only(&bad).is_err());
    }

    #[test]
    fn long_query_times_out() {
        let conn = Connection::open_in_memory().unwrap();
        let sql = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) \
                   SELECT count(*) FROM c";
        let err = run_query(&conn, sql, &[], Duration::from_millis(50), |_| true).unwrap_err();
        assert_eq!(err, QueryFailure::Timeout(50));
    }
}
