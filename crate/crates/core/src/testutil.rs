//! Fixture databases for unit tests, materialized from SQL scripts.

use std::path::{Path, PathBuf};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Builds `<tmp>/<db_id>/<db_id>.sqlite` plus `database_description/` for
/// every fixture database.
pub fn fixture_root() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let dbs = fixture_dir().join("dbs");
    for entry in std::fs::read_dir(&dbs).unwrap() {
        let src = entry.unwrap().path();
        let db_id = src.file_name().unwrap().to_string_lossy().into_owned();
        let dest = tmp.path().join(&db_id);
        std::fs::create_dir_all(dest.join("database_description")).unwrap();
        let sql = std::fs::read_to_string(src.join("schema.sql")).unwrap();
        rusqlite::Connection::open(dest.join(format!("{db_id}.sqlite")))
            .unwrap()
            .execute_batch(&sql)
            .unwrap();
        if let Ok(descs) = std::fs::read_dir(src.join("database_description")) {
            for d in descs {
                let d = d.unwrap().path();
                std::fs::copy(&d, dest.join("database_description").join(d.file_name().unwrap())).unwrap();
            }
        }
    }
    tmp
}

/// Loaded and profiled catalog of one fixture database.
pub fn profiled(root: &Path, db_id: &str) -> crate::SchemaCatalog {
    let dir = root.join(db_id);
    let (cat, _) = crate::catalog::load_catalog(
        &dir.join(format!("{db_id}.sqlite")),
        Some(&dir.join("database_description")),
    )
    .unwrap();
    crate::catalog::profile_values(cat, crate::catalog::DEFAULT_DISTINCT_CAP).unwrap().0
}
