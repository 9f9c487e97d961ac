mod common;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use evgen_core::commands::*;
use evgen_core::config::PipelineConfig;
use evgen_core::evaluator::AuditCategory;
use evgen_core::gateway::{Cassette, CassetteMode, Gateway};
use evgen_core::generator::{is_join_clause, EvidenceRecord};

fn e2e() -> PathBuf {
    common::fixtures().join("e2e")
}

fn generate_args(db_root: &Path, out: &Path, revised: bool) -> GenerateArgs {
    GenerateArgs {
        questions: e2e().join("dev.json"),
        train: common::fixtures().join("questions/train_pool.json"),
        db_root: db_root.to_path_buf(),
        out: out.to_path_buf(),
        revised,
        catalogs: None,
        transcript: None,
        embedding_cache: None,
    }
}

fn replay(config_name: &str, db_root: &Path, out: &Path, revised: bool) -> GenerateSummary {
    let config = PipelineConfig::load(&e2e().join(format!("{config_name}.toml"))).unwrap();
    let gateway = build_gateway(&config).unwrap();
    cmd_generate(&generate_args(db_root, out, revised), &config, &gateway, &load_prompts(&config).unwrap()).unwrap()
}

fn two_db_root() -> tempfile::TempDir {
    let all = common::db_root();
    let tmp = tempfile::tempdir().unwrap();
    for db in ["financial", "toxicology"] {
        let dest = tmp.path().join(db).join("database_description");
        std::fs::create_dir_all(&dest).unwrap();
        std::fs::copy(all.path().join(db).join(format!("{db}.sqlite")), tmp.path().join(db).join(format!("{db}.sqlite")))
            .unwrap();
        for f in std::fs::read_dir(all.path().join(db).join("database_description")).unwrap() {
            let f = f.unwrap().path();
            std::fs::copy(&f, dest.join(f.file_name().unwrap())).unwrap();
        }
    }
    tmp
}

#[test]
fn profile_writes_one_cache_per_database_and_is_idempotent() {
    let root = two_db_root();
    let out = tempfile::tempdir().unwrap();
    let config = PipelineConfig::default();
    let s = cmd_profile(root.path(), out.path(), &config, None).unwrap();
    assert_eq!(s.catalogs, ["financial", "toxicology"]);
    assert!(s.errors.is_empty());
    let first: Vec<Vec<u8>> =
        s.catalogs.iter().map(|db| std::fs::read(cache_file(out.path(), db)).unwrap()).collect();
    cmd_profile(root.path(), out.path(), &config, None).unwrap();
    let second: Vec<Vec<u8>> =
        s.catalogs.iter().map(|db| std::fs::read(cache_file(out.path(), db)).unwrap()).collect();
    assert_eq!(first, second);
    assert!(out.path().join(PROFILE_REPORT).is_file());
}

#[test]
fn profile_records_a_corrupt_database_and_continues() {
    let root = two_db_root();
    std::fs::write(root.path().join("toxicology/toxicology.sqlite"), b"not a database at all, just bytes").unwrap();
    let out = tempfile::tempdir().unwrap();
    let s = cmd_profile(root.path(), out.path(), &PipelineConfig::default(), None).unwrap();
    assert_eq!(s.catalogs, ["financial"]);
    assert_eq!(s.errors.len(), 1);
    assert_eq!(s.errors[0].db_id, "toxicology");
    assert!(cache_file(out.path(), "financial").is_file());
    assert!(!cache_file(out.path(), "toxicology").exists());
}

#[test]
fn profile_leaves_database_files_untouched() {
    let root = two_db_root();
    let db = root.path().join("financial/financial.sqlite");
    let before = std::fs::read(&db).unwrap();
    let out = tempfile::tempdir().unwrap();
    cmd_profile(root.path(), out.path(), &PipelineConfig::default(), None).unwrap();
    assert_eq!(std::fs::read(&db).unwrap(), before);
    let names: Vec<_> = std::fs::read_dir(root.path().join("financial")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2, "{names:?}");
}

#[test]
fn describe_writes_generated_descriptions_outside_the_database_root() {
    let root = two_db_root();
    std::fs::remove_dir_all(root.path().join("toxicology/database_description")).unwrap();
    let out = tempfile::tempdir().unwrap();
    let chat = Arc::new(common::ScriptedChat::default());
    let gateway = Gateway::builder().chat(chat.clone()).build();
    let prompts = evgen_core::prompts::PromptAssets::default();
    let s = cmd_profile(root.path(), out.path(), &PipelineConfig::default(), Some((&gateway, &prompts))).unwrap();
    assert_eq!(s.catalogs.len(), 2, "{:?}", s.errors);
    assert!(out.path().join("toxicology/database_description").is_dir());
    assert!(!out.path().join("financial/database_description").exists());
    assert!(!root.path().join("toxicology/database_description").exists());
}

#[test]
fn replayed_generation_matches_goldens() {
    let root = common::db_root();
    let out = tempfile::tempdir().unwrap();
    for (config, revised, golden) in [
        ("full_schema", false, "golden_full_schema.json"),
        ("full_schema", true, "golden_revised.json"),
        ("summarized", false, "golden_summarized.json"),
        ("summarized_1000", false, "golden_summarized_1000.json"),
    ] {
        let path = out.path().join(golden);
        let s = replay(config, root.path(), &path, revised);
        assert_eq!(s, GenerateSummary { records: 5, failures: 0 });
        assert_eq!(std::fs::read_to_string(&path).unwrap(), std::fs::read_to_string(e2e().join(golden)).unwrap(), "{golden}");
    }
}

#[test]
fn small_budget_keeps_every_prompt_within_budget() {
    let root = common::db_root();
    let out = tempfile::tempdir().unwrap();
    let path = out.path().join("o.json");
    replay("summarized_1000", root.path(), &path, false);
    let records: Vec<EvidenceRecord> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(records.len(), 5);
    assert!(records.iter().all(|r| r.prompt_tokens > 0 && r.prompt_tokens <= 1000));
}

#[test]
fn revised_output_has_no_join_clauses() {
    let root = common::db_root();
    let out = tempfile::tempdir().unwrap();
    let path = out.path().join("o.json");
    replay("full_schema", root.path(), &path, true);
    let records: Vec<EvidenceRecord> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(records.iter().all(|r| r.clauses.iter().all(|c| !is_join_clause(c))));
    assert!(records.iter().all(|r| !r.evidence.to_lowercase().contains("join on")));
}

#[test]
fn invalid_config_fails_before_any_model_call() {
    let root = common::db_root();
    let out = tempfile::tempdir().unwrap();
    let config = PipelineConfig { parallelism: 0, ..PipelineConfig::default() };
    let chat = Arc::new(common::ScriptedChat::default());
    let gateway = Gateway::builder().chat(chat.clone()).build();
    let err = cmd_generate(
        &generate_args(root.path(), &out.path().join("o.json"), false),
        &config,
        &gateway,
        &Default::default(),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(chat.requests.lock().unwrap().is_empty());
    assert_eq!(gateway.embed_requests(), 0);
}

#[test]
fn replay_misses_are_recorded_inline_and_the_run_completes() {
    let root = common::db_root();
    let out = tempfile::tempdir().unwrap();
    let config = PipelineConfig::default();
    let gateway = Gateway::builder().cassette(Cassette::in_memory(CassetteMode::Replay)).build();
    let path = out.path().join("o.json");
    let s = cmd_generate(&generate_args(root.path(), &path, false), &config, &gateway, &Default::default()).unwrap();
    assert_eq!(s, GenerateSummary { records: 5, failures: 5 });
    let records: Vec<EvidenceRecord> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(records.iter().all(|r| r.error.as_deref().is_some_and(|e| e.contains("replay"))));
    assert_eq!(gateway.transport_calls(), 0);
}

#[test]
fn transcript_and_embedding_cache_are_written() {
    let root = common::db_root();
    let out = tempfile::tempdir().unwrap();
    let config = PipelineConfig::load(&e2e().join("full_schema.toml")).unwrap();
    let gateway = build_gateway(&config).unwrap();
    let mut args = generate_args(root.path(), &out.path().join("o.json"), false);
    args.transcript = Some(out.path().join("probes.jsonl"));
    args.embedding_cache = Some(out.path().join("emb.jsonl"));
    cmd_generate(&args, &config, &gateway, &Default::default()).unwrap();
    let transcript = std::fs::read_to_string(out.path().join("probes.jsonl")).unwrap();
    assert!(transcript.lines().count() >= 5);
    assert_eq!(std::fs::read_to_string(out.path().join("emb.jsonl")).unwrap().lines().count(), 12);
}

fn evaluate_args(db_root: &Path, out_dir: &Path) -> EvaluateArgs {
    EvaluateArgs {
        questions: common::fixtures().join("ex/dev.json"),
        predictions: common::fixtures().join("ex/predictions.json"),
        db_root: db_root.to_path_buf(),
        evidence: EvidenceSource::None,
        timing: false,
        out_dir: out_dir.to_path_buf(),
        catalogs: None,
        condition: "fixture".into(),
        timeout: Duration::from_secs(30),
    }
}

#[test]
fn evaluate_reports_seventy_percent_without_ves() {
    let root = common::db_root();
    let out = tempfile::tempdir().unwrap();
    let report = cmd_evaluate(&evaluate_args(root.path(), out.path()), &PipelineConfig::default()).unwrap();
    assert_eq!(report.matches, 7);
    assert_eq!(report.ex_percent, 70.0);
    assert_eq!(report.ves_percent, None);
    let table = std::fs::read_to_string(out.path().join(TABLE_FILE)).unwrap();
    assert!(table.contains("70.00"));
    assert!(!table.contains("VES"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert!(summary.get("ves_percent").is_none());
    assert!(summary.get("audit").is_none());
    assert_eq!(std::fs::read_to_string(out.path().join(PER_QUESTION_FILE)).unwrap().lines().count(), 10);
}

#[test]
fn evaluate_with_timing_reports_ves() {
    let root = common::db_root();
    let out = tempfile::tempdir().unwrap();
    let args = EvaluateArgs { timing: true, ..evaluate_args(root.path(), out.path()) };
    let report = cmd_evaluate(&args, &PipelineConfig::default()).unwrap();
    let ves = report.ves_percent.unwrap();
    assert!(ves > 0.0);
    assert!(std::fs::read_to_string(out.path().join(TABLE_FILE)).unwrap().contains("VES"));
}

#[test]
fn evaluate_with_evidence_includes_the_audit_histogram() {
    let root = common::db_root();
    let out = tempfile::tempdir().unwrap();
    let args = EvaluateArgs { evidence: EvidenceSource::Gold, ..evaluate_args(root.path(), out.path()) };
    let report = cmd_evaluate(&args, &PipelineConfig::default()).unwrap();
    let audit = report.audit.unwrap();
    assert_eq!(audit.missing_evidence, 10);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert!(summary["audit"]["histogram"].is_object());
}

#[test]
fn evaluate_lists_orphan_predictions() {
    let root = common::db_root();
    let out = tempfile::tempdir().unwrap();
    let preds = out.path().join("preds.json");
    std::fs::write(&preds, r#"{"200": "SELECT 1", "999": "SELECT 2"}"#).unwrap();
    let args = EvaluateArgs { predictions: preds, ..evaluate_args(root.path(), out.path()) };
    let err = cmd_evaluate(&args, &PipelineConfig::default()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("999"), "{err}");
}

#[test]
fn audit_finds_seeded_defects_and_the_missing_rate() {
    let root = common::db_root();
    let out = tempfile::tempdir().unwrap();
    let args = AuditArgs {
        questions: common::fixtures().join("audit/dev.json"),
        evidence: EvidenceSource::Gold,
        db_root: root.path().to_path_buf(),
        out: out.path().join("audit.json"),
        catalogs: None,
    };
    let s = cmd_audit(&args, &PipelineConfig::default()).unwrap();
    assert_eq!(s.n_questions, 15);
    assert_eq!(s.missing_evidence, 1);
    assert!((s.missing_evidence_rate - 100.0 / 15.0).abs() < 1e-9);
    for c in [
        AuditCategory::CaseSensitivity,
        AuditCategory::UnnecessaryInformation,
        AuditCategory::UnknownSchemaRef,
        AuditCategory::InvalidValueMapping,
    ] {
        assert!(s.histogram[&c] > 0, "{c:?}");
    }
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&args.out).unwrap()).unwrap();
    assert_eq!(written["n_questions"], 15);
}

#[test]
fn audit_reads_generated_evidence_files() {
    let root = common::db_root();
    let out = tempfile::tempdir().unwrap();
    let args = AuditArgs {
        questions: e2e().join("dev.json"),
        evidence: EvidenceSource::File(e2e().join("golden_revised.json")),
        db_root: root.path().to_path_buf(),
        out: out.path().join("audit.json"),
        catalogs: None,
    };
    let s = cmd_audit(&args, &PipelineConfig::default()).unwrap();
    assert_eq!(s.missing_evidence, 0);
    assert_eq!(s.histogram[&AuditCategory::UnknownSchemaRef], 0);
}

#[test]
fn audit_without_evidence_is_a_configuration_error() {
    let root = common::db_root();
    let args = AuditArgs {
        questions: e2e().join("dev.json"),
        evidence: EvidenceSource::None,
        db_root: root.path().to_path_buf(),
        out: root.path().join("a.json"),
        catalogs: None,
    };
    assert_eq!(cmd_audit(&args, &PipelineConfig::default()).unwrap_err().exit_code(), 2);
}

#[test]
fn cached_catalogs_are_reused() {
    let root = common::db_root();
    let cache = tempfile::tempdir().unwrap();
    cmd_profile(root.path(), cache.path(), &PipelineConfig::default(), None).unwrap();
    let out = tempfile::tempdir().unwrap();
    let config = PipelineConfig::load(&e2e().join("full_schema.toml")).unwrap();
    let gateway = build_gateway(&config).unwrap();
    let mut args = generate_args(root.path(), &out.path().join("o.json"), false);
    args.catalogs = Some(cache.path().to_path_buf());
    cmd_generate(&args, &config, &gateway, &Default::default()).unwrap();
    assert_eq!(
        std::fs::read_to_string(out.path().join("o.json")).unwrap(),
        std::fs::read_to_string(e2e().join("golden_full_schema.json")).unwrap()
    );
}
