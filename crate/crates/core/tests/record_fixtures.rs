//! Regenerates the end-to-end cassettes and golden evidence files from the
//! scripted model. Run with `cargo test -p evgen-core --test record_fixtures -- --ignored`
//! after changing prompts or fixtures.

mod common;

use std::sync::Arc;

use evgen_core::commands::{cmd_generate, load_prompts, GenerateArgs};
use evgen_core::config::PipelineConfig;
use evgen_core::gateway::{Cassette, CassetteMode, Gateway};

#[test]
#[ignore]
fn record_end_to_end_fixtures() {
    let root = common::db_root();
    let e2e = common::fixtures().join("e2e");
    let runs = [
        ("full_schema", false, "golden_full_schema.json"),
        ("full_schema", true, "golden_revised.json"),
        ("summarized", false, "golden_summarized.json"),
        ("summarized_1000", false, "golden_summarized_1000.json"),
    ];
    for (name, revised, golden) in runs {
        let mut config = PipelineConfig::load(&e2e.join(format!("{name}.toml"))).unwrap();
        let cassette = config.cassette.as_mut().unwrap();
        if !revised {
            let _ = std::fs::remove_file(&cassette.path);
        }
        cassette.mode = CassetteMode::Record;
        let gateway = Gateway::builder()
            .chat(Arc::new(common::ScriptedChat::from_file(&e2e.join("script.json"))))
            .cassette(Cassette::open(&cassette.path, CassetteMode::Record).unwrap())
            .build();
        let args = GenerateArgs {
            questions: e2e.join("dev.json"),
            train: common::fixtures().join("questions/train_pool.json"),
            db_root: root.path().to_path_buf(),
            out: e2e.join(golden),
            revised,
            catalogs: None,
            transcript: None,
            embedding_cache: None,
        };
        let summary = cmd_generate(&args, &config, &gateway, &load_prompts(&config).unwrap()).unwrap();
        assert_eq!(summary.failures, 0);
    }
}
