//! Pipeline configuration, read from TOML.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::catalog::DEFAULT_DISTINCT_CAP;
use crate::gateway::{CassetteMode, Stage, DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL};
use crate::prober::ProbeConfig;
use crate::retriever::DEFAULT_FEW_SHOT;
use crate::summarizer::{Granularity, MIN_BUDGET};

pub const DEFAULT_TOKEN_BUDGET: usize = 8192;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    #[default]
    FullSchema,
    Summarized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Bird,
    /// No description files are read.
    Spider,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviserKind {
    #[default]
    Pattern,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Models {
    pub keywords: String,
    pub summarize: String,
    pub generate: String,
    pub revise: String,
    pub describe: String,
    /// Remote embedding model; unset selects the offline hashed embedder.
    pub embed: Option<String>,
}

impl Default for Models {
    fn default() -> Self {
        Self {
            keywords: "gpt-4o-mini".into(),
            summarize: "gpt-4o-mini".into(),
            generate: "gpt-4o".into(),
            revise: "gpt-4o-mini".into(),
            describe: "gpt-4o-mini".into(),
            embed: None,
        }
    }
}

impl Models {
    pub fn for_stage(&self, stage: Stage) -> &str {
        match stage {
            Stage::Keywords => &self.keywords,
            Stage::Summarize => &self.summarize,
            Stage::Generate => &self.generate,
            Stage::Revise => &self.revise,
            Stage::Describe => &self.describe,
            Stage::Embed => self.embed.as_deref().unwrap_or(""),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Caps {
    pub distinct: usize,
    pub probe_rows: usize,
    pub probe_count: usize,
    pub few_shot: usize,
    pub edit_k: usize,
    pub edit_scan: usize,
}

impl Default for Caps {
    fn default() -> Self {
        let p = ProbeConfig::default();
        Self {
            distinct: DEFAULT_DISTINCT_CAP,
            probe_rows: p.row_cap,
            probe_count: p.max_probes,
            few_shot: DEFAULT_FEW_SHOT,
            edit_k: p.edit_k,
            edit_scan: p.edit_scan_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CassetteConfig {
    pub path: PathBuf,
    #[serde(default = "default_cassette_mode", with = "mode_str")]
    pub mode: CassetteMode,
}

fn default_cassette_mode() -> CassetteMode {
    CassetteMode::Replay
}

mod mode_str {
    use super::CassetteMode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &CassetteMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&m.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CassetteMode, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub base_url: String,
    /// Name of the variable holding the API key; the key itself is never
    /// stored in configuration.
    pub api_key_env: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self { base_url: DEFAULT_BASE_URL.into(), api_key_env: DEFAULT_API_KEY_ENV.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    pub models: Models,
    /// Prompt budget in estimated tokens; used only in summarized mode.
    pub token_budget: Option<usize>,
    pub caps: Caps,
    pub cassette: Option<CassetteConfig>,
    pub parallelism: usize,
    pub provider: ProviderConfig,
    pub probe_timeout_ms: u64,
    pub layout: Layout,
    pub granularity: Granularity,
    pub reviser: ReviserKind,
    /// Overrides for the bundled prompt templates.
    pub prompts_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: PipelineMode::default(),
            models: Models::default(),
            token_budget: None,
            caps: Caps::default(),
            cassette: None,
            parallelism: 4,
            provider: ProviderConfig::default(),
            probe_timeout_ms: ProbeConfig::default().timeout_ms,
            layout: Layout::default(),
            granularity: Granularity::default(),
            reviser: ReviserKind::default(),
            prompts_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.into(), message: e.to_string() })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(c) = &mut cfg.cassette {
            if c.path.is_relative() {
                c.path = base.join(&c.path);
            }
        }
        if let Some(p) = &mut cfg.prompts_dir {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Budget in effect: summarized mode defaults to [`DEFAULT_TOKEN_BUDGET`],
    /// full-schema mode has none.
    pub fn effective_budget(&self) -> Option<usize> {
        match self.mode {
            PipelineMode::FullSchema => None,
            PipelineMode::Summarized => Some(self.token_budget.unwrap_or(DEFAULT_TOKEN_BUDGET)),
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            row_cap: self.caps.probe_rows,
            timeout_ms: self.probe_timeout_ms,
            max_probes: self.caps.probe_count,
            edit_k: self.caps.edit_k,
            edit_scan_limit: self.caps.edit_scan,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        let caps = [
            ("caps.distinct", self.caps.distinct),
            ("caps.probe_rows", self.caps.probe_rows),
            ("caps.probe_count", self.caps.probe_count),
            ("caps.few_shot", self.caps.few_shot),
            ("caps.edit_k", self.caps.edit_k),
            ("caps.edit_scan", self.caps.edit_scan),
        ];
        if let Some((name, _)) = caps.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be at least 1"));
        }
        if self.probe_timeout_ms == 0 {
            return bad("probe_timeout_ms must be positive".into());
        }
        if let (PipelineMode::Summarized, Some(b)) = (self.mode, self.effective_budget()) {
            if b < MIN_BUDGET {
                return bad(format!("token_budget {b} is below the minimum of {MIN_BUDGET}"));
            }
        }
        let models: BTreeMap<&str, &str> = BTreeMap::from([
            ("keywords", self.models.keywords.as_str()),
            ("summarize", self.models.summarize.as_str()),
            ("generate", self.models.generate.as_str()),
            ("revise", self.models.revise.as_str()),
            ("describe", self.models.describe.as_str()),
        ]);
        if let Some((stage, _)) = models.iter().find(|(_, m)| m.trim().is_empty()) {
            return bad(format!("models.{stage} is empty"));
        }
        if self.models.embed.as_deref().is_some_and(|m| m.trim().is_empty()) {
            return bad("models.embed is empty".into());
        }
        if self.provider.api_key_env.trim().is_empty() {
            return bad("provider.api_key_env is empty".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.caps.few_shot, 5);
        assert_eq!(c.effective_budget(), None);
    }

    #[test]
    fn summarized_defaults_budget() {
        let c = PipelineConfig::from_toml("mode = \"summarized\"", Path::new("x")).unwrap();
        assert_eq!(c.effective_budget(), Some(8192));
        let c = PipelineConfig::from_toml("mode = \"summarized\"\ntoken_budget = 1000", Path::new("x")).unwrap();
        assert_eq!(c.effective_budget(), Some(1000));
        c.validate().unwrap();
    }

    #[test]
    fn full_toml_parses() {
        let text = r#"
            mode = "summarized"
            token_budget = 4096
            parallelism = 2
            layout = "spider"
            granularity = "table"
            reviser = "llm"
            [models]
            generate = "deepseek-r1"
            embed = "text-embedding-3-small"
            [caps]
            distinct = 30
            few_shot = 3
            [cassette]
            path = "c.tsv"
            mode = "record"
            [provider]
            base_url = "http://localhost:8000/v1"
            api_key_env = "LOCAL_KEY"
        "#;
        let c = PipelineConfig::from_toml(text, Path::new("x")).unwrap();
        c.validate().unwrap();
        assert_eq!(c.models.generate, "deepseek-r1");
        assert_eq!(c.models.keywords, "gpt-4o-mini");
        assert_eq!(c.caps.distinct, 30);
        assert_eq!(c.caps.probe_rows, 10);
        assert_eq!(c.cassette.unwrap().mode, CassetteMode::Record);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "parallelism = 0",
            "[caps]\nfew_shot = 0",
            "mode = \"summarized\"\ntoken_budget = 100",
            "[models]\ngenerate = \"\"",
        ] {
            let c = PipelineConfig::from_toml(text, Path::new("x")).unwrap();
            assert!(c.validate().is_err(), "{text}");
        }
        for text in ["mode = \"fast\"", "unknown = 1", "[cassette]\npath = \"x\"\nmode = \"sometimes\""] {
            assert!(PipelineConfig::from_toml(text, Path::new("x")).is_err(), "{text}");
        }
    }
}
