//! Instruction templates. Built-in copies live under `assets/prompts/`; a
//! directory with files of the same names overrides them one by one.

use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptAssets {
    pub keywords: String,
    pub summarize: String,
    pub evidence_full_schema: String,
    pub evidence_summarized: String,
    pub describe: String,
    pub revise: String,
}

impl Default for PromptAssets {
    fn default() -> Self {
        Self {
            keywords: include_str!("../assets/prompts/keywords.txt").to_string(),
            summarize: include_str!("../assets/prompts/summarize.txt").to_string(),
            evidence_full_schema: include_str!("../assets/prompts/evidence_full_schema.txt").to_string(),
            evidence_summarized: include_str!("../assets/prompts/evidence_summarized.txt").to_string(),
            describe: include_str!("../assets/prompts/describe.txt").to_string(),
            revise: include_str!("../assets/prompts/revise.txt").to_string(),
        }
    }
}

impl PromptAssets {
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut assets = Self::default();
        for (name, slot) in assets.slots_mut() {
            let path = dir.join(format!("{name}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(text) => *slot = text,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(e),
            }
        }
        Ok(assets)
    }

    fn slots_mut(&mut self) -> [(&'static str, &mut String); 6] {
        [
            ("keywords", &mut self.keywords),
            ("summarize", &mut self.summarize),
            ("evidence_full_schema", &mut self.evidence_full_schema),
            ("evidence_summarized", &mut self.evidence_summarized),
            ("describe", &mut self.describe),
            ("revise", &mut self.revise),
        ]
    }

    /// Hex SHA-256 of every template, in a fixed order.
    pub fn digests(&self) -> Vec<(&'static str, String)> {
        let mut copy = self.clone();
        copy.slots_mut()
            .into_iter()
            .map(|(name, text)| (name, hex::encode(Sha256::digest(text.as_bytes()))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_overrides_individual_templates() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("keywords.txt"), "custom {question}").unwrap();
        let assets = PromptAssets::from_dir(dir.path()).unwrap();
        assert_eq!(assets.keywords, "custom {question}");
        assert_eq!(assets.describe, PromptAssets::default().describe);
        assert_ne!(assets.digests()[0], PromptAssets::default().digests()[0]);
    }
}
