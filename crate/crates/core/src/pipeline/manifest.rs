use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// What a stage read, what it wrote, and the exact config it ran with.
/// Carries no timestamps so that reruns produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub stage: String,
    /// Digest of the inputs and settings that determine this stage's outputs.
    pub digest: String,
    pub config: PipelineConfig,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the stage directory.
    pub artifacts: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(
        stage: &str,
        digest: &str,
        config: PipelineConfig,
        inputs: Vec<FileDigest>,
        artifacts: Vec<FileDigest>,
    ) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stage: stage.into(),
            digest: digest.into(),
            config,
            inputs,
            artifacts,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifest_round_trips() {
        let cfg = PipelineConfig::from_toml_str("[corpus]\npath = \"c.jsonl\"\n", std::path::Path::new("/d")).unwrap();
        let m = RunManifest::new(
            "prepare",
            "abc",
            cfg,
            vec![FileDigest {
                path: "/d/c.jsonl".into(),
                sha256: sha256_hex(b"x"),
            }],
            vec![],
        );
        assert_eq!(RunManifest::from_json(&m.to_json()).unwrap(), m);
    }
}
