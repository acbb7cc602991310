//! Content-addressed cache of expensive pipeline stages.
//!
//! Each entry lives in `<output>/cache/<hash>/` where the hash is the SHA-256
//! of the JSON encoding of the configuration sections the stage depends on.
//! A `manifest.toml` next to the payload records those sections.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn content_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("cache key serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
    force: bool,
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub dir: PathBuf,
    pub key: String,
    pub stage: String,
}

impl Cache {
    pub fn new(output: &Path, force: bool) -> Self {
        Self { root: output.join("cache"), force }
    }

    /// The entry for `stage` keyed by `sections`.
    pub fn entry<T: Serialize>(&self, stage: &str, sections: &T) -> Entry {
        let key = content_hash(&(stage, sections));
        Entry { dir: self.root.join(&key), key, stage: stage.to_string() }
    }

    /// Whether the entry is complete and may be reused.
    pub fn is_hit(&self, entry: &Entry) -> bool {
        !self.force && entry.dir.join("manifest.toml").is_file()
    }

    /// Writes the payload through `fill`, then the manifest, so a partial
    /// entry is never taken for a hit.
    pub fn store<T: Serialize>(
        &self,
        entry: &Entry,
        sections: &T,
        fill: impl FnOnce(&Path) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        let _ = fs::remove_dir_all(&entry.dir);
        fs::create_dir_all(&entry.dir)?;
        fill(&entry.dir)?;
        let body = toml::to_string(sections).map_err(|e| CliError::Config(e.to_string()))?;
        fs::write(entry.dir.join("manifest.toml"), format!("stage = {:?}\nkey = {:?}\n\n{body}", entry.stage, entry.key))?;
        Ok(())
    }
}
