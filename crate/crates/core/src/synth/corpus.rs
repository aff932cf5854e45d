//! Loading a corpus from a manifest and its per-user files.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::schema::{CorpusManifest, UserBundle, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { path: PathBuf, found: u32 },
}

/// A manifest plus its users, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub users: Vec<UserBundle>,
}

impl Corpus {
    /// Wraps in-memory bundles; ids default to `user{N}` when missing.
    pub fn from_bundles(manifest: CorpusManifest, mut users: Vec<UserBundle>) -> Self {
        for (i, user) in users.iter_mut().enumerate() {
            user.user_id.get_or_insert_with(|| format!("user{}", i + 1));
        }
        Self { manifest, users }
    }
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_owned(), source })
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let manifest: CorpusManifest = serde_json::from_str(&read(path)?)
        .map_err(|source| CorpusError::Json { path: path.to_owned(), source })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(CorpusError::SchemaVersion {
            path: path.to_owned(),
            found: manifest.schema_version,
        });
    }
    Ok(manifest)
}

pub fn load_user(path: &Path) -> Result<UserBundle, CorpusError> {
    serde_json::from_str(&read(path)?)
        .map_err(|source| CorpusError::Json { path: path.to_owned(), source })
}

/// Reads the manifest and every user file it lists. A user without an
/// explicit id takes its file stem.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus, CorpusError> {
    let manifest = load_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut users = Vec::with_capacity(manifest.users.len());
    for rel in &manifest.users {
        let path = dir.join(rel);
        let mut user = load_user(&path)?;
        if user.user_id.is_none() {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
            user.user_id = Some(stem.unwrap_or_else(|| rel.clone()));
        }
        users.push(user);
    }
    Ok(Corpus { manifest, users })
}
