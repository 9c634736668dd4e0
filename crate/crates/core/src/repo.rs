//! Payload repositories resolving `sim://repo/<filename>` URIs for downloads.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::RwLock;

use thiserror::Error;

use crate::uri::is_valid_segment;

pub const REPO_PREFIX: &str = "sim://repo/";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("unsupported source uri {0:?}")]
    BadUri(String),
    #[error("{0} not found in repository")]
    NotFound(String),
    #[error("repository read failed: {0}")]
    Io(String),
}

/// File name addressed by a `sim://repo/` uri.
pub fn repo_file_name(uri: &str) -> Result<&str, FetchError> {
    uri.strip_prefix(REPO_PREFIX)
        .filter(|name| is_valid_segment(name))
        .ok_or_else(|| FetchError::BadUri(uri.to_string()))
}

pub trait PayloadSource: Send + Sync + fmt::Debug {
    fn fetch(&self, uri: &str) -> Result<Vec<u8>, FetchError>;
}

/// In-memory repository, shared by a simulated fleet.
#[derive(Debug, Default)]
pub struct MemoryRepository {
    files: RwLock<BTreeMap<String, Vec<u8>>>,
}

impl MemoryRepository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, file_name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files
            .write()
            .expect("repository lock poisoned")
            .insert(file_name.into(), bytes.into());
    }

    /// `sim://repo/` uri of `file_name`.
    pub fn uri_for(file_name: &str) -> String {
        format!("{REPO_PREFIX}{file_name}")
    }
}

impl PayloadSource for MemoryRepository {
    fn fetch(&self, uri: &str) -> Result<Vec<u8>, FetchError> {
        let name = repo_file_name(uri)?;
        self.files
            .read()
            .expect("repository lock poisoned")
            .get(name)
            .cloned()
            .ok_or_else(|| FetchError::NotFound(name.to_string()))
    }
}

/// Repository backed by a directory of files.
#[derive(Debug, Clone)]
pub struct DirRepository {
    root: PathBuf,
}

impl DirRepository {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirRepository { root: root.into() }
    }
}

impl PayloadSource for DirRepository {
    fn fetch(&self, uri: &str) -> Result<Vec<u8>, FetchError> {
        let name = repo_file_name(uri)?;
        match std::fs::read(self.root.join(name)) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(FetchError::NotFound(name.to_string())),
            Err(e) => Err(FetchError::Io(e.to_string())),
        }
    }
}
