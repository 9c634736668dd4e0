//! On-disk server state.
//!
//! Layout under the state directory:
//! `registry.json`, `jobs.json`, `trees/<device-id>.xml`, `sessions/<session-id>.jsonl`.
//! Every file is replaced atomically.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use scm_forge_core::session::Transcript;
use scm_forge_core::tree::ManagementTree;
use scm_forge_core::tree_doc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{DeploymentJob, DeviceRecord};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("schema violation in {path}: {detail}")]
    SchemaViolation { path: PathBuf, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn schema(path: &Path, detail: impl ToString) -> PersistError {
    PersistError::SchemaViolation {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    version: u32,
    devices: Vec<DeviceRecord>,
}

#[derive(Serialize, Deserialize)]
struct JobsFile {
    version: u32,
    next_job: u64,
    jobs: Vec<DeploymentJob>,
}

/// Everything read back from a state directory.
#[derive(Debug, Default)]
pub struct Restored {
    pub devices: Vec<DeviceRecord>,
    pub jobs: Vec<DeploymentJob>,
    pub next_job: u64,
    pub trees: BTreeMap<String, ManagementTree>,
    pub sessions: BTreeMap<String, Transcript>,
}

#[derive(Debug, Clone)]
pub struct StateDir {
    root: PathBuf,
}

impl StateDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        StateDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn ensure(&self, sub: &str) -> Result<PathBuf, PersistError> {
        let dir = self.root.join(sub);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(dir)
    }

    fn write(&self, dir: &Path, name: &str, bytes: &[u8]) -> Result<(), PersistError> {
        let path = dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(&path))?;
        tmp.write_all(bytes).map_err(io_err(&path))?;
        tmp.as_file().sync_all().map_err(io_err(&path))?;
        tmp.persist(&path).map_err(|e| PersistError::Io {
            path: path.clone(),
            source: e.error,
        })?;
        Ok(())
    }

    pub fn write_registry(&self, devices: &[DeviceRecord]) -> Result<(), PersistError> {
        let dir = self.ensure("")?;
        let file = RegistryFile {
            version: SCHEMA_VERSION,
            devices: devices.to_vec(),
        };
        self.write(
            &dir,
            "registry.json",
            &serde_json::to_vec_pretty(&file).expect("registry serializes"),
        )
    }

    pub fn write_jobs(&self, jobs: &[DeploymentJob], next_job: u64) -> Result<(), PersistError> {
        let dir = self.ensure("")?;
        let file = JobsFile {
            version: SCHEMA_VERSION,
            next_job,
            jobs: jobs.to_vec(),
        };
        self.write(&dir, "jobs.json", &serde_json::to_vec(&file).expect("jobs serialize"))
    }

    pub fn write_tree(&self, device_id: &str, doc: &[u8]) -> Result<(), PersistError> {
        let dir = self.ensure("trees")?;
        self.write(&dir, &format!("{device_id}.xml"), doc)
    }

    pub fn write_session(&self, session_id: &str, t: &Transcript) -> Result<(), PersistError> {
        let dir = self.ensure("sessions")?;
        self.write(&dir, &format!("{session_id}.jsonl"), t.to_jsonl().as_bytes())
    }

    /// Reads the whole state. A missing directory or file reads as empty.
    pub fn read(&self) -> Result<Restored, PersistError> {
        let mut out = Restored {
            next_job: 1,
            ..Restored::default()
        };
        let path = self.root.join("registry.json");
        if let Some(text) = read_optional(&path)? {
            let file: RegistryFile = serde_json::from_slice(&text).map_err(|e| schema(&path, e))?;
            check_version(&path, file.version)?;
            out.devices = file.devices;
        }
        let path = self.root.join("jobs.json");
        if let Some(text) = read_optional(&path)? {
            let file: JobsFile = serde_json::from_slice(&text).map_err(|e| schema(&path, e))?;
            check_version(&path, file.version)?;
            out.jobs = file.jobs;
            out.next_job = file.next_job;
        }
        for (stem, path) in list(&self.root.join("trees"), "xml")? {
            let bytes = std::fs::read(&path).map_err(io_err(&path))?;
            let tree = tree_doc::load(&bytes).map_err(|e| schema(&path, e))?;
            if tree.device_id() != stem {
                return Err(schema(&path, format!("document is for device {:?}", tree.device_id())));
            }
            out.trees.insert(stem, tree);
        }
        for (stem, path) in list(&self.root.join("sessions"), "jsonl")? {
            let text = std::fs::read_to_string(&path).map_err(|e| schema(&path, e))?;
            let t = Transcript::from_jsonl(&text).map_err(|e| schema(&path, e))?;
            if t.close.is_none() {
                return Err(schema(&path, "transcript has no close record"));
            }
            out.sessions.insert(stem, t);
        }
        Ok(out)
    }
}

fn check_version(path: &Path, version: u32) -> Result<(), PersistError> {
    if version != SCHEMA_VERSION {
        return Err(schema(path, format!("unsupported version {version}")));
    }
    Ok(())
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>, PersistError> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(Some(bytes)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

/// (file stem, path) of each file in `dir` with extension `ext`, sorted.
fn list(dir: &Path, ext: &str) -> Result<Vec<(String, PathBuf)>, PersistError> {
    let entries = match std::fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(dir)(e)),
    };
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.push((stem.to_string(), path.clone()));
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Address;

    #[test]
    fn empty_dir_reads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let r = StateDir::new(dir.path().join("missing")).read().unwrap();
        assert!(r.devices.is_empty() && r.jobs.is_empty() && r.trees.is_empty());
        assert_eq!(r.next_job, 1);
    }

    #[test]
    fn registry_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = StateDir::new(dir.path());
        let recs = vec![DeviceRecord::new("SIM-0001", Address::Memory, "SIM-0001", "k")];
        s.write_registry(&recs).unwrap();
        assert_eq!(s.read().unwrap().devices, recs);
    }

    #[test]
    fn corrupt_tree_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let s = StateDir::new(dir.path());
        s.write_tree("SIM-0001", b"<MgmtTree device-id=\"SIM-0001\"><Node")
            .unwrap();
        match s.read() {
            Err(PersistError::SchemaViolation { path, .. }) => assert!(path.ends_with("trees/SIM-0001.xml")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_registry_version() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("registry.json"), r#"{"version":9,"devices":[]}"#).unwrap();
        let err = StateDir::new(dir.path()).read().unwrap_err();
        assert!(err.to_string().contains("registry.json"), "{err}");
    }
}
