//! Directory-per-dataset artifact store.
//!
//! ```text
//! <root>/datasets/<dataset_id>/
//!     manifest.json        stage, config snapshot, artifact index
//!     lock                 present while a pipeline job writes
//!     raw/<file>           uploaded export files, removed once enriched
//!     objects/<sha256>     artifact bytes, content addressed
//! ```
//!
//! Every file is written to a temporary name and renamed into place, so a
//! crash leaves either the old or the new version. The manifest is written
//! last, which makes a stage durable only once all its objects are.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::DatasetConfig;

const MANIFEST: &str = "manifest.json";
const LOCK: &str = "lock";
const RAW: &str = "raw";
const OBJECTS: &str = "objects";
const TMP_SUFFIX: &str = ".tmp";

/// Pipeline stages, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Uploaded,
    Parsed,
    Enriched,
    Harmonized,
    Embedded,
    LaidOut,
    Ready,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Uploaded, Stage::Parsed, Stage::Enriched, Stage::Harmonized, Stage::Embedded, Stage::LaidOut, Stage::Ready];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Uploaded => "uploaded",
            Stage::Parsed => "parsed",
            Stage::Enriched => "enriched",
            Stage::Harmonized => "harmonized",
            Stage::Embedded => "embedded",
            Stage::LaidOut => "laid_out",
            Stage::Ready => "ready",
        }
    }

    pub fn next(self) -> Option<Stage> {
        Stage::ALL.get(Stage::ALL.iter().position(|s| *s == self)? + 1).copied()
    }

    /// Whether raw export bytes may still exist at this stage.
    pub fn keeps_raw(self) -> bool {
        self <= Stage::Parsed
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("stage `{want}` not complete (dataset is at `{have}`)")]
    StageIncomplete { have: Stage, want: Stage },
    #[error("cannot move from stage `{from}` to `{to}`")]
    InvalidTransition { from: Stage, to: Stage },
    #[error("dataset {0} is locked by another writer")]
    Locked(String),
    #[error("invalid name `{0}`")]
    InvalidName(String),
    #[error("object {0} does not match its hash")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Where an artifact's bytes live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub sha256: String,
    pub bytes: u64,
    /// Stage that produced it; `None` for artifacts added after the pipeline
    /// (extra layouts).
    pub stage: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFile {
    pub name: String,
    pub bytes: u64,
}

/// Persistent record of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_id: String,
    pub created_at: DateTime<Utc>,
    pub stage: Stage,
    pub config: DatasetConfig,
    pub artifacts: BTreeMap<String, ArtifactRef>,
    pub raw_files: Vec<RawFile>,
    pub raw_purged_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GcReport {
    pub objects_removed: usize,
    pub temp_files_removed: usize,
    pub incomplete_datasets_removed: usize,
    pub stale_locks_removed: usize,
}

/// Exclusive write access to one dataset; released on drop.
#[derive(Debug)]
pub struct DatasetLock {
    path: PathBuf,
}

impl Drop for DatasetLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && !name.ends_with(TMP_SUFFIX)
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "._-:".contains(c))
}

/// Maps an uploaded file name onto the characters the store accepts.
pub fn sanitize_name(name: &str) -> String {
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let mut out: String =
        base.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect();
    if out.ends_with(TMP_SUFFIX) {
        out.push('_');
    }
    if !valid_name(&out) {
        out = format!("upload_{out}");
    }
    out
}

/// Writes via a temporary sibling and rename, syncing the data first.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().ok_or_else(|| io::Error::other("path has no parent"))?;
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        "{}.{}{TMP_SUFFIX}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("file"),
        uuid::Uuid::new_v4().simple()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

#[cfg(target_os = "linux")]
fn process_alive(pid: u32) -> bool {
    Path::new("/proc").join(pid.to_string()).exists()
}

#[cfg(not(target_os = "linux"))]
fn process_alive(_pid: u32) -> bool {
    true
}

/// File store rooted at one directory.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("datasets"))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dataset_dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_name(id) {
            return Err(StoreError::InvalidName(id.to_string()));
        }
        Ok(self.root.join("datasets").join(id))
    }

    /// Path of the dataset's directory (whether or not it exists).
    pub fn dataset_path(&self, id: &str) -> Result<PathBuf, StoreError> {
        self.dataset_dir(id)
    }

    /// Creates an empty dataset at stage `uploaded` with a fresh id.
    pub fn create_dataset(&self, config: &DatasetConfig) -> Result<String, StoreError> {
        let id = uuid::Uuid::new_v4().to_string();
        let dir = self.dataset_dir(&id)?;
        fs::create_dir_all(dir.join(RAW))?;
        fs::create_dir_all(dir.join(OBJECTS))?;
        let manifest = Manifest {
            dataset_id: id.clone(),
            created_at: Utc::now(),
            stage: Stage::Uploaded,
            config: config.clone(),
            artifacts: BTreeMap::new(),
            raw_files: Vec::new(),
            raw_purged_at: None,
        };
        self.write_manifest(&manifest)?;
        Ok(id)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.dataset_dir(id).is_ok_and(|d| d.join(MANIFEST).is_file())
    }

    pub fn manifest(&self, id: &str) -> Result<Manifest, StoreError> {
        let path = self.dataset_dir(id)?.join(MANIFEST);
        match fs::read(&path) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(format!("dataset {id}"))),
            Err(e) => Err(e.into()),
        }
    }

    fn write_manifest(&self, m: &Manifest) -> Result<(), StoreError> {
        let path = self.dataset_dir(&m.dataset_id)?.join(MANIFEST);
        write_atomic(&path, &serde_json::to_vec_pretty(m)?)?;
        Ok(())
    }

    /// Ids of every dataset with a manifest, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("datasets"))? {
            let entry = entry?;
            if let Some(name) = entry.file_name().to_str() {
                if entry.path().join(MANIFEST).is_file() {
                    out.push(name.to_string());
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Takes the dataset's writer lock. A lock left by a process that no
    /// longer exists is taken over.
    pub fn lock(&self, id: &str) -> Result<DatasetLock, StoreError> {
        let dir = self.dataset_dir(id)?;
        if !dir.join(MANIFEST).is_file() {
            return Err(StoreError::NotFound(format!("dataset {id}")));
        }
        let path = dir.join(LOCK);
        for _ in 0..2 {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    write!(f, "{}", std::process::id())?;
                    return Ok(DatasetLock { path });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).ok().and_then(|s| s.trim().parse::<u32>().ok());
                    match holder {
                        Some(pid) if !process_alive(pid) => {
                            fs::remove_file(&path)?;
                        }
                        _ => return Err(StoreError::Locked(id.to_string())),
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(StoreError::Locked(id.to_string()))
    }

    /// Saves an uploaded file. Only allowed before raw files are purged.
    pub fn put_raw(&self, id: &str, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        if !valid_name(name) {
            return Err(StoreError::InvalidName(name.to_string()));
        }
        let mut m = self.manifest(id)?;
        if !m.stage.keeps_raw() || m.raw_purged_at.is_some() {
            return Err(StoreError::InvalidTransition { from: m.stage, to: Stage::Uploaded });
        }
        write_atomic(&self.dataset_dir(id)?.join(RAW).join(name), bytes)?;
        m.raw_files.retain(|f| f.name != name);
        m.raw_files.push(RawFile { name: name.to_string(), bytes: bytes.len() as u64 });
        self.write_manifest(&m)
    }

    pub fn get_raw(&self, id: &str, name: &str) -> Result<Vec<u8>, StoreError> {
        if !valid_name(name) {
            return Err(StoreError::InvalidName(name.to_string()));
        }
        let m = self.manifest(id)?;
        if m.raw_purged_at.is_some() || !m.raw_files.iter().any(|f| f.name == name) {
            return Err(StoreError::NotFound(format!("raw file {name}")));
        }
        match fs::read(self.dataset_dir(id)?.join(RAW).join(name)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(format!("raw file {name}"))),
            Err(e) => Err(e.into()),
        }
    }

    /// Every uploaded file, in upload order; empty once purged.
    pub fn raw_files(&self, id: &str) -> Result<Vec<(String, Vec<u8>)>, StoreError> {
        let m = self.manifest(id)?;
        if m.raw_purged_at.is_some() {
            return Ok(Vec::new());
        }
        m.raw_files.iter().map(|f| Ok((f.name.clone(), self.get_raw(id, &f.name)?))).collect()
    }

    /// Deletes every uploaded file. Idempotent.
    pub fn purge_raw(&self, id: &str) -> Result<(), StoreError> {
        let mut m = self.manifest(id)?;
        let dir = self.dataset_dir(id)?.join(RAW);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        if m.raw_purged_at.is_none() {
            m.raw_purged_at = Some(Utc::now());
            self.write_manifest(&m)?;
        }
        Ok(())
    }

    fn write_object(&self, id: &str, bytes: &[u8]) -> Result<String, StoreError> {
        let hash = sha256_hex(bytes);
        let path = self.dataset_dir(id)?.join(OBJECTS).join(&hash);
        if !path.is_file() {
            write_atomic(&path, bytes)?;
        }
        Ok(hash)
    }

    fn read_object(&self, id: &str, hash: &str) -> Result<Vec<u8>, StoreError> {
        let bytes = fs::read(self.dataset_dir(id)?.join(OBJECTS).join(hash))
            .map_err(|e| if e.kind() == io::ErrorKind::NotFound { StoreError::NotFound(format!("object {hash}")) } else { e.into() })?;
        if sha256_hex(&bytes) != hash {
            return Err(StoreError::Corrupt(hash.to_string()));
        }
        Ok(bytes)
    }

    /// Records `stage` as complete with its artifacts. Stages only move
    /// forward one step at a time. Reaching `enriched` or later deletes the
    /// raw upload first.
    pub fn put_stage(&self, id: &str, stage: Stage, artifacts: &[(&str, &[u8])]) -> Result<(), StoreError> {
        let mut m = self.manifest(id)?;
        if m.stage.next() != Some(stage) {
            return Err(StoreError::InvalidTransition { from: m.stage, to: stage });
        }
        for (name, _) in artifacts {
            if !valid_name(name) {
                return Err(StoreError::InvalidName(name.to_string()));
            }
        }
        if !stage.keeps_raw() {
            self.purge_raw(id)?;
            m = self.manifest(id)?;
        }
        for (name, bytes) in artifacts {
            let sha256 = self.write_object(id, bytes)?;
            m.artifacts.insert(name.to_string(), ArtifactRef { sha256, bytes: bytes.len() as u64, stage: Some(stage) });
        }
        m.stage = stage;
        self.write_manifest(&m)
    }

    /// Reads an artifact written by `stage`.
    pub fn get_stage(&self, id: &str, stage: Stage, name: &str) -> Result<Vec<u8>, StoreError> {
        let m = self.manifest(id)?;
        if m.stage < stage {
            return Err(StoreError::StageIncomplete { have: m.stage, want: stage });
        }
        match m.artifacts.get(name) {
            Some(a) if a.stage == Some(stage) => self.read_object(id, &a.sha256),
            _ => Err(StoreError::NotFound(format!("artifact {name} of stage {stage}"))),
        }
    }

    /// Adds or replaces an artifact outside the stage sequence.
    pub fn put_artifact(&self, id: &str, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        if !valid_name(name) {
            return Err(StoreError::InvalidName(name.to_string()));
        }
        let mut m = self.manifest(id)?;
        let sha256 = self.write_object(id, bytes)?;
        m.artifacts.insert(name.to_string(), ArtifactRef { sha256, bytes: bytes.len() as u64, stage: None });
        self.write_manifest(&m)
    }

    pub fn get_artifact(&self, id: &str, name: &str) -> Result<Vec<u8>, StoreError> {
        let m = self.manifest(id)?;
        let a = m.artifacts.get(name).ok_or_else(|| StoreError::NotFound(format!("artifact {name}")))?;
        self.read_object(id, &a.sha256)
    }

    /// Forgets an artifact added with [`Store::put_artifact`] and deletes its
    /// object unless another artifact shares it. Missing names are ignored.
    pub fn remove_artifact(&self, id: &str, name: &str) -> Result<(), StoreError> {
        let mut m = self.manifest(id)?;
        let Some(a) = m.artifacts.remove(name) else { return Ok(()) };
        self.write_manifest(&m)?;
        if !m.artifacts.values().any(|o| o.sha256 == a.sha256) {
            let path = self.dataset_dir(id)?.join(OBJECTS).join(&a.sha256);
            if let Err(e) = fs::remove_file(path) {
                if e.kind() != io::ErrorKind::NotFound {
                    return Err(e.into());
                }
            }
        }
        Ok(())
    }

    /// Removes the dataset and everything under it.
    pub fn delete(&self, id: &str) -> Result<(), StoreError> {
        let dir = self.dataset_dir(id)?;
        if !dir.exists() {
            return Err(StoreError::NotFound(format!("dataset {id}")));
        }
        fs::remove_dir_all(&dir)?;
        Ok(())
    }

    /// Removes unreferenced objects, leftover temporary files, stale locks
    /// and dataset directories that never got a manifest.
    pub fn gc(&self) -> Result<GcReport, StoreError> {
        let mut report = GcReport::default();
        for entry in fs::read_dir(self.root.join("datasets"))? {
            let dir = entry?.path();
            if !dir.is_dir() {
                continue;
            }
            let Some(id) = dir.file_name().and_then(|n| n.to_str()).map(str::to_string) else { continue };
            let lock = dir.join(LOCK);
            let live_lock = match fs::read_to_string(&lock) {
                Ok(s) => match s.trim().parse::<u32>() {
                    Ok(pid) if process_alive(pid) => true,
                    _ => {
                        fs::remove_file(&lock)?;
                        report.stale_locks_removed += 1;
                        false
                    }
                },
                Err(_) => false,
            };
            if live_lock {
                continue;
            }
            let m = match self.manifest(&id) {
                Ok(m) => m,
                Err(StoreError::NotFound(_)) | Err(StoreError::InvalidName(_)) => {
                    fs::remove_dir_all(&dir)?;
                    report.incomplete_datasets_removed += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let referenced: BTreeSet<&str> = m.artifacts.values().map(|a| a.sha256.as_str()).collect();
            for sub in [dir.clone(), dir.join(OBJECTS), dir.join(RAW)] {
                let Ok(entries) = fs::read_dir(&sub) else { continue };
                for e in entries {
                    let path = e?.path();
                    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                    if name.ends_with(TMP_SUFFIX) {
                        fs::remove_file(&path)?;
                        report.temp_files_removed += 1;
                    } else if sub.ends_with(OBJECTS) && !referenced.contains(name.as_str()) {
                        fs::remove_file(&path)?;
                        report.objects_removed += 1;
                    }
                }
            }
            if !m.stage.keeps_raw() && dir.join(RAW).exists() {
                fs::remove_dir_all(dir.join(RAW))?;
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path()).unwrap();
        (dir, s)
    }

    #[test]
    fn write_then_read_is_identical() {
        let (_d, s) = store();
        let id = s.create_dataset(&DatasetConfig::default()).unwrap();
        s.put_stage(&id, Stage::Parsed, &[("events.json", b"[1,2,3]")]).unwrap();
        assert_eq!(s.get_stage(&id, Stage::Parsed, "events.json").unwrap(), b"[1,2,3]");
    }

    #[test]
    fn future_stage_is_incomplete() {
        let (_d, s) = store();
        let id = s.create_dataset(&DatasetConfig::default()).unwrap();
        assert!(matches!(
            s.get_stage(&id, Stage::Embedded, "vectors.bin"),
            Err(StoreError::StageIncomplete { have: Stage::Uploaded, want: Stage::Embedded })
        ));
    }

    #[test]
    fn stages_only_move_forward_one_step() {
        let (_d, s) = store();
        let id = s.create_dataset(&DatasetConfig::default()).unwrap();
        assert!(matches!(s.put_stage(&id, Stage::Enriched, &[]), Err(StoreError::InvalidTransition { .. })));
        s.put_stage(&id, Stage::Parsed, &[]).unwrap();
        assert!(matches!(s.put_stage(&id, Stage::Parsed, &[]), Err(StoreError::InvalidTransition { .. })));
    }

    #[test]
    fn raw_removed_when_enriched() {
        let (_d, s) = store();
        let id = s.create_dataset(&DatasetConfig::default()).unwrap();
        s.put_raw(&id, "watch-history.json", b"secret").unwrap();
        s.put_stage(&id, Stage::Parsed, &[]).unwrap();
        assert_eq!(s.get_raw(&id, "watch-history.json").unwrap(), b"secret");
        s.put_stage(&id, Stage::Enriched, &[]).unwrap();
        assert!(matches!(s.get_raw(&id, "watch-history.json"), Err(StoreError::NotFound(_))));
        assert!(!s.dataset_path(&id).unwrap().join(RAW).exists());
        assert!(s.put_raw(&id, "again.json", b"x").is_err());
    }

    #[test]
    fn delete_removes_everything() {
        let (_d, s) = store();
        let id = s.create_dataset(&DatasetConfig::default()).unwrap();
        s.put_raw(&id, "a.csv", b"Title,Date").unwrap();
        s.delete(&id).unwrap();
        assert!(!s.dataset_path(&id).unwrap().exists());
        assert!(matches!(s.manifest(&id), Err(StoreError::NotFound(_))));
        assert!(s.list().unwrap().is_empty());
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let (_d, s) = store();
        let id = s.create_dataset(&DatasetConfig::default()).unwrap();
        let l = s.lock(&id).unwrap();
        assert!(matches!(s.lock(&id), Err(StoreError::Locked(_))));
        drop(l);
        s.lock(&id).unwrap();
    }

    #[test]
    fn stale_lock_is_taken_over() {
        let (_d, s) = store();
        let id = s.create_dataset(&DatasetConfig::default()).unwrap();
        fs::write(s.dataset_path(&id).unwrap().join(LOCK), "4294967295").unwrap();
        s.lock(&id).unwrap();
    }

    #[test]
    fn gc_removes_orphans_and_keeps_referenced() {
        let (_d, s) = store();
        let id = s.create_dataset(&DatasetConfig::default()).unwrap();
        s.put_stage(&id, Stage::Parsed, &[("events.json", b"[]")]).unwrap();
        let dir = s.dataset_path(&id).unwrap();
        fs::write(dir.join(OBJECTS).join("deadbeef"), b"orphan").unwrap();
        fs::write(dir.join("manifest.json.x.tmp"), b"partial").unwrap();
        fs::create_dir_all(s.root().join("datasets").join("half-created")).unwrap();
        let r = s.gc().unwrap();
        assert_eq!((r.objects_removed, r.temp_files_removed, r.incomplete_datasets_removed), (1, 1, 1));
        assert_eq!(s.get_stage(&id, Stage::Parsed, "events.json").unwrap(), b"[]");
    }

    #[test]
    fn corrupt_object_detected() {
        let (_d, s) = store();
        let id = s.create_dataset(&DatasetConfig::default()).unwrap();
        s.put_stage(&id, Stage::Parsed, &[("events.json", b"[]")]).unwrap();
        let hash = s.manifest(&id).unwrap().artifacts["events.json"].sha256.clone();
        fs::write(s.dataset_path(&id).unwrap().join(OBJECTS).join(&hash), b"[9]").unwrap();
        assert!(matches!(s.get_stage(&id, Stage::Parsed, "events.json"), Err(StoreError::Corrupt(_))));
    }

    #[test]
    fn upload_names_are_sanitized() {
        assert_eq!(sanitize_name("Takeout/YouTube/watch history.html"), "watch_history.html");
        assert_eq!(sanitize_name(".."), "upload_..");
        assert!(valid_name(&sanitize_name("x.tmp")));
    }

    #[test]
    fn names_cannot_escape() {
        let (_d, s) = store();
        assert!(matches!(s.manifest("../x"), Err(StoreError::InvalidName(_))));
        let id = s.create_dataset(&DatasetConfig::default()).unwrap();
        assert!(matches!(s.put_raw(&id, "../../etc", b""), Err(StoreError::InvalidName(_))));
    }
}
