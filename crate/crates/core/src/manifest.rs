//! Append-only run manifests that tie every artifact to its inputs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, sha256_bytes, sha256_file};

pub const MANIFEST_FILE: &str = "manifests.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Path -> sha256 at the time the command ran.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
    pub tool_version: String,
}

pub fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Hash of a config value's canonical JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let json = serde_json::to_vec(config).map_err(|e| Error::Format(e.to_string()))?;
    Ok(sha256_bytes(&json))
}

/// Collects inputs and outputs while a command runs.
#[derive(Debug)]
pub struct ManifestBuilder {
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, args: Vec<String>, config_hash: String, seeds: Vec<u64>) -> Self {
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                args,
                config_hash,
                seeds,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                started_at: now_secs(),
                finished_at: 0,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        for file in files_under(path)? {
            let hash = sha256_file(&file)?;
            self.manifest.inputs.insert(file.display().to_string(), hash);
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        for file in files_under(path)? {
            let hash = sha256_file(&file)?;
            self.manifest.outputs.insert(file.display().to_string(), hash);
        }
        Ok(())
    }

    pub fn inputs(&self) -> &BTreeMap<String, String> {
        &self.manifest.inputs
    }

    /// Stamp the finish time and append to `<work_dir>/manifests.jsonl`.
    pub fn finish(mut self, work_dir: &Path) -> Result<RunManifest> {
        self.manifest.finished_at = now_secs();
        append(work_dir, &self.manifest)?;
        Ok(self.manifest)
    }
}

/// Regular files at or below `path`, sorted.
fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.canonicalize().map_err(|e| Error::io(path, e))?]);
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    let mut out = out
        .into_iter()
        .map(|p| p.canonicalize().map_err(|e| Error::io(&p, e)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

pub fn append(work_dir: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(work_dir).map_err(|e| Error::io(work_dir, e))?;
    let path = work_dir.join(MANIFEST_FILE);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let line = serde_json::to_string(manifest).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
}

pub fn read_all(work_dir: &Path) -> Result<Vec<RunManifest>> {
    let path = work_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_jsonl(&path)
}

/// Check recorded inputs that live under `work_dir` against the manifests:
/// each must have been produced by an earlier command, with the same hash
/// as its most recent recording.
pub fn check_upstream(work_dir: &Path, inputs: &BTreeMap<String, String>) -> Result<()> {
    let manifests = read_all(work_dir)?;
    let root = work_dir.canonicalize().map_err(|e| Error::io(work_dir, e))?;
    for (path, hash) in inputs {
        if !Path::new(path).starts_with(&root) {
            continue;
        }
        let recorded = manifests.iter().rev().find_map(|m| m.outputs.get(path));
        match recorded {
            None => {
                return Err(Error::UpstreamStale(format!("{path} has no producing manifest")));
            }
            Some(h) if h != hash => {
                return Err(Error::UpstreamStale(format!("{path} was modified after it was written")));
            }
            Some(_) => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_and_detects_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let work = dir.path();
        let out = work.join("data/a.jsonl");
        std::fs::create_dir_all(out.parent().unwrap()).unwrap();
        std::fs::write(&out, "one\n").unwrap();

        let mut b = ManifestBuilder::new("build-dataset", vec![], "h".into(), vec![40]);
        b.output(&work.join("data")).unwrap();
        b.finish(work).unwrap();

        let mut next = ManifestBuilder::new("train-generator", vec![], "h".into(), vec![40]);
        next.input(&out).unwrap();
        check_upstream(work, next.inputs()).unwrap();

        std::fs::write(&out, "two\n").unwrap();
        let mut stale = ManifestBuilder::new("train-generator", vec![], "h".into(), vec![40]);
        stale.input(&out).unwrap();
        assert!(matches!(check_upstream(work, stale.inputs()), Err(Error::UpstreamStale(_))));

        let orphan = work.join("orphan.jsonl");
        std::fs::write(&orphan, "x").unwrap();
        let mut o = ManifestBuilder::new("decode", vec![], "h".into(), vec![]);
        o.input(&orphan).unwrap();
        assert!(matches!(check_upstream(work, o.inputs()), Err(Error::UpstreamStale(_))));

        assert_eq!(read_all(work).unwrap().len(), 1);
        let mut missing = ManifestBuilder::new("decode", vec![], "h".into(), vec![]);
        assert!(matches!(missing.input(&work.join("nope")), Err(Error::MissingInput(_))));
    }
}
