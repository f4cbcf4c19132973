use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use super::tools::{run_tool, ToolContext};
use super::StepSpec;
use crate::error::{Error, Result};

/// What a step execution produced: artifact id → content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: String,
    pub tool: String,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub hash: String,
    pub step: String,
    /// Cache key of the producing step execution.
    pub key: String,
}

/// On-disk layout:
///
/// ```text
/// objects/<content hash>/...   artifact files, immutable
/// steps/<step key>.json        StepRecord of a finished execution
/// index.json                   latest artifact id → ArtifactRecord
/// tmp/                         outputs of running steps
/// ```
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// SHA-256 over a file's bytes, or over every file below a directory with
/// its relative path, in sorted order.
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let meta = fs::metadata(path).map_err(io(path))?;
    if meta.is_file() {
        h.update(b"file");
        h.update(fs::read(path).map_err(io(path))?);
    } else {
        h.update(b"dir");
        for entry in WalkDir::new(path).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::Workflow(e.to_string()))?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(path).expect("below root");
            let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            let rel = rel.join("/");
            let bytes = fs::read(entry.path()).map_err(io(entry.path()))?;
            h.update((rel.len() as u64).to_le_bytes());
            h.update(rel.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    }
    Ok(hex::encode(h.finalize()))
}

impl ArtifactStore {
    pub fn open(root: &Path) -> Result<Self> {
        for sub in ["objects", "steps", "tmp"] {
            let d = root.join(sub);
            fs::create_dir_all(&d).map_err(io(&d))?;
        }
        Ok(ArtifactStore { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn object_path(&self, hash: &str) -> PathBuf {
        self.root.join("objects").join(hash)
    }

    fn step_path(&self, key: &str) -> PathBuf {
        self.root.join("steps").join(format!("{}.json", key))
    }

    /// The record of an earlier execution with this key, if all of its
    /// outputs are still present.
    pub fn lookup(&self, key: &str) -> Result<Option<StepRecord>> {
        let p = self.step_path(key);
        if !p.exists() {
            return Ok(None);
        }
        let rec: StepRecord = serde_json::from_str(&fs::read_to_string(&p).map_err(io(&p))?)?;
        Ok(rec.outputs.values().all(|h| self.object_path(h).is_dir()).then_some(rec))
    }

    /// Runs the step's tool into scratch directories, then moves each output
    /// under its content hash and records the execution.
    pub fn execute(&self, key: &str, step: &StepSpec, mut ctx: ToolContext) -> Result<StepRecord> {
        let scratch = self.root.join("tmp").join(key);
        if scratch.exists() {
            fs::remove_dir_all(&scratch).map_err(io(&scratch))?;
        }
        ctx.outputs = step.outputs.iter().map(|o| scratch.join(o)).collect();
        for d in &ctx.outputs {
            fs::create_dir_all(d).map_err(io(d))?;
        }
        let result = run_tool(&step.tool, &ctx).and_then(|_| {
            let mut outputs = BTreeMap::new();
            for (id, dir) in step.outputs.iter().zip(&ctx.outputs) {
                outputs.insert(id.clone(), self.commit(dir)?);
            }
            Ok(outputs)
        });
        let _ = fs::remove_dir_all(&scratch);
        let rec = StepRecord {
            step: step.name.clone(),
            tool: step.tool.clone(),
            outputs: result?,
        };
        let p = self.step_path(key);
        fs::write(&p, serde_json::to_string_pretty(&rec)?).map_err(io(&p))?;
        Ok(rec)
    }

    fn commit(&self, dir: &Path) -> Result<String> {
        let hash = hash_path(dir)?;
        let dest = self.object_path(&hash);
        if dest.exists() {
            fs::remove_dir_all(dir).map_err(io(dir))?;
        } else {
            fs::rename(dir, &dest).map_err(io(&dest))?;
        }
        Ok(hash)
    }

    pub fn read_index(&self) -> Result<BTreeMap<String, ArtifactRecord>> {
        let p = self.root.join("index.json");
        if !p.exists() {
            return Ok(BTreeMap::new());
        }
        Ok(serde_json::from_str(&fs::read_to_string(&p).map_err(io(&p))?)?)
    }

    pub fn write_index(&self, index: &BTreeMap<String, ArtifactRecord>) -> Result<()> {
        let p = self.root.join("index.json");
        fs::write(&p, serde_json::to_string_pretty(index)? + "\n").map_err(io(&p))
    }

    /// Directory holding the latest version of an artifact.
    pub fn resolve(&self, id: &str) -> Result<PathBuf> {
        let index = self.read_index()?;
        let rec = index
            .get(id)
            .ok_or_else(|| Error::Workflow(format!("artifact `{}` is not in the store", id)))?;
        Ok(self.object_path(&rec.hash))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_hash_depends_on_names_and_contents() {
        let d = tempfile::tempdir().unwrap();
        let a = d.path().join("a");
        fs::create_dir_all(a.join("sub")).unwrap();
        fs::write(a.join("x.txt"), "1").unwrap();
        fs::write(a.join("sub/y.txt"), "2").unwrap();
        let h = hash_path(&a).unwrap();
        assert_eq!(h, hash_path(&a).unwrap());
        fs::write(a.join("sub/y.txt"), "3").unwrap();
        let h2 = hash_path(&a).unwrap();
        assert_ne!(h, h2);
        fs::rename(a.join("x.txt"), a.join("z.txt")).unwrap();
        assert_ne!(h2, hash_path(&a).unwrap());
    }

    #[test]
    fn identical_outputs_share_an_object() {
        let d = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(&d.path().join("s")).unwrap();
        let mut hashes = Vec::new();
        for i in 0..2 {
            let t = d.path().join(format!("t{}", i));
            fs::create_dir(&t).unwrap();
            fs::write(t.join("f"), "same").unwrap();
            hashes.push(store.commit(&t).unwrap());
            assert!(!t.exists());
        }
        assert_eq!(hashes[0], hashes[1]);
        assert!(store.object_path(&hashes[0]).join("f").is_file());
    }
}
