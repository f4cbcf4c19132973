//! Declarative workflows: named steps run in-process tools over artifacts
//! kept in a content-addressed store. A step whose tool, configuration and
//! input contents are unchanged is skipped.

mod store;
mod tools;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use store::{hash_path, ArtifactRecord, ArtifactStore, StepRecord};
pub use tools::{load_plan, run_tool, ToolContext, TOOLS, TOOL_VERSION};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub name: String,
    pub tool: String,
    #[serde(default)]
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub config: toml::Table,
}

/// ```toml
/// name = "kws"
/// seed = 0
///
/// [external]
/// audio = "data/speech_commands"
///
/// [[step]]
/// name = "ingest"
/// tool = "ingest"
/// inputs = ["audio"]
/// outputs = ["dataset"]
/// config = { train = 0.8, validation = 0.1, test = 0.1 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSpec {
    pub name: String,
    /// Default seed for every step that does not set its own.
    #[serde(default)]
    pub seed: u64,
    /// Artifacts supplied from outside the store, by path. Relative paths
    /// resolve against `base_dir`.
    #[serde(default)]
    pub external: BTreeMap<String, PathBuf>,
    #[serde(rename = "step", default)]
    pub steps: Vec<StepSpec>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl WorkflowSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Workflow(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml(&text)?;
        spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(spec)
    }

    pub fn external_path(&self, id: &str) -> Option<PathBuf> {
        self.external.get(id).map(|p| self.base_dir.join(p))
    }

    /// Checks tools, arities and artifact wiring, and returns step indices in
    /// dependency order (ties keep declaration order).
    pub fn validate(&self) -> Result<Vec<usize>> {
        let mut names = BTreeSet::new();
        let mut producer: HashMap<&str, usize> = HashMap::new();
        for (i, s) in self.steps.iter().enumerate() {
            if !names.insert(s.name.as_str()) {
                return Err(Error::Workflow(format!("duplicate step name `{}`", s.name)));
            }
            tools::check_arity(s)?;
            for out in &s.outputs {
                if self.external.contains_key(out) || producer.insert(out, i).is_some() {
                    return Err(Error::Workflow(format!("artifact `{}` is produced more than once", out)));
                }
            }
        }
        let mut deps: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.steps.len()];
        for (i, s) in self.steps.iter().enumerate() {
            for input in &s.inputs {
                match producer.get(input.as_str()) {
                    Some(&p) => {
                        deps[i].insert(p);
                    }
                    None if self.external.contains_key(input) => {}
                    None => {
                        return Err(Error::Workflow(format!(
                            "step `{}` reads `{}`, which no step produces and is not external",
                            s.name, input
                        )))
                    }
                }
            }
        }
        let mut order = Vec::with_capacity(self.steps.len());
        let mut done = vec![false; self.steps.len()];
        while order.len() < self.steps.len() {
            let next = (0..self.steps.len()).find(|&i| !done[i] && deps[i].iter().all(|d| done[*d]));
            match next {
                Some(i) => {
                    done[i] = true;
                    order.push(i);
                }
                None => {
                    let stuck: Vec<&str> = (0..self.steps.len())
                        .filter(|i| !done[*i])
                        .map(|i| self.steps[i].name.as_str())
                        .collect();
                    return Err(Error::Workflow(format!("dependency cycle among steps {}", stuck.join(", "))));
                }
            }
        }
        Ok(order)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFailure {
    pub step: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<StepFailure>,
    /// Not run because an upstream step failed.
    pub blocked: Vec<String>,
}

impl RunSummary {
    pub fn is_success(&self) -> bool {
        self.failed.is_empty() && self.blocked.is_empty()
    }
}

/// Cache key of one step execution.
pub fn step_key(step: &StepSpec, seed: u64, input_hashes: &[String]) -> Result<String> {
    let mut h = Sha256::new();
    for part in [
        step.tool.as_str(),
        TOOL_VERSION,
        &serde_json::to_string(&step.config)?,
        &seed.to_string(),
        &step.outputs.join(","),
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    for ih in input_hashes {
        h.update(ih.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

fn step_seed(step: &StepSpec, default: u64) -> u64 {
    step.config
        .get("seed")
        .and_then(|v| v.as_integer())
        .map(|s| s as u64)
        .unwrap_or(default)
}

/// Runs every step in dependency order. A failing step blocks everything
/// downstream of it; unrelated steps still run. Steps execute one at a time
/// so benchmark measurements never overlap.
pub fn run_workflow(spec: &WorkflowSpec, store: &ArtifactStore) -> Result<RunSummary> {
    let order = spec.validate()?;
    let mut hashes: HashMap<String, String> = HashMap::new();
    let mut paths: HashMap<String, PathBuf> = HashMap::new();
    for id in spec.external.keys() {
        let p = spec.external_path(id).expect("listed");
        hashes.insert(id.clone(), hash_path(&p)?);
        paths.insert(id.clone(), p);
    }

    let mut summary = RunSummary::default();
    let mut index = store.read_index()?;
    for i in order {
        let step = &spec.steps[i];
        if step.inputs.iter().any(|id| !hashes.contains_key(id)) {
            log::warn!("step `{}` blocked by an upstream failure", step.name);
            summary.blocked.push(step.name.clone());
            continue;
        }
        let input_hashes: Vec<String> = step.inputs.iter().map(|id| hashes[id].clone()).collect();
        let seed = step_seed(step, spec.seed);
        let key = step_key(step, seed, &input_hashes)?;

        let record = match store.lookup(&key)? {
            Some(rec) => {
                log::info!("step `{}` is up to date", step.name);
                summary.skipped.push(step.name.clone());
                rec
            }
            None => {
                log::info!("running step `{}` ({})", step.name, step.tool);
                let ctx = ToolContext {
                    inputs: step.inputs.iter().map(|id| paths[id].clone()).collect(),
                    outputs: Vec::new(),
                    config: step.config.clone(),
                    seed,
                };
                match store.execute(&key, step, ctx) {
                    Ok(rec) => {
                        summary.executed.push(step.name.clone());
                        rec
                    }
                    Err(e) => {
                        log::error!("step `{}` failed: {}", step.name, e);
                        summary.failed.push(StepFailure {
                            step: step.name.clone(),
                            error: e.to_string(),
                        });
                        continue;
                    }
                }
            }
        };
        for (id, hash) in &record.outputs {
            paths.insert(id.clone(), store.object_path(hash));
            hashes.insert(id.clone(), hash.clone());
            index.insert(
                id.clone(),
                ArtifactRecord {
                    hash: hash.clone(),
                    step: step.name.clone(),
                    key: key.clone(),
                },
            );
        }
    }
    store.write_index(&index)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(text: &str) -> WorkflowSpec {
        WorkflowSpec::from_toml(text).unwrap()
    }

    #[test]
    fn cycle_rejected_before_execution() {
        let s = spec(
            r#"
            name = "loop"
            [[step]]
            name = "a"
            tool = "compile"
            inputs = ["y"]
            outputs = ["x"]
            [[step]]
            name = "b"
            tool = "compile"
            inputs = ["x"]
            outputs = ["y"]
            "#,
        );
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("cycle"), "{}", err);
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        assert!(run_workflow(&s, &store).is_err());
        assert!(store.read_index().unwrap().is_empty());
    }

    #[test]
    fn unknown_tool_and_dangling_input_rejected() {
        let s = spec("name = \"x\"\n[[step]]\nname = \"a\"\ntool = \"train\"\noutputs = [\"m\"]\n");
        assert!(s.validate().unwrap_err().to_string().contains("unknown tool"));
        let s = spec("name = \"x\"\n[[step]]\nname = \"a\"\ntool = \"compile\"\ninputs = [\"m\"]\noutputs = [\"p\"]\n");
        assert!(s.validate().unwrap_err().to_string().contains("not external"));
    }

    #[test]
    fn order_follows_dependencies() {
        let s = spec(
            r#"
            name = "o"
            [[step]]
            name = "bench"
            tool = "bench"
            inputs = ["plan"]
            outputs = ["b"]
            [[step]]
            name = "compile"
            tool = "compile"
            inputs = ["model"]
            outputs = ["plan"]
            [[step]]
            name = "build"
            tool = "build-net"
            outputs = ["model"]
            "#,
        );
        assert_eq!(s.validate().unwrap(), vec![2, 1, 0]);
    }

    #[test]
    fn step_key_tracks_config_and_inputs() {
        let s = spec("name = \"k\"\n[[step]]\nname = \"a\"\ntool = \"bench\"\ninputs = [\"p\"]\noutputs = [\"b\"]\nconfig = { runs = 10 }\n");
        let mut step = s.steps[0].clone();
        let k = step_key(&step, 0, &["h1".into()]).unwrap();
        assert_eq!(k, step_key(&step, 0, &["h1".into()]).unwrap());
        assert_ne!(k, step_key(&step, 0, &["h2".into()]).unwrap());
        assert_ne!(k, step_key(&step, 1, &["h1".into()]).unwrap());
        step.config.insert("runs".into(), toml::Value::Integer(5));
        assert_ne!(k, step_key(&step, 0, &["h1".into()]).unwrap());
    }

    #[test]
    fn failure_blocks_dependents_but_not_siblings() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(&dir.path().join("store")).unwrap();
        let s = spec(
            r#"
            name = "f"
            [[step]]
            name = "bad"
            tool = "build-net"
            outputs = ["m1"]
            config = { preset = "no_such_net" }
            [[step]]
            name = "after_bad"
            tool = "compile"
            inputs = ["m1"]
            outputs = ["p1"]
            [[step]]
            name = "good"
            tool = "build-net"
            outputs = ["m2"]
            config = { preset = "kws9" }
            "#,
        );
        let sum = run_workflow(&s, &store).unwrap();
        assert_eq!(sum.failed.len(), 1);
        assert_eq!(sum.failed[0].step, "bad");
        assert_eq!(sum.blocked, vec!["after_bad"]);
        assert_eq!(sum.executed, vec!["good"]);
        assert!(!sum.is_success());
    }
}
