use std::path::{Path, PathBuf};

use edgenn::audio::write_synthetic_dataset;
use edgenn::workflow::{run_workflow, ArtifactStore, WorkflowSpec};
use serde_json::Value;

fn example() -> WorkflowSpec {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../workflows/kws.toml");
    WorkflowSpec::load(&path).unwrap()
}

fn setup(dir: &Path) -> (WorkflowSpec, ArtifactStore) {
    let audio = dir.join("audio");
    write_synthetic_dataset(&audio, &["yes", "no", "up", "down"], 10, 3).unwrap();
    let mut spec = example();
    spec.external.insert("audio".into(), audio);
    let store = ArtifactStore::open(&dir.join("store")).unwrap();
    (spec, store)
}

fn json(store: &ArtifactStore, id: &str, file: &str) -> Value {
    let p: PathBuf = store.resolve(id).unwrap().join(file);
    serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap()
}

fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v
}

#[test]
fn example_workflow_runs_caches_and_reruns_only_dependents() {
    let dir = tempfile::tempdir().unwrap();
    let (mut spec, store) = setup(dir.path());

    let first = run_workflow(&spec, &store).unwrap();
    assert!(first.is_success(), "{:?}", first);
    assert_eq!(first.executed.len(), spec.steps.len());

    let bench = json(&store, "bench", "bench.json");
    let keys: Vec<&str> = bench.as_object().unwrap().keys().map(String::as_str).collect();
    for k in ["total", "layers", "runs", "warmups", "assignment"] {
        assert!(keys.contains(&k), "missing {}", k);
    }
    assert_eq!(bench["runs"], 10);
    let log = json(&store, "assignment", "search_log.json");
    let entries = log.as_array().unwrap();
    assert_eq!(entries.len(), 60);
    let mut ks: Vec<&String> = entries[0].as_object().unwrap().keys().collect();
    ks.sort();
    assert_eq!(ks, ["episode", "epsilon", "latency"]);
    let pareto = json(&store, "pareto", "pareto.json");
    let names: Vec<&str> = pareto["frontier"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(sorted(names.iter().map(|s| s.to_string()).collect()), ["kws1", "kws3", "kws9"]);
    let quant = json(&store, "plan_int8", "quant.json");
    assert!((quant["ratio"].as_f64().unwrap() - 0.25).abs() < 0.01);
    let stats = json(&store, "model", "stats.json");
    assert_eq!(stats["name"], "kws9");

    let second = run_workflow(&spec, &store).unwrap();
    assert!(second.executed.is_empty(), "{:?}", second.executed);
    assert_eq!(second.skipped.len(), spec.steps.len());

    let bench_step = spec.steps.iter_mut().find(|s| s.name == "bench").unwrap();
    bench_step.config.insert("runs".into(), toml::Value::Integer(5));
    let third = run_workflow(&spec, &store).unwrap();
    assert_eq!(third.executed, vec!["bench"]);
    assert_eq!(json(&store, "bench", "bench.json")["runs"], 5);

    let build = spec.steps.iter_mut().find(|s| s.name == "build-net").unwrap();
    build.config.insert("preset".into(), toml::Value::String("kws3".into()));
    let fourth = run_workflow(&spec, &store).unwrap();
    assert_eq!(
        sorted(fourth.executed.clone()),
        sorted(["build-net", "compile", "quantize", "search", "bench", "bench-int8"].map(String::from).to_vec())
    );
    assert_eq!(sorted(fourth.skipped), sorted(["ingest", "features", "pareto"].map(String::from).to_vec()));
}

#[test]
fn changed_input_file_invalidates_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let (mut spec, store) = setup(dir.path());
    spec.steps.retain(|s| ["ingest", "features"].contains(&s.name.as_str()));
    assert_eq!(run_workflow(&spec, &store).unwrap().executed.len(), 2);
    write_synthetic_dataset(&dir.path().join("audio"), &["left"], 10, 4).unwrap();
    let again = run_workflow(&spec, &store).unwrap();
    assert_eq!(again.executed, vec!["ingest", "features"]);
}
