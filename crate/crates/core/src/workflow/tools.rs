//! The in-process tools a workflow step can run. Each reads its input
//! artifact directories positionally and writes into its output directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::StepSpec;
use crate::audio::{
    extract_features, import_dataset, read_feature_file, write_feature_file, DatasetManifest, MfccConfig, Partition,
    Split,
};
use crate::benchmark::{benchmark, latency_measure, BenchConfig};
use crate::error::{Error, Result};
use crate::graph::{count_flops, count_params, load_model, model_size_bytes, save_model, QuantScheme};
use crate::kernels::{Assignment, Registry};
use crate::netbuilder::random::random_input;
use crate::netbuilder::{build_network, pareto_frontier, preset, ArchSpec, Candidate};
use crate::passes::{compile, CompileOptions, ExecutablePlan};
use crate::qsdnn::{search, SearchConfig, SearchSpace};
use crate::quantizer::{calibrate, quantize, sensitivity_report, weight_payload_bytes};
use crate::report::emit_report;
use crate::tensor::Tensor;
use crate::Graph;

/// Part of every step's cache key, so a new engine version invalidates old
/// results.
pub const TOOL_VERSION: &str = concat!("edgenn-", env!("CARGO_PKG_VERSION"));

/// Tool name with the accepted number of inputs.
pub const TOOLS: [(&str, usize, usize); 8] = [
    ("ingest", 1, 1),
    ("features", 1, 1),
    ("build-net", 0, 1),
    ("compile", 1, 1),
    ("quantize", 1, 2),
    ("search", 1, 2),
    ("bench", 1, 2),
    ("pareto", 0, 0),
];

pub(super) fn check_arity(step: &StepSpec) -> Result<()> {
    let (_, lo, hi) = TOOLS
        .iter()
        .find(|(n, _, _)| *n == step.tool)
        .ok_or_else(|| Error::Workflow(format!("step `{}`: unknown tool `{}`", step.name, step.tool)))?;
    if step.inputs.len() < *lo || step.inputs.len() > *hi {
        return Err(Error::Workflow(format!(
            "step `{}`: tool `{}` takes {}..={} inputs, got {}",
            step.name,
            step.tool,
            lo,
            hi,
            step.inputs.len()
        )));
    }
    if step.outputs.len() != 1 {
        return Err(Error::Workflow(format!("step `{}` must declare exactly one output", step.name)));
    }
    Ok(())
}

pub struct ToolContext {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config: toml::Table,
    pub seed: u64,
}

impl ToolContext {
    fn config<T: DeserializeOwned>(&self) -> Result<T> {
        let mut t = self.config.clone();
        t.remove("seed");
        toml::Value::Table(t)
            .try_into()
            .map_err(|e| Error::Workflow(format!("bad tool config: {}", e)))
    }

    fn out(&self, file: &str) -> PathBuf {
        self.outputs[0].join(file)
    }
}

pub fn run_tool(name: &str, ctx: &ToolContext) -> Result<()> {
    match name {
        "ingest" => ingest(ctx),
        "features" => features(ctx),
        "build-net" => build_net(ctx),
        "compile" => compile_tool(ctx),
        "quantize" => quantize_tool(ctx),
        "search" => search_tool(ctx),
        "bench" => bench_tool(ctx),
        "pareto" => pareto_tool(ctx),
        other => Err(Error::Workflow(format!("unknown tool `{}`", other))),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct IngestConfig {
    train: f64,
    validation: f64,
    test: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        let s = Split::default();
        IngestConfig {
            train: s.train,
            validation: s.validation,
            test: s.test,
        }
    }
}

/// `manifest.csv` plus `root.txt`, the absolute dataset directory.
fn ingest(ctx: &ToolContext) -> Result<()> {
    let c: IngestConfig = ctx.config()?;
    let root = ctx.inputs[0].canonicalize().map_err(|e| Error::io(&ctx.inputs[0], e))?;
    let m = import_dataset(&root, Split::new(c.train, c.validation, c.test), ctx.seed)?;
    m.save(&ctx.out("manifest.csv"))?;
    write_text(&ctx.out("root.txt"), &root.to_string_lossy())
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FeaturesConfig {
    partitions: Vec<Partition>,
    /// Per-partition cap, taken in manifest order.
    limit: Option<usize>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            partitions: vec![Partition::Train, Partition::Validation, Partition::Test],
            limit: None,
        }
    }
}

/// `<partition>.bin` feature containers and `labels.json`.
fn features(ctx: &ToolContext) -> Result<()> {
    let c: FeaturesConfig = ctx.config()?;
    let dir = &ctx.inputs[0];
    let m = DatasetManifest::load(&dir.join("manifest.csv"))?;
    let root = PathBuf::from(read_text(&dir.join("root.txt"))?.trim());
    for p in &c.partitions {
        let entries = m.partition(*p).take(c.limit.unwrap_or(usize::MAX));
        let feats = extract_features(&root, entries, &MfccConfig::default())?;
        write_feature_file(&ctx.out(&format!("{}.bin", p)), &feats)?;
    }
    emit_report(&m.labels, &ctx.out("labels.json"))
}

/// Features of one partition with class indices into `labels`; samples whose
/// label is unknown get `None`.
pub fn load_features(dir: &Path, partition: Partition, limit: usize) -> Result<(Vec<Tensor>, Vec<Option<usize>>)> {
    let labels: Vec<String> = serde_json::from_str(&read_text(&dir.join("labels.json"))?)?;
    let path = dir.join(format!("{}.bin", partition));
    if !path.exists() {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (id, t) in read_feature_file(&path)?.into_iter().take(limit) {
        let label = id.split('/').next().unwrap_or_default();
        ys.push(labels.iter().position(|l| l == label));
        xs.push(t);
    }
    Ok((xs, ys))
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct BuildConfig {
    preset: Option<String>,
    /// An architecture file inlined as a table.
    arch: Option<toml::Table>,
}

fn save_graph(dir: &Path, g: &Graph) -> Result<()> {
    save_model(g, &dir.join("model.toml"), &dir.join("model.bin"))
}

fn load_graph(dir: &Path) -> Result<Graph> {
    load_model(&dir.join("model.toml"), &dir.join("model.bin"))
}

#[derive(Serialize)]
struct ModelStats {
    name: String,
    mflops: f64,
    params: usize,
    size_bytes: usize,
}

/// `model.toml`/`model.bin`, `arch.toml` and `stats.json`. With a features
/// input the class list comes from the dataset.
fn build_net(ctx: &ToolContext) -> Result<()> {
    let c: BuildConfig = ctx.config()?;
    let mut spec = match (&c.preset, &c.arch) {
        (Some(_), Some(_)) => return Err(Error::Workflow("set either `preset` or `arch`, not both".into())),
        (_, Some(t)) => ArchSpec::from_toml(&toml::to_string(t).map_err(|e| Error::Workflow(e.to_string()))?)?,
        (p, None) => {
            let name = p.as_deref().unwrap_or("kws9");
            preset(name).ok_or_else(|| Error::Workflow(format!("unknown preset `{}`", name)))?
        }
    };
    if let Some(dir) = ctx.inputs.first() {
        let labels: Vec<String> = serde_json::from_str(&read_text(&dir.join("labels.json"))?)?;
        spec.num_classes = labels.len();
        spec.labels = labels;
        spec.check()?;
    }
    let g = build_network(&spec, ctx.seed)?;
    save_graph(&ctx.outputs[0], &g)?;
    write_text(&ctx.out("arch.toml"), &spec.to_toml())?;
    emit_report(
        &ModelStats {
            name: spec.name.clone(),
            mflops: count_flops(&g)?.mflops(),
            params: count_params(&g),
            size_bytes: model_size_bytes(&g),
        },
        &ctx.out("stats.json"),
    )
}

/// Recompiles a stored plan directory: the graph there is already optimized,
/// so this only re-derives the memory plan under the stored options.
pub fn load_plan(dir: &Path) -> Result<ExecutablePlan> {
    let g = load_graph(dir)?;
    let opts: CompileOptions = match dir.join("options.json") {
        p if p.exists() => serde_json::from_str(&read_text(&p)?)?,
        _ => CompileOptions::default(),
    };
    compile(&g, &opts)
}

#[derive(Serialize)]
struct MemorySummary {
    peak_bytes: usize,
    naive_bytes: usize,
    buffers: usize,
    in_place: usize,
}

fn compile_tool(ctx: &ToolContext) -> Result<()> {
    let opts: CompileOptions = ctx.config()?;
    let g = load_graph(&ctx.inputs[0])?;
    let plan = compile(&g, &opts)?;
    save_graph(&ctx.outputs[0], &plan.graph)?;
    emit_report(&opts, &ctx.out("options.json"))?;
    emit_report(&plan.reports, &ctx.out("passes.json"))?;
    emit_report(
        &MemorySummary {
            peak_bytes: plan.memory.peak_bytes,
            naive_bytes: plan.memory.naive_bytes,
            buffers: plan.memory.buffer_count(),
            in_place: plan.memory.in_place.len(),
        },
        &ctx.out("memory.json"),
    )
}

fn random_inputs(g: &Graph, n: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_input(g.input, &mut rng)).collect()
}

#[derive(Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum SchemeName {
    Int8,
    Int16,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct QuantizeConfig {
    scheme: SchemeName,
    calibration_samples: usize,
    evaluation_samples: usize,
    /// Score layers against dataset labels instead of the f32 model's own
    /// predictions.
    use_labels: bool,
}

impl Default for QuantizeConfig {
    fn default() -> Self {
        QuantizeConfig {
            scheme: SchemeName::Int8,
            calibration_samples: 32,
            evaluation_samples: 32,
            use_labels: false,
        }
    }
}

#[derive(Serialize)]
struct QuantSummary {
    scheme: QuantScheme,
    f32_payload_bytes: usize,
    quantized_payload_bytes: usize,
    ratio: f64,
}

/// Calibrates on the train partition (or seeded random inputs without a
/// features input), writes the quantized plan, `quant.json` and
/// `sensitivity.json` over the validation partition.
fn quantize_tool(ctx: &ToolContext) -> Result<()> {
    let c: QuantizeConfig = ctx.config()?;
    let scheme = match c.scheme {
        SchemeName::Int8 => QuantScheme::Int8Sym,
        SchemeName::Int16 => QuantScheme::Int16Sym,
    };
    let g = load_graph(&ctx.inputs[0])?;
    let (calib, eval, labels) = match ctx.inputs.get(1) {
        Some(dir) => {
            let (calib, _) = load_features(dir, Partition::Train, c.calibration_samples)?;
            let (eval, ys) = load_features(dir, Partition::Validation, c.evaluation_samples)?;
            (calib, eval, ys)
        }
        None => (
            random_inputs(&g, c.calibration_samples, ctx.seed),
            random_inputs(&g, c.evaluation_samples, ctx.seed.wrapping_add(1)),
            Vec::new(),
        ),
    };
    let params = calibrate(&g, &calib, scheme)?;
    let q = quantize(&g, &params)?;
    save_graph(&ctx.outputs[0], &q)?;
    fs::copy(ctx.inputs[0].join("options.json"), ctx.out("options.json"))
        .map_err(|e| Error::io(ctx.inputs[0].join("options.json"), e))?;
    let f32_bytes = weight_payload_bytes(&g);
    let q_bytes = weight_payload_bytes(&q);
    emit_report(
        &QuantSummary {
            scheme,
            f32_payload_bytes: f32_bytes,
            quantized_payload_bytes: q_bytes,
            ratio: q_bytes as f64 / f32_bytes as f64,
        },
        &ctx.out("quant.json"),
    )?;
    if !eval.is_empty() {
        let expected: Option<Vec<usize>> = if c.use_labels {
            Some(labels.iter().map(|l| l.ok_or_else(|| Error::Quant("sample with unknown label".into()))).collect::<Result<_>>()?)
        } else {
            None
        };
        let report = sensitivity_report(&g, &eval, expected.as_deref(), &params)?;
        emit_report(&report, &ctx.out("sensitivity.json"))?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SearchToolConfig {
    episodes: usize,
    exploration: usize,
    learning_rate: f64,
    discount: f64,
    epsilon_end: f64,
    allowed: Option<Vec<String>>,
    runs: usize,
    warmups: usize,
}

impl Default for SearchToolConfig {
    fn default() -> Self {
        let d = SearchConfig::default();
        SearchToolConfig {
            episodes: d.total_episodes,
            exploration: d.exploration_episodes,
            learning_rate: d.learning_rate,
            discount: d.discount,
            epsilon_end: d.epsilon_end,
            allowed: None,
            runs: 3,
            warmups: 1,
        }
    }
}

#[derive(Serialize)]
struct SearchSummary {
    space_size: String,
    episodes: usize,
    best_latency_ms: f64,
}

/// Sample input for timing: the first test feature when a features input is
/// given, else a seeded random tensor.
fn timing_input(g: &Graph, features: Option<&PathBuf>, seed: u64) -> Result<Tensor> {
    if let Some(dir) = features {
        if let Some(x) = load_features(dir, Partition::Test, 1)?.0.into_iter().next() {
            return Ok(x);
        }
    }
    Ok(random_inputs(g, 1, seed).remove(0))
}

/// `assignment.toml`, `search_log.json`, `search_log.csv`, `search.json`.
fn search_tool(ctx: &ToolContext) -> Result<()> {
    let c: SearchToolConfig = ctx.config()?;
    let plan = load_plan(&ctx.inputs[0])?;
    let registry = Registry::with_defaults();
    let cfg = SearchConfig {
        total_episodes: c.episodes,
        exploration_episodes: c.exploration,
        learning_rate: c.learning_rate,
        discount: c.discount,
        epsilon_end: c.epsilon_end,
        seed: ctx.seed,
        allowed: c.allowed,
        ..SearchConfig::default()
    };
    let x = timing_input(&plan.graph, ctx.inputs.get(1), ctx.seed)?;
    let mut measure = latency_measure(&plan, &registry, &x, BenchConfig { runs: c.runs, warmups: c.warmups });
    let space = SearchSpace::new(&plan.graph, &registry, cfg.allowed.as_deref())?;
    let result = search(&plan.graph, &registry, &mut measure, &cfg)?;
    write_text(&ctx.out("assignment.toml"), &result.best.to_toml())?;
    write_text(&ctx.out("search_log.json"), &result.log.to_json())?;
    write_text(&ctx.out("search_log.csv"), &result.log.to_csv())?;
    emit_report(
        &SearchSummary {
            space_size: space.size().to_string(),
            episodes: result.log.len(),
            best_latency_ms: result.best_latency,
        },
        &ctx.out("search.json"),
    )
}

/// `bench.json`. A second input supplies `assignment.toml`; otherwise the
/// registry default is used.
fn bench_tool(ctx: &ToolContext) -> Result<()> {
    let cfg: BenchConfig = ctx.config::<BenchToolConfig>()?.into();
    let plan = load_plan(&ctx.inputs[0])?;
    let registry = Registry::with_defaults();
    let a = match ctx.inputs.get(1) {
        Some(dir) => Assignment::from_toml(&read_text(&dir.join("assignment.toml"))?)?,
        None => registry.default_assignment(&plan.graph)?,
    };
    let x = random_inputs(&plan.graph, 1, ctx.seed).remove(0);
    let report = benchmark(&plan, &registry, &a, &x, &cfg)?;
    emit_report(&report, &ctx.out("bench.json"))
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BenchToolConfig {
    runs: usize,
    warmups: usize,
}

impl Default for BenchToolConfig {
    fn default() -> Self {
        let d = BenchConfig::default();
        BenchToolConfig {
            runs: d.runs,
            warmups: d.warmups,
        }
    }
}

impl From<BenchToolConfig> for BenchConfig {
    fn from(c: BenchToolConfig) -> Self {
        BenchConfig {
            runs: c.runs,
            warmups: c.warmups,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateConfig {
    preset: Option<String>,
    arch: Option<toml::Table>,
    /// Fraction in [0, 1].
    accuracy: f64,
    /// Computed from the built network when absent.
    mflops: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParetoConfig {
    #[serde(rename = "candidate")]
    candidates: Vec<CandidateConfig>,
}

#[derive(Serialize)]
struct ParetoReport {
    candidates: Vec<Candidate>,
    frontier: Vec<Candidate>,
}

/// `pareto.json` with all candidates and the non-dominated subset.
fn pareto_tool(ctx: &ToolContext) -> Result<()> {
    let c: ParetoConfig = ctx.config()?;
    let mut cands = Vec::new();
    for cc in c.candidates {
        let spec = match (&cc.preset, &cc.arch) {
            (Some(p), None) => preset(p).ok_or_else(|| Error::Workflow(format!("unknown preset `{}`", p)))?,
            (None, Some(t)) => {
                ArchSpec::from_toml(&toml::to_string(t).map_err(|e| Error::Workflow(e.to_string()))?)?
            }
            _ => return Err(Error::Workflow("each candidate needs exactly one of `preset`, `arch`".into())),
        };
        let mflops = match cc.mflops {
            Some(m) => m,
            None => count_flops(&build_network(&spec, ctx.seed)?)?.mflops(),
        };
        cands.push(Candidate::new(spec, cc.accuracy, mflops));
    }
    let frontier = pareto_frontier(&cands);
    emit_report(
        &ParetoReport {
            candidates: cands,
            frontier,
        },
        &ctx.out("pareto.json"),
    )
}
