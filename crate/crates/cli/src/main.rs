//! `edgenn`: build, compile, quantize, search, benchmark and run keyword
//! spotting networks, one step at a time or as a cached workflow.
//!
//! Model, plan, dataset and feature artifacts are directories with the same
//! layout the workflow store uses, so outputs of one command (or of a
//! workflow run) feed straight into the next.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use edgenn::audio::{classify, load_wav, mfcc, read_feature_file, write_synthetic_dataset, MfccConfig};
use edgenn::graph::{count_flops, count_params, load_model, model_size_bytes};
use edgenn::netbuilder::{build_network, preset, ArchSpec, DEFAULT_LABELS};
use edgenn::report::emit_report;
use edgenn::workflow::{load_plan, run_tool, run_workflow, ArtifactStore, ToolContext, WorkflowSpec};
use edgenn::{Assignment, Graph, Registry};
use serde_json::{json, Value};
use toml::Table;

#[derive(Parser)]
#[command(name = "edgenn", version, about = "DNN inference engine and graph compiler for keyword spotting")]
struct Cli {
    /// Seed for weight init, dataset splits, search and sample inputs.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Also write the command's JSON report here.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Artifact store used by `workflow run`.
    #[arg(long, global = true, default_value = ".edgenn-store")]
    store: PathBuf,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a directory of per-class WAV folders into train/validation/test.
    Ingest(IngestArgs),
    /// Compute MFCC features for one WAV file or an ingested dataset.
    Features(FeaturesArgs),
    /// Build a network from a preset or an architecture file.
    BuildNet(BuildArgs),
    /// Count FLOPs, parameters and model size.
    Flops(FlopsArgs),
    /// Fold, fuse and memory-plan a model.
    Compile(CompileArgs),
    /// Post-training quantization with a per-layer sensitivity report.
    Quantize(QuantizeArgs),
    /// Classify one clip or feature file.
    Run(RunArgs),
    /// Measure latency per layer and in total.
    Bench(BenchArgs),
    /// Reinforcement-learning search for the fastest per-layer assignment.
    Search(SearchArgs),
    /// Select the non-dominated candidates from an accuracy/cost list.
    Pareto(ParetoArgs),
    /// Run declarative workflows.
    #[command(subcommand)]
    Workflow(WorkflowCommand),
}

#[derive(Args)]
struct IngestArgs {
    /// Dataset root holding one sub-directory of WAV files per class.
    root: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    train: f64,
    #[arg(long, default_value_t = 0.1)]
    validation: f64,
    #[arg(long, default_value_t = 0.1)]
    test: f64,
    /// First write this many synthetic clips per class into `root`.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Class names for `--synthetic`.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
}

#[derive(Args)]
struct FeaturesArgs {
    /// A WAV file, or a dataset directory written by `ingest`.
    input: PathBuf,
    /// Output: a feature file for a WAV input, a directory for a dataset.
    #[arg(long)]
    out: PathBuf,
    /// Cap per partition (dataset input only).
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long, conflicts_with = "arch")]
    preset: Option<String>,
    /// Architecture TOML file.
    #[arg(long)]
    arch: Option<PathBuf>,
    /// Feature directory whose class list replaces the default labels.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FlopsArgs {
    /// Model directory.
    model: Option<PathBuf>,
    #[arg(long, conflicts_with = "model")]
    preset: Option<String>,
}

#[derive(Args)]
struct CompileArgs {
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_fold: bool,
    #[arg(long)]
    no_fuse: bool,
    /// Give every activation its own buffer.
    #[arg(long)]
    no_plan: bool,
}

#[derive(Args)]
struct QuantizeArgs {
    plan: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "int8", value_parser = ["int8", "int16"])]
    scheme: String,
    /// Feature directory for calibration (train) and sensitivity (validation).
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    calibration_samples: usize,
    #[arg(long, default_value_t = 32)]
    evaluation_samples: usize,
    /// Score sensitivity against dataset labels rather than f32 predictions.
    #[arg(long)]
    use_labels: bool,
}

#[derive(Args)]
struct RunArgs {
    plan: PathBuf,
    #[arg(long, conflicts_with = "features")]
    wav: Option<PathBuf>,
    /// Feature file; every sample in it is classified.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Assignment TOML file or a directory holding `assignment.toml`.
    #[arg(long)]
    assignment: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    plan: PathBuf,
    /// Directory holding `assignment.toml` (for example a `search` output).
    #[arg(long)]
    assignment: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 1)]
    warmups: usize,
}

#[derive(Args)]
struct SearchArgs {
    plan: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Feature directory supplying the timing input.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 1500)]
    episodes: usize,
    #[arg(long, default_value_t = 500)]
    exploration: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    discount: f64,
    /// Runs per latency measurement.
    #[arg(long, default_value_t = 3)]
    runs: usize,
    /// Restrict layers to these implementation ids where they apply.
    #[arg(long, value_delimiter = ',')]
    allowed: Option<Vec<String>>,
}

#[derive(Args)]
struct ParetoArgs {
    /// TOML file of `[[candidate]]` entries with `preset` or inline `arch`,
    /// `accuracy` in [0, 1] and optional `mflops`.
    candidates: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum WorkflowCommand {
    /// Execute a workflow file, skipping steps whose results are cached.
    Run { file: PathBuf },
}

struct Ctx {
    seed: u64,
    report: Option<PathBuf>,
    store: PathBuf,
}

impl Ctx {
    fn tool(&self, name: &str, inputs: Vec<PathBuf>, out: &Path, config: Table) -> Result<()> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let ctx = ToolContext {
            inputs,
            outputs: vec![out.to_path_buf()],
            config,
            seed: self.seed,
        };
        run_tool(name, &ctx)?;
        Ok(())
    }

    fn emit(&self, value: &Value) -> Result<()> {
        if let Some(p) = &self.report {
            emit_report(value, p)?;
        }
        Ok(())
    }

    fn emit_file(&self, path: &Path) -> Result<Value> {
        let v: Value = serde_json::from_str(&fs::read_to_string(path).with_context(|| path.display().to_string())?)?;
        self.emit(&v)?;
        Ok(v)
    }
}

fn table(pairs: Vec<(&str, toml::Value)>) -> Table {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn int(n: usize) -> toml::Value {
    toml::Value::Integer(n as i64)
}

fn load_graph(dir: &Path) -> Result<Graph> {
    load_model(&dir.join("model.toml"), &dir.join("model.bin"))
        .with_context(|| format!("loading model from {}", dir.display()))
}

fn read_assignment(path: &Path) -> Result<Assignment> {
    let file = if path.is_dir() { path.join("assignment.toml") } else { path.to_path_buf() };
    Ok(Assignment::from_toml(&fs::read_to_string(&file).with_context(|| file.display().to_string())?)?)
}

fn ingest(c: &Ctx, a: IngestArgs) -> Result<()> {
    if let Some(n) = a.synthetic {
        let labels: Vec<String> = a
            .labels
            .unwrap_or_else(|| DEFAULT_LABELS[..10].iter().map(|s| s.to_string()).collect());
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        write_synthetic_dataset(&a.root, &refs, n, c.seed)?;
    }
    let cfg = table(vec![
        ("train", a.train.into()),
        ("validation", a.validation.into()),
        ("test", a.test.into()),
    ]);
    c.tool("ingest", vec![a.root], &a.out, cfg)?;
    let m = edgenn::audio::DatasetManifest::load(&a.out.join("manifest.csv"))?;
    use edgenn::audio::Partition::*;
    let summary = json!({
        "labels": m.labels,
        "train": m.count(Train),
        "validation": m.count(Validation),
        "test": m.count(Test),
    });
    println!(
        "{} classes, {} train / {} validation / {} test -> {}",
        m.labels.len(),
        m.count(Train),
        m.count(Validation),
        m.count(Test),
        a.out.display()
    );
    c.emit(&summary)
}

fn features(c: &Ctx, a: FeaturesArgs) -> Result<()> {
    if a.input.is_file() {
        let clip = load_wav(&a.input)?;
        let f = mfcc(&clip, &MfccConfig::default())?;
        let id = a.input.file_name().unwrap_or_default().to_string_lossy().into_owned();
        edgenn::audio::write_feature_file(&a.out, &[(id, f.clone())])?;
        println!("{} features -> {}", f.desc.shape, a.out.display());
        return c.emit(&json!({ "samples": 1, "shape": [f.desc.shape.c, f.desc.shape.h, f.desc.shape.w] }));
    }
    let mut cfg = Table::new();
    if let Some(l) = a.limit {
        cfg.insert("limit".into(), int(l));
    }
    c.tool("features", vec![a.input], &a.out, cfg)?;
    let mut counts = serde_json::Map::new();
    for p in ["train", "validation", "test"] {
        let n = read_feature_file(&a.out.join(format!("{}.bin", p)))?.len();
        counts.insert(p.into(), n.into());
    }
    println!("features {} -> {}", Value::Object(counts.clone()), a.out.display());
    c.emit(&Value::Object(counts))
}

fn build(c: &Ctx, a: BuildArgs) -> Result<()> {
    let mut cfg = Table::new();
    if let Some(p) = a.preset {
        cfg.insert("preset".into(), p.into());
    }
    if let Some(path) = a.arch {
        let text = fs::read_to_string(&path).with_context(|| path.display().to_string())?;
        let arch: Table = toml::from_str(&text)?;
        cfg.insert("arch".into(), toml::Value::Table(arch));
    }
    c.tool("build-net", a.features.into_iter().collect(), &a.out, cfg)?;
    let v = c.emit_file(&a.out.join("stats.json"))?;
    println!(
        "{}: {:.1} MFLOPs, {} params, {} bytes -> {}",
        v["name"].as_str().unwrap_or("?"),
        v["mflops"].as_f64().unwrap_or(0.0),
        v["params"],
        v["size_bytes"],
        a.out.display()
    );
    Ok(())
}

fn flops(c: &Ctx, a: FlopsArgs) -> Result<()> {
    let g = match (a.model, a.preset) {
        (Some(dir), _) => load_graph(&dir)?,
        (None, Some(p)) => {
            let spec: ArchSpec = preset(&p).with_context(|| format!("unknown preset `{}`", p))?;
            build_network(&spec, c.seed)?
        }
        (None, None) => bail!("give a model directory or --preset"),
    };
    let report = count_flops(&g)?;
    for l in &report.layers {
        println!("{:<12} {:>12}", l.name, l.flops);
    }
    println!(
        "total {:.1} MFLOPs, {} params, {:.1} KB",
        report.mflops(),
        count_params(&g),
        model_size_bytes(&g) as f64 / 1000.0
    );
    c.emit(&json!({
        "name": g.name,
        "mflops": report.mflops(),
        "flops": report.total,
        "params": count_params(&g),
        "size_bytes": model_size_bytes(&g),
        "layers": report.layers,
    }))
}

fn compile_cmd(c: &Ctx, a: CompileArgs) -> Result<()> {
    let cfg = table(vec![
        ("fold", (!a.no_fold).into()),
        ("fuse", (!a.no_fuse).into()),
        ("plan", (!a.no_plan).into()),
    ]);
    c.tool("compile", vec![a.model], &a.out, cfg)?;
    let read = |f: &str| -> Result<Value> { Ok(serde_json::from_str(&fs::read_to_string(a.out.join(f))?)?) };
    let (passes, memory) = (read("passes.json")?, read("memory.json")?);
    for p in passes.as_array().into_iter().flatten() {
        println!(
            "{:<8} removed {} nodes, saved {} bytes",
            p["pass"].as_str().unwrap_or(""),
            p["nodes_removed"],
            p["bytes_saved"]
        );
    }
    println!(
        "activation memory: {} bytes planned vs {} naive, {} buffers -> {}",
        memory["peak_bytes"],
        memory["naive_bytes"],
        memory["buffers"],
        a.out.display()
    );
    c.emit(&json!({ "passes": passes, "memory": memory }))
}

fn quantize_cmd(c: &Ctx, a: QuantizeArgs) -> Result<()> {
    let cfg = table(vec![
        ("scheme", a.scheme.into()),
        ("calibration_samples", int(a.calibration_samples)),
        ("evaluation_samples", int(a.evaluation_samples)),
        ("use_labels", a.use_labels.into()),
    ]);
    let mut inputs = vec![a.plan];
    inputs.extend(a.features);
    c.tool("quantize", inputs, &a.out, cfg)?;
    let q: Value = serde_json::from_str(&fs::read_to_string(a.out.join("quant.json"))?)?;
    let sens_path = a.out.join("sensitivity.json");
    let sens: Value = match sens_path.exists() {
        true => serde_json::from_str(&fs::read_to_string(&sens_path)?)?,
        false => Value::Null,
    };
    println!(
        "{}: weights {} -> {} bytes (ratio {:.3}) -> {}",
        q["scheme"].as_str().unwrap_or(""),
        q["f32_payload_bytes"],
        q["quantized_payload_bytes"],
        q["ratio"].as_f64().unwrap_or(0.0),
        a.out.display()
    );
    for l in sens["layers"].as_array().into_iter().flatten() {
        println!(
            "  {:<10} agreement {:.3} drop {:+.3}",
            l["name"].as_str().unwrap_or(""),
            l["agreement"].as_f64().unwrap_or(0.0),
            l["drop"].as_f64().unwrap_or(0.0)
        );
    }
    c.emit(&json!({ "quantization": q, "sensitivity": sens }))
}

fn run_cmd(c: &Ctx, a: RunArgs) -> Result<()> {
    let plan = load_plan(&a.plan)?;
    let registry = Registry::with_defaults();
    let assignment = match &a.assignment {
        Some(p) => read_assignment(p)?,
        None => registry.default_assignment(&plan.graph)?,
    };
    let inputs = match (a.wav, a.features) {
        (Some(w), _) => {
            let id = w.display().to_string();
            vec![(id, mfcc(&load_wav(&w)?, &MfccConfig::default())?)]
        }
        (None, Some(f)) => read_feature_file(&f)?,
        (None, None) => bail!("give --wav or --features"),
    };
    let mut results = Vec::new();
    for (id, x) in inputs {
        let r = classify(&plan, &registry, &assignment, &x)?;
        println!("{}: {} (p = {:.4})", id, r.label, r.probabilities[r.index]);
        results.push(json!({ "id": id, "index": r.index, "label": r.label, "probabilities": r.probabilities }));
    }
    c.emit(&Value::Array(results))
}

fn bench_cmd(c: &Ctx, a: BenchArgs) -> Result<()> {
    let cfg = table(vec![("runs", int(a.runs)), ("warmups", int(a.warmups))]);
    let mut inputs = vec![a.plan];
    inputs.extend(a.assignment);
    c.tool("bench", inputs, &a.out, cfg)?;
    let v = c.emit_file(&a.out.join("bench.json"))?;
    for l in v["layers"].as_array().into_iter().flatten() {
        println!(
            "{:<14} {:<16} {:>9.3} ms",
            l["name"].as_str().unwrap_or(""),
            l["impl"].as_str().unwrap_or("-"),
            l["mean"].as_f64().unwrap_or(0.0)
        );
    }
    let t = &v["total"];
    println!(
        "total {:.3} ms (min {:.3}, max {:.3}, sd {:.3}) over {} runs after {} warm-up",
        t["mean"].as_f64().unwrap_or(0.0),
        t["min"].as_f64().unwrap_or(0.0),
        t["max"].as_f64().unwrap_or(0.0),
        t["stddev"].as_f64().unwrap_or(0.0),
        v["runs"],
        v["warmups"]
    );
    Ok(())
}

fn search_cmd(c: &Ctx, a: SearchArgs) -> Result<()> {
    let mut cfg = table(vec![
        ("episodes", int(a.episodes)),
        ("exploration", int(a.exploration)),
        ("learning_rate", a.learning_rate.into()),
        ("discount", a.discount.into()),
        ("runs", int(a.runs)),
    ]);
    if let Some(allowed) = a.allowed {
        cfg.insert("allowed".into(), toml::Value::Array(allowed.into_iter().map(Into::into).collect()));
    }
    let mut inputs = vec![a.plan];
    inputs.extend(a.features);
    c.tool("search", inputs, &a.out, cfg)?;
    let summary: Value = serde_json::from_str(&fs::read_to_string(a.out.join("search.json"))?)?;
    let log: Value = serde_json::from_str(&fs::read_to_string(a.out.join("search_log.json"))?)?;
    println!(
        "best {:.3} ms after {} episodes over {} assignments -> {}",
        summary["best_latency_ms"].as_f64().unwrap_or(0.0),
        summary["episodes"],
        summary["space_size"].as_str().unwrap_or("?"),
        a.out.join("assignment.toml").display()
    );
    c.emit(&log)
}

fn pareto_cmd(c: &Ctx, a: ParetoArgs) -> Result<()> {
    let text = fs::read_to_string(&a.candidates).with_context(|| a.candidates.display().to_string())?;
    let cfg: Table = toml::from_str(&text)?;
    c.tool("pareto", Vec::new(), &a.out, cfg)?;
    let v = c.emit_file(&a.out.join("pareto.json"))?;
    for cand in v["frontier"].as_array().into_iter().flatten() {
        println!(
            "{:<10} accuracy {:.3}  {:.1} MFLOPs",
            cand["name"].as_str().unwrap_or(""),
            cand["accuracy"].as_f64().unwrap_or(0.0),
            cand["mflops"].as_f64().unwrap_or(0.0)
        );
    }
    Ok(())
}

fn workflow_cmd(c: &Ctx, cmd: WorkflowCommand) -> Result<()> {
    let WorkflowCommand::Run { file } = cmd;
    let spec = WorkflowSpec::load(&file)?;
    let store = ArtifactStore::open(&c.store)?;
    let summary = run_workflow(&spec, &store)?;
    println!(
        "executed {}, skipped {}, failed {}, blocked {}",
        summary.executed.len(),
        summary.skipped.len(),
        summary.failed.len(),
        summary.blocked.len()
    );
    for f in &summary.failed {
        println!("  {} failed: {}", f.step, f.error);
    }
    c.emit(&serde_json::to_value(&summary)?)?;
    if !summary.is_success() {
        bail!("workflow `{}` did not complete", spec.name);
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let c = Ctx {
        seed: cli.seed,
        report: cli.report,
        store: cli.store,
    };
    match cli.command {
        Command::Ingest(a) => ingest(&c, a),
        Command::Features(a) => features(&c, a),
        Command::BuildNet(a) => build(&c, a),
        Command::Flops(a) => flops(&c, a),
        Command::Compile(a) => compile_cmd(&c, a),
        Command::Quantize(a) => quantize_cmd(&c, a),
        Command::Run(a) => run_cmd(&c, a),
        Command::Bench(a) => bench_cmd(&c, a),
        Command::Search(a) => search_cmd(&c, a),
        Command::Pareto(a) => pareto_cmd(&c, a),
        Command::Workflow(w) => workflow_cmd(&c, w),
    }
}
