//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset: `cargo test -p edgenn --test acceptance -- 1 7`.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{mfcc_clip_suite, mfcc_oracle};
use edgenn::audio::{mfcc, write_synthetic_dataset, AudioClip, MfccConfig};
use edgenn::benchmark::{benchmark, latency_measure, measure, BenchConfig, Runner};
use edgenn::graph::{count_flops, model_size_bytes, ConvParams, Padding, QuantScheme};
use edgenn::kernels::{ids, reference_execute, LayoutReq};
use edgenn::netbuilder::random::{random_graph, random_input};
use edgenn::netbuilder::{build_network, kws1, kws3, kws9, pareto_frontier, ArchSpec, Candidate};
use edgenn::passes::{compile, CompileOptions};
use edgenn::qsdnn::{brute_force_space, search, LayerChoice, SearchConfig, SearchSpace, Searcher};
use edgenn::quantizer::{calibrate, quantize, weight_payload_bytes};
use edgenn::tensor::max_relative_error;
use edgenn::workflow::{run_workflow, ArtifactStore, WorkflowSpec};
use edgenn::{Assignment, Executor, Graph, LayerKind, Layout, Registry, Tensor, TensorDesc, WeightTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn tables() -> [(ArchSpec, f64, f64, f64); 3] {
    // (spec, MFLOPs, KB, accuracy)
    [
        (kws1(), 223.4, 707.0, 0.951),
        (kws3(), 87.6, 282.1, 0.941),
        (kws9(), 37.7, 125.3, 0.934),
    ]
}

fn c1_flops() -> Outcome {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for (spec, want, _, _) in tables() {
        let g = build_network(&spec, 0).map_err(fail)?;
        let got = count_flops(&g).map_err(fail)?.mflops();
        ok &= (got - want).abs() <= 0.1;
        parts.push(format!("{} {:.2} (want {})", spec.name, got, want));
    }
    let el = t.elapsed();
    check(ok && el < Duration::from_secs(1), format!("{} in {:.3}s", parts.join(", "), el.as_secs_f64()))
}

fn c2_size() -> Outcome {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for (spec, _, want_kb, _) in tables() {
        let g = build_network(&spec, 0).map_err(fail)?;
        let kb = model_size_bytes(&g) as f64 / 1000.0;
        let rel = (kb - want_kb).abs() / want_kb;
        ok &= rel <= 0.02;
        parts.push(format!("{} {:.1} KB ({:+.2}%)", spec.name, kb, (kb / want_kb - 1.0) * 100.0));
    }
    let el = t.elapsed();
    check(ok && el < Duration::from_secs(1), format!("{} in {:.3}s", parts.join(", "), el.as_secs_f64()))
}

fn c3_quant_ratio() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (spec, _, _, _) in tables() {
        let g = compile(&build_network(&spec, 0).map_err(fail)?, &CompileOptions::default())
            .map_err(fail)?
            .graph;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let calib: Vec<Tensor> = (0..4).map(|_| random_input(g.input, &mut rng)).collect();
        let f32_bytes = weight_payload_bytes(&g) as f64;
        for (scheme, want) in [(QuantScheme::Int16Sym, 0.50), (QuantScheme::Int8Sym, 0.25)] {
            let params = calibrate(&g, &calib, scheme).map_err(fail)?;
            let q = quantize(&g, &params).map_err(fail)?;
            let r = weight_payload_bytes(&q) as f64 / f32_bytes;
            ok &= (r - want).abs() <= 0.01;
            parts.push(format!("{} {:?} {:.4}", spec.name, scheme, r));
        }
    }
    check(ok, parts.join(", "))
}

fn c4_pass_soundness() -> Outcome {
    let t = Instant::now();
    let reg = Registry::with_defaults();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for case in 0..100 {
        let g = random_graph(&mut rng);
        let x = random_input(g.input, &mut rng);
        let want = reference_execute(&g, &x).map_err(fail)?;
        let plan = compile(&g, &CompileOptions::default()).map_err(fail)?;
        let a = reg.random_assignment(&plan.graph, &mut rng).map_err(fail)?;
        let bound = plan.bind(&reg, &a).map_err(fail)?;
        let mut exec = Executor::new(&bound, &reg, &a).map_err(fail)?;
        exec.set_poison(true);
        let got = exec.run(&x).map_err(fail)?.to_channel_major();
        let tol = if a.iter().any(|(_, id)| id == ids::CONV_WINOGRAD) { 1e-4 } else { 1e-5 };
        let err = max_relative_error(&got.data, &want.data);
        worst = worst.max(err / tol);
        if err > tol {
            failures.push(format!("case {} err {:.2e}", case, err));
        }
    }
    let el = t.elapsed();
    check(
        failures.is_empty() && el < Duration::from_secs(120),
        format!(
            "100 graphs, worst error {:.3} of tolerance, {} failures {:?} in {:.1}s",
            worst,
            failures.len(),
            failures,
            el.as_secs_f64()
        ),
    )
}

fn conv_graph(cin: usize, h: usize, w: usize, p: ConvParams, rng: &mut ChaCha8Rng) -> Graph {
    let mut g = Graph::new("conv", TensorDesc::f32(cin, h, w));
    let x = g.push("in", LayerKind::Input, vec![]);
    let n = p.out_channels * (cin / p.groups) * p.kh * p.kw;
    g.add_weight(WeightTensor::f32(
        "w",
        vec![p.out_channels, cin / p.groups, p.kh, p.kw],
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    ));
    g.add_weight(WeightTensor::f32(
        "b",
        vec![p.out_channels],
        (0..p.out_channels).map(|_| rng.random_range(-0.5..0.5)).collect(),
    ));
    let c = g.push("conv", LayerKind::Convolution(p), vec![x]);
    g.node_mut(c).unwrap().weights = vec!["w".into(), "b".into()];
    g
}

fn c5_kernel_equivalence() -> Outcome {
    let reg = Registry::with_defaults();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut checked: BTreeSet<String> = BTreeSet::new();
    let mut runs = 0usize;
    let mut failures = Vec::new();
    for (kh, kw) in [(1, 1), (3, 3), (4, 10), (5, 5)] {
        for (sh, sw) in [(1, 1), (1, 2), (2, 2)] {
            for draw in 0..50 {
                let cin = rng.random_range(1..=6);
                let depthwise = draw % 5 == 4;
                let cout = if depthwise { cin } else { rng.random_range(1..=6) };
                let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
                let mut p = ConvParams::new(kh, kw, cout).stride(sh, sw).padding(padding);
                if depthwise {
                    p = p.groups(cin);
                }
                let (h, w) = (rng.random_range(kh..kh + 12), rng.random_range(kw..kw + 12));
                let g = conv_graph(cin, h, w, p, &mut rng);
                let x = random_input(g.input, &mut rng);
                let want = reference_execute(&g, &x).map_err(fail)?;
                let plan = compile(&g, &CompileOptions::default()).map_err(fail)?;
                let node = &plan.graph.nodes[1];

                for id in reg.implementations_for(&plan.graph, node) {
                    let a = reg.uniform_assignment(&plan.graph, &[id]).map_err(fail)?;
                    let bound = plan.bind(&reg, &a).map_err(fail)?;
                    let got = Executor::new(&bound, &reg, &a)
                        .and_then(|mut e| e.run(&x))
                        .map_err(fail)?
                        .to_channel_major();
                    let tol = if id == ids::CONV_WINOGRAD { 1e-4 } else { 1e-5 };
                    let err = max_relative_error(&got.data, &want.data);
                    runs += 1;
                    checked.insert(id.to_string());
                    if err > tol {
                        failures.push(format!("{} {}x{} s{}x{} err {:.2e}", id, kh, kw, sh, sw, err));
                    }
                }

                // integer kernels: within two output quantization steps of the
                // same quantized model evaluated in f32
                for (scheme, id) in [(QuantScheme::Int8Sym, ids::GEMM_I8), (QuantScheme::Int16Sym, ids::GEMM_I16)] {
                    let params = calibrate(&plan.graph, std::slice::from_ref(&x), scheme).map_err(fail)?;
                    let q = quantize(&plan.graph, &params).map_err(fail)?;
                    let qplan = compile(&q, &CompileOptions::default()).map_err(fail)?;
                    let a = reg.uniform_assignment(&qplan.graph, &[id]).map_err(fail)?;
                    if a.get(qplan.graph.nodes[1].id) != Some(id) {
                        failures.push(format!("{} not applicable to quantized conv", id));
                        continue;
                    }
                    let bound = qplan.bind(&reg, &a).map_err(fail)?;
                    let got = Executor::new(&bound, &reg, &a).and_then(|mut e| e.run(&x)).map_err(fail)?;
                    let want = reference_execute(&q, &x).map_err(fail)?;
                    let out_scale = params.layers.values().next().unwrap().output_scale as f64;
                    let worst = got
                        .data
                        .iter()
                        .zip(&want.data)
                        .map(|(a, b)| (*a as f64 - *b as f64).abs())
                        .fold(0.0, f64::max);
                    runs += 1;
                    checked.insert(id.to_string());
                    if worst > 2.0 * out_scale {
                        failures.push(format!(
                            "{} {}x{} s{}x{} error {:.3} output steps",
                            id,
                            kh,
                            kw,
                            sh,
                            sw,
                            worst / out_scale
                        ));
                    }
                }
            }
        }
    }
    failures.truncate(8);
    check(
        failures.is_empty(),
        format!("{} comparisons over impls {:?}; failures {:?}", runs, checked, failures),
    )
}

fn c6_memory() -> Outcome {
    let g = build_network(&kws1(), 0).map_err(fail)?;
    let plan = compile(&g, &CompileOptions::default()).map_err(fail)?;
    let (peak, naive) = (plan.memory.peak_bytes, plan.memory.naive_bytes);
    let reg = Registry::with_defaults();
    let a = reg.uniform_assignment(&plan.graph, &[ids::CONV_IM2COL]).map_err(fail)?;
    let bound = plan.bind(&reg, &a).map_err(fail)?;
    let x = random_input(g.input, &mut ChaCha8Rng::seed_from_u64(6));
    let mut clean = Executor::new(&bound, &reg, &a).map_err(fail)?;
    let mut poisoned = Executor::new(&bound, &reg, &a).map_err(fail)?;
    poisoned.set_poison(true);
    let y0 = clean.run(&x).map_err(fail)?;
    let y1 = poisoned.run(&x).map_err(fail)?;
    let identical = y0.data.iter().zip(&y1.data).all(|(a, b)| a.to_bits() == b.to_bits());
    let reference = reference_execute(&g, &x).map_err(fail)?;
    let err = max_relative_error(&y1.data, &reference.data);
    check(
        peak < naive && identical && err <= 1e-5,
        format!(
            "kws1 peak {} B vs naive {} B ({:.1}%), poisoned output bit-identical: {}, vs reference {:.2e}",
            peak,
            naive,
            100.0 * peak as f64 / naive as f64,
            identical,
            err
        ),
    )
}

/// A space of `layers` decisions with `k` options each. Options carry
/// layouts so conversions between them cost extra, which the additive part of
/// the latency cannot see.
fn synthetic_space(seed: u64) -> (SearchSpace, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = rng.random_range(1..=3);
    let layouts = [LayoutReq::Any, LayoutReq::CHANNEL_MAJOR, LayoutReq::CHANNEL_MINOR];
    let mut choices = Vec::new();
    let mut costs = Vec::new();
    for i in 0..layers {
        let k = rng.random_range(2..=3);
        choices.push(LayerChoice {
            node: i + 1,
            source: i.checked_sub(1),
            options: (0..k).map(|j| (format!("impl{}", j), layouts[rng.random_range(0..3)])).collect(),
        });
        costs.push((0..k).map(|_| rng.random_range(1.0..10.0)).collect());
    }
    (
        SearchSpace {
            layers: choices,
            input_layout: Layout::ChannelMajor,
        },
        costs,
    )
}

fn synthetic_latency(space: &SearchSpace, costs: &[Vec<f64>], a: &Assignment) -> f64 {
    let mut layout = space.input_layout;
    let mut total = 0.0;
    for (i, l) in space.layers.iter().enumerate() {
        let id = a.get(l.node).unwrap();
        let j = l.options.iter().position(|(o, _)| o == id).unwrap();
        let next = l.options[j].1.resolve(layout);
        if next != layout {
            total += 2.5;
        }
        layout = next;
        total += costs[i][j];
    }
    total
}

fn c7_search() -> Outcome {
    let t = Instant::now();
    let mut hits = 0;
    for seed in 0..100u64 {
        let (space, costs) = synthetic_space(seed);
        let mut m = |a: &Assignment| Ok(synthetic_latency(&space, &costs, a));
        let (_, opt) = brute_force_space(&space, &mut m).map_err(fail)?;
        let cfg = SearchConfig {
            total_episodes: 1000,
            exploration_episodes: 300,
            seed,
            ..SearchConfig::default()
        };
        let mut s = Searcher::new(&space, cfg).map_err(fail)?;
        s.run(&mut m).map_err(fail)?;
        if (s.finish().best_latency - opt).abs() < 1e-12 {
            hits += 1;
        }
    }
    let synthetic = format!("synthetic {}/100 optimal", hits);

    let reg = Registry::with_defaults();
    let g = build_network(&kws1(), 0).map_err(fail)?;
    let plan = compile(&g, &CompileOptions::default()).map_err(fail)?;
    let x = random_input(g.input, &mut ChaCha8Rng::seed_from_u64(7));
    let protocol = BenchConfig { runs: 3, warmups: 1 };
    let libraries = [ids::CONV_DIRECT, ids::CONV_IM2COL, ids::CONV_WINOGRAD];
    let cfg = SearchConfig {
        total_episodes: 200,
        exploration_episodes: 60,
        seed: 7,
        allowed: Some(libraries.iter().map(|s| s.to_string()).collect()),
        ..SearchConfig::default()
    };
    let mut m = latency_measure(&plan, &reg, &x, protocol);
    let result = search(&plan.graph, &reg, &mut m, &cfg).map_err(fail)?;

    // The search's best is a minimum over many noisy samples, so every
    // contender is re-timed under one protocol: persistent executors, single
    // inferences alternated round by round, fastest sample kept. Contenders
    // more than twice as slow as the leader after the first rounds cannot
    // catch up and stop being timed.
    let mut contenders: Vec<(String, Assignment)> = vec![("search".into(), result.best.clone())];
    for id in libraries {
        contenders.push((id.to_string(), reg.uniform_assignment(&plan.graph, &[id]).map_err(fail)?));
    }
    let bound: Vec<_> = contenders
        .iter()
        .map(|(_, a)| plan.bind(&reg, a))
        .collect::<edgenn::Result<_>>()
        .map_err(fail)?;
    let mut execs: Vec<Executor> = bound
        .iter()
        .zip(&contenders)
        .map(|(b, (_, a))| Executor::new(b, &reg, a))
        .collect::<edgenn::Result<_>>()
        .map_err(fail)?;
    let mut best = vec![f64::INFINITY; contenders.len()];
    for round in 0..200 {
        let leader = best.iter().cloned().fold(f64::INFINITY, f64::min);
        for (i, e) in execs.iter_mut().enumerate() {
            if round >= 3 && best[i] > 2.0 * leader {
                continue;
            }
            let t = Instant::now();
            e.run(&x).map_err(fail)?;
            best[i] = best[i].min(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    // identical assignments are the same contender
    for i in 0..contenders.len() {
        for j in 0..i {
            if contenders[i].1 == contenders[j].1 {
                let v = best[i].min(best[j]);
                best[i] = v;
                best[j] = v;
            }
        }
    }
    let uniform_min = best[1..].iter().cloned().fold(f64::INFINITY, f64::min);
    let el = t.elapsed();
    let table: Vec<String> = contenders.iter().zip(&best).map(|((n, _), l)| format!("{} {:.2}", n, l)).collect();
    check(
        hits >= 95 && best[0] <= uniform_min && el < Duration::from_secs(600),
        format!(
            "{}; kws1 ms: {} (search log best {:.2}, picked {:?}) in {:.0}s",
            synthetic,
            table.join(", "),
            result.best_latency,
            result.best.iter().filter(|(_, id)| id.contains("gemm") || id.contains("f32") && !id.starts_with("fc")).map(|(_, id)| id).collect::<Vec<_>>(),
            el.as_secs_f64()
        ),
    )
}

fn c8_mfcc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut shapes_ok = true;
    for _ in 0..10 {
        let amp = rng.random_range(0.0..1.0f32);
        let clip = AudioClip::new((0..16_000).map(|_| rng.random_range(-1.0..1.0) * amp).collect());
        let f = mfcc(&clip, &MfccConfig::default()).map_err(fail)?;
        shapes_ok &= (f.desc.shape.c, f.desc.shape.h, f.desc.shape.w) == (1, 40, 32);
        shapes_ok &= f.data.iter().all(|v| v.is_finite());
    }
    let mut worst = 0.0f64;
    let mut names = Vec::new();
    for (name, clip) in mfcc_clip_suite() {
        let ours = mfcc(&AudioClip::new(clip.clone()), &MfccConfig::default()).map_err(fail)?;
        shapes_ok &= ours.data.len() == 40 * 32;
        let want = mfcc_oracle(&clip, 16_000.0, 2048, 512, 40, 40);
        let d = ours.data.iter().zip(&want).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
        worst = worst.max(d);
        names.push(name);
    }
    check(
        shapes_ok && worst <= 1e-3 && names.len() == 10,
        format!("all clips 40x32; max deviation from oracle {:.2e} over {} clips", worst, names.len()),
    )
}

struct Counting<'p> {
    inner: Executor<'p>,
    calls: usize,
}

impl Runner for Counting<'_> {
    fn layers(&self) -> Vec<(usize, String)> {
        self.inner.layers()
    }
    fn run_timed(&mut self, input: &Tensor, per_layer: &mut Vec<Duration>) -> edgenn::Result<()> {
        self.calls += 1;
        if self.calls == 1 {
            // a slow warm-up must not leak into the statistics
            std::thread::sleep(Duration::from_millis(300));
        }
        self.inner.run_timed(input, per_layer)
    }
}

fn c9_bench_protocol() -> Outcome {
    let reg = Registry::with_defaults();
    let g = build_network(&kws9(), 0).map_err(fail)?;
    let plan = compile(&g, &CompileOptions::default()).map_err(fail)?;
    let a = reg.uniform_assignment(&plan.graph, &[ids::CONV_IM2COL]).map_err(fail)?;
    let bound = plan.bind(&reg, &a).map_err(fail)?;
    let x = random_input(g.input, &mut ChaCha8Rng::seed_from_u64(9));
    let mut r = Counting {
        inner: Executor::new(&bound, &reg, &a).map_err(fail)?,
        calls: 0,
    };
    let (total, layers) = measure(&mut r, &x, &BenchConfig::default()).map_err(fail)?;
    let layer_sum: f64 = layers.iter().map(|l| l.2.mean).sum();
    let report = benchmark(&plan, &reg, &a, &x, &BenchConfig::default()).map_err(fail)?;
    check(
        r.calls == 11 && total.max < 300.0 && report.runs == 10 && report.warmups == 1 && layer_sum <= total.mean * 1.05,
        format!(
            "{} executions, stats over {} runs, max {:.2} ms (warm-up slept 300 ms), layer sum {:.2} vs total {:.2} ms",
            r.calls, report.runs, total.max, layer_sum, total.mean
        ),
    )
}

fn c10_pipeline() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let audio = dir.path().join("audio");
    write_synthetic_dataset(&audio, &["yes", "no", "up", "down"], 12, 10).map_err(fail)?;
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../workflows/kws.toml");
    let mut spec = WorkflowSpec::load(&path).map_err(fail)?;
    spec.external.insert("audio".into(), audio);
    let store = ArtifactStore::open(&dir.path().join("store")).map_err(fail)?;

    let first = run_workflow(&spec, &store).map_err(fail)?;
    let mut reports = 0;
    for (id, rec) in store.read_index().map_err(fail)? {
        for entry in walk_json(&store.object_path(&rec.hash)) {
            let text = std::fs::read_to_string(&entry).map_err(fail)?;
            serde_json::from_str::<serde_json::Value>(&text).map_err(|e| format!("{} in {}: {}", entry.display(), id, e))?;
            reports += 1;
        }
    }
    let second = run_workflow(&spec, &store).map_err(fail)?;
    check(
        first.is_success() && first.executed.len() == spec.steps.len() && second.executed.is_empty(),
        format!(
            "first run executed {} of {} steps, {} JSON reports valid; second run executed {}, skipped {}",
            first.executed.len(),
            spec.steps.len(),
            reports,
            second.executed.len(),
            second.skipped.len()
        ),
    )
}

fn walk_json(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    if let Ok(rd) = std::fs::read_dir(dir) {
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(walk_json(&p));
            } else if p.extension().is_some_and(|x| x == "json") {
                out.push(p);
            }
        }
    }
    out
}

fn c11_pareto() -> Outcome {
    let mut cands = Vec::new();
    for (spec, _, _, acc) in tables() {
        let g = build_network(&spec, 0).map_err(fail)?;
        let mflops = count_flops(&g).map_err(fail)?.mflops();
        cands.push(Candidate::new(spec, acc, mflops));
    }
    let front = pareto_frontier(&cands);
    let all_kept = front.len() == 3;
    let mut dominated = kws3();
    dominated.name = "dominated".into();
    let mut with_extra = cands.clone();
    // worse than kws3 on both axes
    with_extra.push(Candidate::new(dominated, 0.93, 100.0));
    let front2 = pareto_frontier(&with_extra);
    let names: Vec<&str> = front2.iter().map(|c| c.spec.name.as_str()).collect();
    check(
        all_kept && front2 == front,
        format!("frontier {:?}; extra dominated point removed: {}", names, !names.contains(&"dominated")),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "FLOP table", c1_flops),
        (2, "model size table", c2_size),
        (3, "quantized payload ratio", c3_quant_ratio),
        (4, "pass soundness", c4_pass_soundness),
        (5, "kernel equivalence", c5_kernel_equivalence),
        (6, "memory planner", c6_memory),
        (7, "implementation search", c7_search),
        (8, "MFCC contract", c8_mfcc),
        (9, "benchmark protocol", c9_bench_protocol),
        (10, "pipeline caching", c10_pipeline),
        (11, "Pareto selection", c11_pareto),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} [{}] {} ({:.1}s): {}", n, tag, name, t.elapsed().as_secs_f64(), detail);
    }
    if failed > 0 {
        println!("{} criteria failed", failed);
        std::process::exit(1);
    }
}
