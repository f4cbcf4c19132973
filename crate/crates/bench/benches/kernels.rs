use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use edgenn::graph::{ConvParams, Padding};
use edgenn::kernels::ids;
use edgenn::netbuilder::random::random_input;
use edgenn::netbuilder::{build_network, kws1, kws9};
use edgenn::passes::{compile, CompileOptions};
use edgenn::{Executor, Graph, LayerKind, Registry, TensorDesc, WeightTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn conv_graph(cin: usize, h: usize, w: usize, p: ConvParams) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = Graph::new("conv", TensorDesc::f32(cin, h, w));
    let x = g.push("in", LayerKind::Input, vec![]);
    let n = p.out_channels * (cin / p.groups) * p.kh * p.kw;
    g.add_weight(WeightTensor::f32(
        "w",
        vec![p.out_channels, cin / p.groups, p.kh, p.kw],
        (0..n).map(|_| rng.random_range(-0.1..0.1)).collect(),
    ));
    g.add_weight(WeightTensor::f32("b", vec![p.out_channels], vec![0.01; p.out_channels]));
    let c = g.push("conv", LayerKind::Convolution(p), vec![x]);
    g.node_mut(c).unwrap().weights = vec!["w".into(), "b".into()];
    g
}

/// Layers shaped like the keyword-spotting networks' middle stages.
fn conv_impls(c: &mut Criterion) {
    let reg = Registry::with_defaults();
    let shapes = [
        ("3x3_40to30", 40, ConvParams::new(3, 3, 30)),
        ("5x5_50to50", 50, ConvParams::new(5, 5, 50)),
        ("1x1_30to30", 30, ConvParams::new(1, 1, 30)),
    ];
    for (label, cin, p) in shapes {
        let g = conv_graph(cin, 40, 16, p.padding(Padding::Same));
        let plan = compile(&g, &CompileOptions::default()).unwrap();
        let x = random_input(g.input, &mut ChaCha8Rng::seed_from_u64(1));
        let mut group = c.benchmark_group(format!("conv_{}", label));
        let conv = &plan.graph.nodes[1];
        for id in reg.implementations_for(&plan.graph, conv) {
            let a = reg.uniform_assignment(&plan.graph, &[id]).unwrap();
            let bound = plan.bind(&reg, &a).unwrap();
            let mut exec = Executor::new(&bound, &reg, &a).unwrap();
            group.bench_with_input(BenchmarkId::from_parameter(id), &x, |b, x| {
                b.iter(|| black_box(exec.run(x).unwrap()))
            });
        }
        group.finish();
    }
}

fn networks(c: &mut Criterion) {
    let reg = Registry::with_defaults();
    for spec in [kws9(), kws1()] {
        let g = build_network(&spec, 0).unwrap();
        let plan = compile(&g, &CompileOptions::default()).unwrap();
        let x = random_input(g.input, &mut ChaCha8Rng::seed_from_u64(2));
        let mut group = c.benchmark_group(format!("net_{}", spec.name));
        group.sample_size(10);
        for id in [ids::CONV_IM2COL, ids::CONV_WINOGRAD, ids::CONV_DIRECT_HWC] {
            let a = reg.uniform_assignment(&plan.graph, &[id]).unwrap();
            let bound = plan.bind(&reg, &a).unwrap();
            let mut exec = Executor::new(&bound, &reg, &a).unwrap();
            group.bench_with_input(BenchmarkId::from_parameter(id), &x, |b, x| {
                b.iter(|| black_box(exec.run(x).unwrap()))
            });
        }
        group.finish();
    }
}

criterion_group!(benches, conv_impls, networks);
criterion_main!(benches);
