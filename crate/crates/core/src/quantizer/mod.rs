//! Post-training symmetric quantization: per-tensor max-abs calibration,
//! weight conversion to int8/int16 and per-layer sensitivity.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{DataType, Graph, LayerQuant, QuantScheme, TensorData, WeightTensor};
use crate::kernels::{ids, quantize_value, reference_activations, Executor, Registry};
use crate::passes::{compile, CompileOptions};
use crate::tensor::Tensor;

/// Scales never drop below this, so all-zero tensors still quantize.
pub const SCALE_FLOOR: f32 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantParams {
    pub scheme: QuantScheme,
    /// Keyed by node id; one entry per convolution / fully connected layer.
    pub layers: BTreeMap<usize, LayerQuant>,
}

fn scale_for(max_abs: f64, scheme: QuantScheme) -> f32 {
    ((max_abs / scheme.qmax() as f64) as f32).max(SCALE_FLOOR)
}

fn max_abs(v: &[f32]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs() as f64))
}

/// Weight scale from the weight tensor; input and output scales from the
/// largest magnitude each layer sees or produces over `inputs`, gathered with
/// the reference executor.
pub fn calibrate(graph: &Graph, inputs: &[Tensor], scheme: QuantScheme) -> Result<QuantParams> {
    if inputs.is_empty() {
        return Err(Error::Quant("calibration set is empty".into()));
    }
    if let Some(w) = graph.weights.values().find(|w| w.dtype() != DataType::F32) {
        return Err(Error::Quant(format!("graph is already quantized (`{}`)", w.name)));
    }
    let index = graph.index_map();
    let layers: Vec<usize> = (0..graph.nodes.len())
        .filter(|i| graph.nodes[*i].kind.has_weights_matrix())
        .collect();
    let mut in_max = vec![0.0f64; graph.nodes.len()];
    let mut out_max = vec![0.0f64; graph.nodes.len()];
    for x in inputs {
        let acts = reference_activations(graph, x)?;
        for &i in &layers {
            let src = index[&graph.nodes[i].inputs[0]];
            in_max[i] = in_max[i].max(max_abs(&acts[src].data));
            out_max[i] = out_max[i].max(max_abs(&acts[i].data));
        }
    }
    let mut out = BTreeMap::new();
    for i in layers {
        let node = &graph.nodes[i];
        let w = graph.weight(&node.weights[0])?;
        let w = w.as_f32().expect("checked f32");
        out.insert(
            node.id,
            LayerQuant {
                weight_scale: scale_for(max_abs(w), scheme),
                input_scale: scale_for(in_max[i], scheme),
                output_scale: scale_for(out_max[i], scheme),
            },
        );
    }
    Ok(QuantParams { scheme, layers: out })
}

/// Codes for `values` under `scale`, round half away from zero, saturating.
pub fn quantize_tensor(t: &WeightTensor, scale: f32, scheme: QuantScheme) -> Result<WeightTensor> {
    let v = t
        .as_f32()
        .ok_or_else(|| Error::Quant(format!("`{}` is not f32", t.name)))?;
    let q = scheme.qmax();
    let data = match scheme {
        QuantScheme::Int8Sym => TensorData::I8(v.iter().map(|x| quantize_value(*x, scale, q) as i8).collect()),
        QuantScheme::Int16Sym => TensorData::I16(v.iter().map(|x| quantize_value(*x, scale, q) as i16).collect()),
    };
    Ok(WeightTensor {
        name: t.name.clone(),
        dims: t.dims.clone(),
        data,
    })
}

/// Quantizes every convolution and fully connected layer.
pub fn quantize(graph: &Graph, params: &QuantParams) -> Result<Graph> {
    let all: Vec<usize> = graph
        .nodes
        .iter()
        .filter(|n| n.kind.has_weights_matrix())
        .map(|n| n.id)
        .collect();
    quantize_layers(graph, params, &all)
}

/// Quantizes only the listed layers; the rest stay f32. Weight matrices
/// become integer codes with their scales recorded in the graph; biases and
/// normalization parameters stay f32.
pub fn quantize_layers(graph: &Graph, params: &QuantParams, layers: &[usize]) -> Result<Graph> {
    let mut g = graph.clone();
    for &id in layers {
        let node = g
            .node(id)
            .ok_or_else(|| Error::Quant(format!("node {} not found", id)))?
            .clone();
        if !node.kind.has_weights_matrix() {
            return Err(Error::Quant(format!("node {} ({}) has no weight matrix", id, node.name)));
        }
        let lq = *params
            .layers
            .get(&id)
            .ok_or_else(|| Error::Quant(format!("no quantization parameters for node {} ({})", id, node.name)))?;
        let name = &node.weights[0];
        let shared = g.nodes.iter().filter(|n| n.weights.contains(name)).count() > 1;
        if shared {
            return Err(Error::Quant(format!("weight `{}` is shared between layers", name)));
        }
        let q = quantize_tensor(g.weight(name)?, lq.weight_scale, params.scheme)?;
        g.add_weight(q);
        g.quant.layers.insert(id, (params.scheme, lq));
    }
    Ok(g)
}

/// Real-valued weights back from codes (`code × weight_scale`), scales dropped.
pub fn dequantize(graph: &Graph) -> Result<Graph> {
    let mut g = graph.clone();
    for (id, (_, lq)) in std::mem::take(&mut g.quant.layers) {
        let node = g.node(id).ok_or_else(|| Error::Quant(format!("node {} not found", id)))?;
        let t = g.weight(&node.weights[0])?;
        let s = lq.weight_scale;
        let data: Vec<f32> = match &t.data {
            TensorData::I8(v) => v.iter().map(|c| *c as f32 * s).collect(),
            TensorData::I16(v) => v.iter().map(|c| *c as f32 * s).collect(),
            TensorData::F32(v) => v.clone(),
        };
        let t = WeightTensor::f32(t.name.clone(), t.dims.clone(), data);
        g.add_weight(t);
    }
    Ok(g)
}

/// Bytes held by convolution / fully connected weight matrices.
pub fn weight_payload_bytes(graph: &Graph) -> usize {
    graph
        .nodes
        .iter()
        .filter(|n| n.kind.has_weights_matrix())
        .filter_map(|n| graph.weights.get(&n.weights[0]))
        .map(|w| w.size_bytes())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSensitivity {
    pub node: usize,
    pub name: String,
    /// Fraction of evaluation inputs whose top-1 class matches the expected one.
    pub agreement: f64,
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub scheme: QuantScheme,
    pub samples: usize,
    /// Agreement of the unquantized model with the expected labels.
    pub baseline: f64,
    /// Sorted by drop, largest first; ties keep graph order.
    pub layers: Vec<LayerSensitivity>,
}

/// Top-1 class of every input, run through the optimized executor with GEMM
/// convolutions (the integer kernels for quantized layers).
pub fn top1(graph: &Graph, inputs: &[Tensor]) -> Result<Vec<usize>> {
    let registry = Registry::with_defaults();
    let opts = CompileOptions {
        fold: false,
        fuse: false,
        plan: true,
    };
    let plan = compile(graph, &opts)?;
    let a = registry.uniform_assignment(&plan.graph, &[ids::CONV_IM2COL])?;
    let bound = plan.bind(&registry, &a)?;
    let mut exec = Executor::new(&bound, &registry, &a)?;
    inputs.iter().map(|x| Ok(exec.run(x)?.argmax())).collect()
}

fn agreement(got: &[usize], want: &[usize]) -> f64 {
    got.iter().zip(want).filter(|(a, b)| a == b).count() as f64 / want.len() as f64
}

/// Quantizes one layer at a time and measures top-1 agreement with
/// `expected`, or with the f32 model's own predictions when `expected` is
/// `None`.
pub fn sensitivity_report(
    graph: &Graph,
    inputs: &[Tensor],
    expected: Option<&[usize]>,
    params: &QuantParams,
) -> Result<SensitivityReport> {
    if inputs.is_empty() {
        return Err(Error::Quant("evaluation set is empty".into()));
    }
    let reference;
    let expected = match expected {
        Some(e) if e.len() != inputs.len() => {
            return Err(Error::Quant(format!("{} labels for {} inputs", e.len(), inputs.len())))
        }
        Some(e) => e,
        None => {
            reference = top1(graph, inputs)?;
            &reference
        }
    };
    let baseline = agreement(&top1(graph, inputs)?, expected);
    let mut layers = Vec::new();
    for node in graph.nodes.iter().filter(|n| n.kind.has_weights_matrix()) {
        let q = quantize_layers(graph, params, &[node.id])?;
        let a = agreement(&top1(&q, inputs)?, expected);
        layers.push(LayerSensitivity {
            node: node.id,
            name: node.name.clone(),
            agreement: a,
            drop: baseline - a,
        });
    }
    layers.sort_by(|a, b| b.drop.total_cmp(&a.drop));
    Ok(SensitivityReport {
        scheme: params.scheme,
        samples: inputs.len(),
        baseline,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ConvParams, LayerKind, TensorDesc};
    use crate::netbuilder::random::random_input;
    use crate::netbuilder::{build_network, kws9, seed_cnn};
    use crate::tensor::max_relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inputs(g: &Graph, n: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| random_input(g.input, &mut rng)).collect()
    }

    fn folded(g: &Graph) -> Graph {
        compile(g, &CompileOptions::default()).unwrap().graph
    }

    #[test]
    fn constant_weights_give_exact_scale() {
        let mut g = Graph::new("c", TensorDesc::f32(1, 2, 2));
        let x = g.push("in", LayerKind::Input, vec![]);
        g.add_weight(WeightTensor::f32("w", vec![1, 1, 1, 1], vec![2.54]));
        let c = g.push("conv", LayerKind::Convolution(ConvParams::new(1, 1, 1)), vec![x]);
        g.node_mut(c).unwrap().weights = vec!["w".into()];
        crate::graph::infer_shapes(&mut g).unwrap();
        let x = Tensor::new(g.input, vec![1.0, -1.0, 0.5, 0.0]);
        let p = calibrate(&g, &[x], QuantScheme::Int8Sym).unwrap();
        let lq = p.layers[&c];
        assert!((lq.weight_scale - 0.02).abs() < 1e-7);
        assert!((lq.input_scale - 1.0 / 127.0).abs() < 1e-9);
        assert!(calibrate(&g, &[], QuantScheme::Int8Sym).is_err());
    }

    #[test]
    fn identity_network_output_scale() {
        let mut g = Graph::new("id", TensorDesc::f32(1, 1, 4));
        let x = g.push("in", LayerKind::Input, vec![]);
        g.add_weight(WeightTensor::f32("w", vec![1, 1, 1, 1], vec![1.0]));
        let c = g.push("conv", LayerKind::Convolution(ConvParams::new(1, 1, 1)), vec![x]);
        g.node_mut(c).unwrap().weights = vec!["w".into()];
        crate::graph::infer_shapes(&mut g).unwrap();
        let x = Tensor::new(g.input, vec![-1.0, 0.25, 1.0, 0.0]);
        let p = calibrate(&g, &[x], QuantScheme::Int16Sym).unwrap();
        assert!((p.layers[&c].output_scale - 1.0 / 32767.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_weights_hit_the_floor() {
        let mut g = Graph::new("z", TensorDesc::f32(1, 1, 1));
        let x = g.push("in", LayerKind::Input, vec![]);
        g.add_weight(WeightTensor::f32("w", vec![1, 1, 1, 1], vec![0.0]));
        let c = g.push("conv", LayerKind::Convolution(ConvParams::new(1, 1, 1)), vec![x]);
        g.node_mut(c).unwrap().weights = vec!["w".into()];
        crate::graph::infer_shapes(&mut g).unwrap();
        let p = calibrate(&g, &[Tensor::zeros(g.input)], QuantScheme::Int8Sym).unwrap();
        assert_eq!(p.layers[&c].weight_scale, SCALE_FLOOR);
        assert_eq!(p.layers[&c].output_scale, SCALE_FLOOR);
    }

    #[test]
    fn payload_ratios() {
        let g = folded(&build_network(&seed_cnn(), 0).unwrap());
        let xs = inputs(&g, 1, 0);
        let f32_bytes = weight_payload_bytes(&g) as f64;
        for (scheme, ratio) in [(QuantScheme::Int16Sym, 0.5), (QuantScheme::Int8Sym, 0.25)] {
            let p = calibrate(&g, &xs, scheme).unwrap();
            let q = quantize(&g, &p).unwrap();
            let r = weight_payload_bytes(&q) as f64 / f32_bytes;
            assert!((r - ratio).abs() <= 0.01, "{:?}: {}", scheme, r);
        }
    }

    #[test]
    fn missing_params_is_an_error() {
        let g = folded(&build_network(&kws9(), 0).unwrap());
        let mut p = calibrate(&g, &inputs(&g, 1, 0), QuantScheme::Int8Sym).unwrap();
        let first = *p.layers.keys().next().unwrap();
        p.layers.remove(&first);
        assert!(matches!(quantize(&g, &p), Err(Error::Quant(_))));
    }

    #[test]
    fn round_trip_within_half_a_step() {
        let g = folded(&build_network(&kws9(), 1).unwrap());
        for scheme in [QuantScheme::Int8Sym, QuantScheme::Int16Sym] {
            let p = calibrate(&g, &inputs(&g, 1, 0), scheme).unwrap();
            let q = quantize(&g, &p).unwrap();
            let back = dequantize(&q).unwrap();
            for (id, lq) in &p.layers {
                let name = &g.node(*id).unwrap().weights[0];
                let a = g.weights[name].as_f32().unwrap();
                let codes: Vec<f64> = match &q.weights[name].data {
                    TensorData::I8(v) => v.iter().map(|c| *c as f64).collect(),
                    TensorData::I16(v) => v.iter().map(|c| *c as f64).collect(),
                    TensorData::F32(_) => panic!("not quantized"),
                };
                let s = lq.weight_scale as f64;
                for (x, c) in a.iter().zip(&codes) {
                    assert!((*x as f64 - c * s).abs() <= s / 2.0 * (1.0 + 1e-9));
                }
                let b = back.weights[name].as_f32().unwrap();
                assert!(b.iter().zip(&codes).all(|(y, c)| *y == (*c as f32) * lq.weight_scale));
            }
        }
    }

    #[test]
    fn int16_kws9_tracks_f32() {
        let g = folded(&build_network(&kws9(), 2).unwrap());
        let xs = inputs(&g, 10, 3);
        let p = calibrate(&g, &xs, QuantScheme::Int16Sym).unwrap();
        let q = quantize(&g, &p).unwrap();
        let registry = Registry::with_defaults();
        let run = |g: &Graph, x: &Tensor| {
            let plan = compile(g, &CompileOptions::default()).unwrap();
            let a = registry.default_assignment(&plan.graph).unwrap();
            let b = plan.bind(&registry, &a).unwrap();
            Executor::new(&b, &registry, &a).unwrap().run(x).unwrap()
        };
        for x in &xs {
            let want = run(&g, x);
            let got = run(&q, x);
            assert!(max_relative_error(&got.data, &want.data) <= 1e-3);
        }
    }

    #[test]
    fn sensitivity_is_sorted_and_deterministic() {
        let g = folded(&build_network(&kws9(), 4).unwrap());
        let xs = inputs(&g, 8, 5);
        let p16 = calibrate(&g, &xs, QuantScheme::Int16Sym).unwrap();
        let r = sensitivity_report(&g, &xs, None, &p16).unwrap();
        assert_eq!(r.baseline, 1.0);
        assert_eq!(r.layers.len(), 7);
        assert!(r.layers.windows(2).all(|w| w[0].drop >= w[1].drop));
        assert!(r.layers.iter().all(|l| l.drop <= 0.02));
        assert_eq!(r, sensitivity_report(&g, &xs, None, &p16).unwrap());
        assert!(sensitivity_report(&g, &[], None, &p16).is_err());
    }
}
