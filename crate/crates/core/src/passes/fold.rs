use std::collections::BTreeMap;

use super::{rewire, PassReport};
use crate::error::Result;
use crate::graph::{model_size_bytes, Graph, LayerKind, TensorData, WeightTensor};

fn f32_of(graph: &Graph, name: &str) -> Result<Vec<f64>> {
    let t = graph.weight(name)?;
    Ok(match &t.data {
        TensorData::F32(v) => v.iter().map(|x| *x as f64).collect(),
        _ => unreachable!("checked by caller"),
    })
}

fn all_f32(graph: &Graph, names: &[String]) -> bool {
    names
        .iter()
        .all(|n| graph.weights.get(n).is_some_and(|t| t.dtype() == crate::DataType::F32))
}

/// Merges BatchNorm and/or Scale nodes into the convolution or fully
/// connected layer feeding them:
///
/// ```text
/// W' = W·γ/√(σ²+ε)        b' = (b−μ)·γ/√(σ²+ε) + β
/// ```
///
/// A producer qualifies only when it is f32, has no fused activation and the
/// normalization node is its sole consumer. Anything else is left in place and
/// noted in the report.
pub fn fold_bn_scale(graph: &Graph) -> Result<(Graph, PassReport)> {
    let mut g = graph.clone();
    let mut report = PassReport::new("fold_bn_scale");
    let size_before = model_size_bytes(&g);
    let mut skipped: BTreeMap<usize, String> = BTreeMap::new();

    let producers: Vec<usize> = g
        .nodes
        .iter()
        .filter(|n| n.kind.has_weights_matrix())
        .map(|n| n.id)
        .collect();
    for pid in producers {
        let producer = g.node(pid).expect("exists").clone();
        let consumers = g.consumers(pid);
        let [first] = consumers[..] else { continue };
        let first_node = g.node(first).expect("exists").clone();

        let (bn, sc) = match first_node.kind {
            LayerKind::BatchNorm { .. } => {
                let next = g.consumers(first);
                let scale = match next[..] {
                    [s] if matches!(g.node(s).map(|n| n.kind), Some(LayerKind::Scale)) => Some(s),
                    _ => None,
                };
                (Some(first), scale)
            }
            LayerKind::Scale => (None, Some(first)),
            _ => continue,
        };
        if producer.fused_relu {
            skipped.insert(first, format!("producer {} has a fused activation", pid));
            continue;
        }
        let mut names = producer.weights.clone();
        for id in bn.iter().chain(sc.iter()) {
            names.extend(g.node(*id).expect("exists").weights.iter().cloned());
        }
        if !all_f32(&g, &names) {
            skipped.insert(first, "weights are not f32".into());
            continue;
        }

        let w_name = producer.weights[0].clone();
        let w_dims = g.weight(&w_name)?.dims.clone();
        let out_ch = w_dims[0];
        let mut mul = vec![1.0f64; out_ch];
        let mut add = vec![0.0f64; out_ch];
        if let Some(id) = bn {
            let node = g.node(id).expect("exists");
            let LayerKind::BatchNorm { epsilon } = node.kind else { unreachable!() };
            let mean = f32_of(&g, &node.weights[0])?;
            let var = f32_of(&g, &node.weights[1])?;
            for c in 0..out_ch {
                let inv = 1.0 / (var[c] + epsilon as f64).sqrt();
                mul[c] = inv;
                add[c] = -mean[c] * inv;
            }
        }
        if let Some(id) = sc {
            let node = g.node(id).expect("exists");
            let gamma = f32_of(&g, &node.weights[0])?;
            let beta = f32_of(&g, &node.weights[1])?;
            for c in 0..out_ch {
                mul[c] *= gamma[c];
                add[c] = add[c] * gamma[c] + beta[c];
            }
        }

        let w = f32_of(&g, &w_name)?;
        let per_out = w.len() / out_ch;
        let new_w: Vec<f32> = w
            .iter()
            .enumerate()
            .map(|(i, v)| (v * mul[i / per_out]) as f32)
            .collect();
        let bias_name = match producer.weights.get(1) {
            Some(b) => b.clone(),
            None => {
                let mut name = format!("{}.bias", producer.name);
                while g.weights.contains_key(&name) {
                    name.push('_');
                }
                name
            }
        };
        let b = match producer.weights.get(1) {
            Some(b) => f32_of(&g, b)?,
            None => vec![0.0; out_ch],
        };
        let new_b: Vec<f32> = (0..out_ch).map(|c| (b[c] * mul[c] + add[c]) as f32).collect();

        g.add_weight(WeightTensor::f32(w_name.clone(), w_dims, new_w));
        g.add_weight(WeightTensor::f32(bias_name.clone(), vec![out_ch], new_b));
        g.node_mut(pid).expect("exists").weights = vec![w_name, bias_name];

        let removed: Vec<usize> = bn.iter().chain(sc.iter()).copied().collect();
        let last = *removed.last().expect("at least one");
        rewire(&mut g, last, pid);
        g.nodes.retain(|n| !removed.contains(&n.id));
        report.nodes_removed += removed.len();
    }

    for n in &g.nodes {
        if matches!(n.kind, LayerKind::BatchNorm { .. } | LayerKind::Scale) {
            let reason = skipped
                .remove(&n.id)
                .unwrap_or_else(|| "no foldable producer".into());
            report.skipped.push(format!("node {} ({}): {}", n.id, n.name, reason));
        }
    }
    g.prune_weights();
    crate::graph::infer_shapes(&mut g)?;
    report.bytes_saved = size_before.saturating_sub(model_size_bytes(&g));
    Ok((g, report))
}
