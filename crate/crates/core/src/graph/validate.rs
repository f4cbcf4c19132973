use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::{infer_shapes, Graph, LayerKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub node: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(id) => write!(f, "node {}: {}", id, self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks structural invariants and weight shapes. An empty list means the
/// graph is valid.
pub fn validate(graph: &Graph) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut diag = |node: Option<usize>, message: String| out.push(Diagnostic { node, message });

    let inputs = graph
        .nodes
        .iter()
        .filter(|n| matches!(n.kind, LayerKind::Input))
        .count();
    if inputs != 1 {
        diag(None, format!("expected exactly one input node, found {}", inputs));
    }
    if let Some(first) = graph.nodes.first() {
        if !matches!(first.kind, LayerKind::Input) {
            diag(Some(first.id), "first node must be the input".into());
        }
    }

    let mut seen = HashSet::new();
    for node in &graph.nodes {
        for src in &node.inputs {
            if !seen.contains(src) {
                diag(
                    Some(node.id),
                    format!("input {} does not refer to an earlier node (graph must be acyclic and topologically ordered)", src),
                );
            }
        }
        if !seen.insert(node.id) {
            diag(Some(node.id), "duplicate node id".into());
        }

        let arity_ok = match node.kind {
            LayerKind::Input => node.inputs.is_empty(),
            LayerKind::Add => node.inputs.len() >= 2,
            _ => node.inputs.len() == 1,
        };
        if !arity_ok {
            diag(
                Some(node.id),
                format!("{:?} node has {} inputs", node.kind.op(), node.inputs.len()),
            );
        }

        let (min_w, max_w) = match node.kind {
            LayerKind::Convolution(_) | LayerKind::FullyConnected { .. } => (1, 2),
            LayerKind::BatchNorm { .. } | LayerKind::Scale => (2, 2),
            _ => (0, 0),
        };
        if node.weights.len() < min_w || node.weights.len() > max_w {
            diag(
                Some(node.id),
                format!(
                    "{:?} expects {}..={} weight tensors, has {}",
                    node.kind.op(),
                    min_w,
                    max_w,
                    node.weights.len()
                ),
            );
        }
        for w in &node.weights {
            match graph.weights.get(w) {
                None => diag(Some(node.id), format!("weight `{}` does not exist", w)),
                Some(t) if t.data.len() != t.numel() => diag(
                    Some(node.id),
                    format!(
                        "weight `{}` holds {} values for dims {:?}",
                        w,
                        t.data.len(),
                        t.dims
                    ),
                ),
                _ => {}
            }
        }
        if node.fused_relu && !node.kind.has_weights_matrix() {
            diag(
                Some(node.id),
                "fused activation only allowed on convolution or fully connected".into(),
            );
        }
    }

    for id in graph.quant.layers.keys() {
        match graph.node(*id) {
            Some(n) if n.kind.has_weights_matrix() => {}
            _ => diag(
                Some(*id),
                "quantization parameters on a non-quantizable node".into(),
            ),
        }
    }

    if !out.is_empty() {
        return out;
    }

    let mut shaped = graph.clone();
    if let Err(e) = infer_shapes(&mut shaped) {
        out.push(Diagnostic {
            node: None,
            message: e.to_string(),
        });
        return out;
    }
    for node in &shaped.nodes {
        let Ok(input) = shaped.input_desc(node) else {
            continue;
        };
        let cin = input.shape.c;
        let dims_of = |i: usize| node.weights.get(i).and_then(|w| graph.weights.get(w)).map(|t| t.dims.clone());
        let mut expect = |i: usize, dims: Vec<usize>| {
            if let Some(actual) = dims_of(i) {
                if actual != dims {
                    out.push(Diagnostic {
                        node: Some(node.id),
                        message: format!(
                            "weight `{}` has dims {:?}, expected {:?}",
                            node.weights[i], actual, dims
                        ),
                    });
                }
            }
        };
        match node.kind {
            LayerKind::Convolution(p) => {
                expect(0, vec![p.out_channels, cin / p.groups, p.kh, p.kw]);
                expect(1, vec![p.out_channels]);
            }
            LayerKind::FullyConnected { out_features } => {
                expect(0, vec![out_features, input.numel()]);
                expect(1, vec![out_features]);
            }
            LayerKind::BatchNorm { .. } | LayerKind::Scale => {
                expect(0, vec![cin]);
                expect(1, vec![cin]);
            }
            _ => {}
        }
    }
    out
}
