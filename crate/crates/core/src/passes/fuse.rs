use super::{rewire, PassReport};
use crate::error::Result;
use crate::graph::{Graph, LayerKind};

/// Folds a ReLU into the flag of the convolution or fully connected layer
/// feeding it, when that layer has no other consumer.
pub fn fuse_activations(graph: &Graph) -> Result<(Graph, PassReport)> {
    let mut g = graph.clone();
    let mut report = PassReport::new("fuse_activations");
    let relus: Vec<usize> = g
        .nodes
        .iter()
        .filter(|n| matches!(n.kind, LayerKind::Relu))
        .map(|n| n.id)
        .collect();
    for rid in relus {
        let src = g.node(rid).expect("exists").inputs[0];
        let producer = g.node(src).expect("exists");
        if !producer.kind.has_weights_matrix() || producer.fused_relu || g.consumers(src).len() != 1 {
            continue;
        }
        g.node_mut(src).expect("exists").fused_relu = true;
        rewire(&mut g, rid, src);
        g.nodes.retain(|n| n.id != rid);
        report.nodes_removed += 1;
    }
    crate::graph::infer_shapes(&mut g)?;
    Ok((g, report))
}
