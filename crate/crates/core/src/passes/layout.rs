use std::collections::HashMap;

use super::{rewire, PassReport};
use crate::error::{Error, Result};
use crate::graph::{Graph, LayerKind, LayerNode, Layout};
use crate::kernels::{needs_impl, Assignment, LayoutReq, Registry};

/// Inserts `Convert` nodes wherever the layout an implementation requires
/// differs from the layout its input arrives in, plus one at the end if the
/// graph output would otherwise leave channel-minor. Existing conversions are
/// dropped first, so the pass can be re-run with a different assignment.
pub fn insert_layout_conversions(
    graph: &Graph,
    registry: &Registry,
    assignment: &Assignment,
) -> Result<(Graph, PassReport)> {
    let mut g = graph.clone();
    let mut report = PassReport::new("insert_layout_conversions");

    let stale: Vec<usize> = g
        .nodes
        .iter()
        .filter(|n| matches!(n.kind, LayerKind::Convert { .. }))
        .map(|n| n.id)
        .collect();
    for id in stale {
        let src = g.node(id).expect("exists").inputs[0];
        rewire(&mut g, id, src);
        g.nodes.retain(|n| n.id != id);
    }

    let mut next_id = g.next_id();
    let mut layout_of: HashMap<usize, Layout> = HashMap::new();
    // (source, target layout) → conversion node already emitted
    let mut converted: HashMap<(usize, Layout), usize> = HashMap::new();
    let mut out_nodes: Vec<LayerNode> = Vec::with_capacity(g.nodes.len() + 4);

    for mut node in std::mem::take(&mut g.nodes) {
        let produced = if matches!(node.kind, LayerKind::Input) {
            g.input.layout
        } else {
            debug_assert!(needs_impl(&node));
            let impl_id = assignment.get(node.id).ok_or(Error::Unassigned(node.id))?;
            let req = registry.descriptor(impl_id)?.layout;
            let first = layout_of[&node.inputs[0]];
            let want = req.resolve(first);
            for input in node.inputs.iter_mut() {
                if layout_of[input] == want {
                    continue;
                }
                let conv_id = *converted.entry((*input, want)).or_insert_with(|| {
                    let id = next_id;
                    next_id += 1;
                    out_nodes.push(LayerNode::new(
                        id,
                        format!("convert_{}_{}", *input, layout_name(want)),
                        LayerKind::Convert { to: want },
                        vec![*input],
                    ));
                    report.conversions_inserted += 1;
                    id
                });
                layout_of.insert(conv_id, want);
                *input = conv_id;
            }
            match req {
                LayoutReq::Fixed(l) => l,
                LayoutReq::Any => want,
            }
        };
        layout_of.insert(node.id, produced);
        out_nodes.push(node);
    }

    if let Some(last) = out_nodes.last() {
        if layout_of[&last.id] != Layout::ChannelMajor {
            out_nodes.push(LayerNode::new(
                next_id,
                "convert_output",
                LayerKind::Convert {
                    to: Layout::ChannelMajor,
                },
                vec![last.id],
            ));
            report.conversions_inserted += 1;
        }
    }
    g.nodes = out_nodes;
    crate::graph::infer_shapes(&mut g)?;
    Ok((g, report))
}

fn layout_name(l: Layout) -> &'static str {
    match l {
        Layout::ChannelMajor => "chw",
        Layout::ChannelMinor => "hwc",
    }
}
