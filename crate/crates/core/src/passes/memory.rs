use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Assignment of every node output to an arena buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryPlan {
    pub buffer_of: BTreeMap<usize, usize>,
    pub buffer_bytes: Vec<usize>,
    pub peak_bytes: usize,
    /// One buffer per node output, no reuse.
    pub naive_bytes: usize,
    /// Nodes whose output aliases their input buffer.
    pub in_place: BTreeSet<usize>,
}

impl MemoryPlan {
    pub fn buffer_count(&self) -> usize {
        self.buffer_bytes.len()
    }
}

/// Live interval of each node output as (producer index, last consumer index).
/// The graph output stays live to the end.
pub fn live_ranges(graph: &Graph) -> Vec<(usize, usize)> {
    let index = graph.index_map();
    let n = graph.nodes.len();
    let mut ranges: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    for (i, node) in graph.nodes.iter().enumerate() {
        for src in &node.inputs {
            ranges[index[src]].1 = i;
        }
    }
    if let Some(last) = ranges.last_mut() {
        last.1 = n;
    }
    ranges
}

fn output_bytes(graph: &Graph) -> Result<Vec<usize>> {
    graph
        .nodes
        .iter()
        .map(|n| n.output.map(|d| d.numel() * 4).ok_or(Error::ShapesNotInferred))
        .collect()
}

pub fn naive_plan(graph: &Graph) -> Result<MemoryPlan> {
    let bytes = output_bytes(graph)?;
    let total = bytes.iter().sum();
    Ok(MemoryPlan {
        buffer_of: graph.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect(),
        buffer_bytes: bytes,
        peak_bytes: total,
        naive_bytes: total,
        in_place: BTreeSet::new(),
    })
}

/// Greedy first-fit buffer sharing over live intervals in topological order.
///
/// Elementwise nodes (ReLU, Scale, BatchNorm) whose input has no other
/// consumer write into their input's buffer. Every other output takes the
/// first free buffer already large enough, else the largest free buffer
/// (grown to fit), else a new one. A buffer is free once the last consumer of
/// its current occupant has run.
pub fn plan_memory(graph: &Graph) -> Result<MemoryPlan> {
    let bytes = output_bytes(graph)?;
    let index = graph.index_map();
    let ranges = live_ranges(graph);
    let consumer_count = {
        let mut c = vec![0usize; graph.nodes.len()];
        for node in &graph.nodes {
            for src in &node.inputs {
                c[index[src]] += 1;
            }
        }
        c
    };

    let mut buffer_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut buffer_bytes: Vec<usize> = Vec::new();
    // index of the last step at which each buffer is still needed
    let mut busy_until: Vec<usize> = Vec::new();
    let mut in_place = BTreeSet::new();

    for (i, node) in graph.nodes.iter().enumerate() {
        let end = ranges[i].1;
        if node.kind.is_elementwise() && node.inputs.len() == 1 {
            let src = index[&node.inputs[0]];
            if consumer_count[src] == 1 {
                let b: usize = buffer_of[&node.inputs[0]];
                buffer_of.insert(node.id, b);
                busy_until[b] = busy_until[b].max(end);
                in_place.insert(node.id);
                continue;
            }
        }
        let need = bytes[i];
        let free: Vec<usize> = (0..buffer_bytes.len()).filter(|b| busy_until[*b] < i).collect();
        let pick = free
            .iter()
            .copied()
            .find(|b| buffer_bytes[*b] >= need)
            .or_else(|| free.iter().copied().max_by_key(|b| (buffer_bytes[*b], usize::MAX - b)));
        let b = match pick {
            Some(b) => {
                buffer_bytes[b] = buffer_bytes[b].max(need);
                b
            }
            None => {
                buffer_bytes.push(need);
                busy_until.push(0);
                buffer_bytes.len() - 1
            }
        };
        busy_until[b] = end;
        buffer_of.insert(node.id, b);
    }

    Ok(MemoryPlan {
        buffer_of,
        peak_bytes: buffer_bytes.iter().sum(),
        naive_bytes: bytes.iter().sum(),
        buffer_bytes,
        in_place,
    })
}
