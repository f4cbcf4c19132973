use serde::Serialize;

use super::{Graph, LayerKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerFlops {
    pub node: usize,
    pub name: String,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopReport {
    pub layers: Vec<LayerFlops>,
    pub total: u64,
}

impl FlopReport {
    /// Total in millions of floating-point operations.
    pub fn mflops(&self) -> f64 {
        self.total as f64 / 1e6
    }
}

/// Counts 2 FLOPs per multiply-accumulate in convolutions and fully connected
/// layers. Every other layer counts zero.
pub fn count_flops(graph: &Graph) -> Result<FlopReport> {
    let mut layers = Vec::with_capacity(graph.nodes.len());
    for node in &graph.nodes {
        let out = node.output.ok_or(Error::ShapesNotInferred)?;
        let macs = match node.kind {
            LayerKind::Convolution(p) => {
                let cin = graph.input_desc(node)?.shape.c;
                (p.kh * p.kw * (cin / p.groups) * p.out_channels * out.shape.h * out.shape.w) as u64
            }
            LayerKind::FullyConnected { out_features } => {
                (graph.input_desc(node)?.numel() * out_features) as u64
            }
            _ => 0,
        };
        layers.push(LayerFlops {
            node: node.id,
            name: node.name.clone(),
            flops: 2 * macs,
        });
    }
    let total = layers.iter().map(|l| l.flops).sum();
    Ok(FlopReport { layers, total })
}

/// Total number of stored weight scalars.
pub fn count_params(graph: &Graph) -> usize {
    graph.weights.values().map(|w| w.numel()).sum()
}

pub fn model_size_bytes(graph: &Graph) -> usize {
    graph.weights.values().map(|w| w.size_bytes()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorSparsity {
    pub name: String,
    pub zeros: usize,
    pub total: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityReport {
    pub tensors: Vec<TensorSparsity>,
    pub overall: f64,
}

/// Fraction of exactly-zero values per weight tensor and over the model.
pub fn sparsity_report(graph: &Graph) -> SparsityReport {
    let tensors: Vec<TensorSparsity> = graph
        .weights
        .values()
        .map(|w| {
            let zeros = w.data.count_zeros();
            let total = w.data.len();
            TensorSparsity {
                name: w.name.clone(),
                zeros,
                total,
                fraction: if total == 0 { 0.0 } else { zeros as f64 / total as f64 },
            }
        })
        .collect();
    let zeros: usize = tensors.iter().map(|t| t.zeros).sum();
    let total: usize = tensors.iter().map(|t| t.total).sum();
    SparsityReport {
        overall: if total == 0 { 0.0 } else { zeros as f64 / total as f64 },
        tensors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, ConvParams, TensorDesc, WeightTensor};

    #[test]
    fn unit_conv_is_two_flops() {
        let mut g = Graph::new("t", TensorDesc::f32(1, 1, 1));
        let x = g.push("in", LayerKind::Input, vec![]);
        g.push("c", LayerKind::Convolution(ConvParams::new(1, 1, 1)), vec![x]);
        infer_shapes(&mut g).unwrap();
        assert_eq!(count_flops(&g).unwrap().total, 2);
    }

    #[test]
    fn flops_need_shapes() {
        let mut g = Graph::new("t", TensorDesc::f32(1, 1, 1));
        g.push("in", LayerKind::Input, vec![]);
        assert!(matches!(count_flops(&g), Err(Error::ShapesNotInferred)));
    }

    #[test]
    fn relu_only_graph_has_no_params() {
        let mut g = Graph::new("t", TensorDesc::f32(1, 2, 2));
        let x = g.push("in", LayerKind::Input, vec![]);
        g.push("r", LayerKind::Relu, vec![x]);
        assert_eq!(count_params(&g), 0);
        assert_eq!(model_size_bytes(&g), 0);
    }

    #[test]
    fn sparsity_fractions() {
        let mut g = Graph::new("t", TensorDesc::f32(1, 1, 1));
        g.add_weight(WeightTensor::f32("zeros", vec![4], vec![0.0; 4]));
        g.add_weight(WeightTensor::f32("dense", vec![3], vec![0.3, -1.2, 2.0]));
        let mut v = vec![1.0f32; 10];
        v[3] = 0.0;
        v[7] = 0.0;
        g.add_weight(WeightTensor::f32("two", vec![10], v));
        let r = sparsity_report(&g);
        let frac = |n: &str| r.tensors.iter().find(|t| t.name == n).unwrap().fraction;
        assert_eq!(frac("zeros"), 1.0);
        assert_eq!(frac("dense"), 0.0);
        assert!((frac("two") - 0.2).abs() < 1e-12);
        assert!((r.overall - 6.0 / 17.0).abs() < 1e-12);
    }
}
