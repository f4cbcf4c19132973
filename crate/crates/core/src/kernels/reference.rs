//! Ground-truth executor: nested loops, f64 accumulation, channel-major only,
//! no passes, no buffer sharing. Quantized weights are dequantized; activation
//! quantization is not simulated.

use crate::error::{Error, Result};
use crate::graph::{conv_geometry, Graph, LayerKind, Layout, TensorData, TensorDesc, WeightTensor};
use crate::tensor::Tensor;

fn weights_f64(graph: &Graph, node_id: usize, t: &WeightTensor) -> Vec<f64> {
    match &t.data {
        TensorData::F32(v) => v.iter().map(|x| *x as f64).collect(),
        TensorData::I16(v) => {
            let s = graph.quant.layers[&node_id].1.weight_scale as f64;
            v.iter().map(|x| *x as f64 * s).collect()
        }
        TensorData::I8(v) => {
            let s = graph.quant.layers[&node_id].1.weight_scale as f64;
            v.iter().map(|x| *x as f64 * s).collect()
        }
    }
}

/// Output of every node, in node order.
pub fn reference_activations(graph: &Graph, input: &Tensor) -> Result<Vec<Tensor>> {
    let mut graph = graph.clone();
    crate::graph::infer_shapes(&mut graph)?;
    if input.desc.shape != graph.input.shape {
        return Err(Error::InputMismatch(format!(
            "expected {}, got {}",
            graph.input.shape,
            input.desc.shape
        )));
    }
    let input = input.to_channel_major();
    let index = graph.index_map();
    let mut outs: Vec<Vec<f64>> = Vec::with_capacity(graph.nodes.len());
    let mut descs: Vec<TensorDesc> = Vec::with_capacity(graph.nodes.len());

    for node in &graph.nodes {
        let ins: Vec<&Vec<f64>> = node.inputs.iter().map(|i| &outs[index[i]]).collect();
        let in_desc: Vec<TensorDesc> = node.inputs.iter().map(|i| descs[index[i]]).collect();
        let od = node.output.ok_or(Error::ShapesNotInferred)?;
        let w = |i: usize| -> Result<Vec<f64>> {
            let name = &node.weights[i];
            Ok(weights_f64(&graph, node.id, graph.weight(name)?))
        };
        let mut y: Vec<f64> = match node.kind {
            LayerKind::Input => input.data.iter().map(|v| *v as f64).collect(),
            LayerKind::Convolution(p) => {
                let s = in_desc[0].shape;
                let geo = conv_geometry(&p, s, node.id)?;
                let x = ins[0];
                let wt = w(0)?;
                let b = if node.weights.len() > 1 { Some(w(1)?) } else { None };
                let (cin_g, cout_g) = (s.c / p.groups, p.out_channels / p.groups);
                let mut y = vec![0.0; od.numel()];
                for oc in 0..p.out_channels {
                    let g = oc / cout_g;
                    for oy in 0..geo.out_h {
                        for ox in 0..geo.out_w {
                            let mut acc = b.as_ref().map_or(0.0, |b| b[oc]);
                            for icg in 0..cin_g {
                                let ic = g * cin_g + icg;
                                for ky in 0..p.kh {
                                    let iy = (oy * p.stride_h + ky) as isize - geo.pad_top as isize;
                                    if iy < 0 || iy >= s.h as isize {
                                        continue;
                                    }
                                    for kx in 0..p.kw {
                                        let ix = (ox * p.stride_w + kx) as isize - geo.pad_left as isize;
                                        if ix < 0 || ix >= s.w as isize {
                                            continue;
                                        }
                                        acc += wt[((oc * cin_g + icg) * p.kh + ky) * p.kw + kx]
                                            * x[(ic * s.h + iy as usize) * s.w + ix as usize];
                                    }
                                }
                            }
                            y[(oc * geo.out_h + oy) * geo.out_w + ox] = acc;
                        }
                    }
                }
                y
            }
            LayerKind::FullyConnected { out_features } => {
                let x = ins[0];
                let wt = w(0)?;
                let b = if node.weights.len() > 1 { Some(w(1)?) } else { None };
                (0..out_features)
                    .map(|o| {
                        b.as_ref().map_or(0.0, |b| b[o])
                            + x.iter().enumerate().map(|(i, v)| wt[o * x.len() + i] * v).sum::<f64>()
                    })
                    .collect()
            }
            LayerKind::BatchNorm { epsilon } => {
                let (mean, var) = (w(0)?, w(1)?);
                let plane = in_desc[0].shape.h * in_desc[0].shape.w;
                ins[0]
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let c = i / plane;
                        (v - mean[c]) / (var[c] + epsilon as f64).sqrt()
                    })
                    .collect()
            }
            LayerKind::Scale => {
                let (gamma, beta) = (w(0)?, w(1)?);
                let plane = in_desc[0].shape.h * in_desc[0].shape.w;
                ins[0]
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * gamma[i / plane] + beta[i / plane])
                    .collect()
            }
            LayerKind::Relu => ins[0].iter().map(|v| v.max(0.0)).collect(),
            LayerKind::AveragePool(p) => {
                let s = in_desc[0].shape;
                let (kh, kw, sh, sw) = if p.global {
                    (s.h, s.w, 1, 1)
                } else {
                    (p.kh, p.kw, p.stride_h, p.stride_w)
                };
                let o = od.shape;
                let mut y = vec![0.0; od.numel()];
                for c in 0..s.c {
                    for oy in 0..o.h {
                        for ox in 0..o.w {
                            let mut acc = 0.0;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    acc += ins[0][(c * s.h + oy * sh + ky) * s.w + ox * sw + kx];
                                }
                            }
                            y[(c * o.h + oy) * o.w + ox] = acc / (kh * kw) as f64;
                        }
                    }
                }
                y
            }
            LayerKind::Flatten | LayerKind::Convert { .. } => ins[0].clone(),
            LayerKind::Softmax => {
                let s = in_desc[0].shape;
                let plane = s.h * s.w;
                let x = ins[0];
                let mut y = vec![0.0; x.len()];
                for p in 0..plane {
                    let max = (0..s.c).map(|c| x[c * plane + p]).fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = (0..s.c).map(|c| (x[c * plane + p] - max).exp()).sum();
                    for c in 0..s.c {
                        y[c * plane + p] = (x[c * plane + p] - max).exp() / sum;
                    }
                }
                y
            }
            LayerKind::Add => {
                let mut y = ins[0].clone();
                for x in &ins[1..] {
                    y.iter_mut().zip(x.iter()).for_each(|(a, b)| *a += b);
                }
                y
            }
        };
        if node.fused_relu {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        outs.push(y);
        descs.push(TensorDesc {
            layout: Layout::ChannelMajor,
            ..od
        });
    }

    Ok(outs
        .into_iter()
        .zip(descs)
        .map(|(y, desc)| Tensor::new(desc, y.into_iter().map(|v| v as f32).collect()))
        .collect())
}

/// Graph output computed by the reference executor.
pub fn reference_execute(graph: &Graph, input: &Tensor) -> Result<Tensor> {
    reference_activations(graph, input)?
        .pop()
        .ok_or_else(|| Error::InvalidGraph("empty graph".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let mut g = Graph::new("t", TensorDesc::f32(2, 1, 1));
        let x = g.push("in", LayerKind::Input, vec![]);
        g.push("relu", LayerKind::Relu, vec![x]);
        let out = reference_execute(&g, &Tensor::new(g.input, vec![-1.0, 2.0])).unwrap();
        assert_eq!(out.data, vec![0.0, 2.0]);
    }
}
