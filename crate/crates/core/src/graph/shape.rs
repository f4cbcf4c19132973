use super::{ConvParams, Graph, LayerKind, Layout, Padding, Shape, TensorDesc};
use crate::error::{Error, Result};

/// Output extent and leading padding of a convolution over an input plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn same_axis(input: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(input);
    (out, total / 2)
}

fn valid_axis(input: usize, k: usize, stride: usize) -> Option<usize> {
    (input >= k).then(|| (input - k) / stride + 1)
}

/// Same padding yields `ceil(H/stride)`, the smaller half of the padding going
/// first; Valid yields `floor((H-k)/stride)+1`.
pub fn conv_geometry(p: &ConvParams, input: Shape, node: usize) -> Result<ConvGeometry> {
    if p.kh == 0 || p.kw == 0 || p.stride_h == 0 || p.stride_w == 0 {
        return Err(Error::Shape {
            node,
            msg: "kernel extents and strides must be positive".into(),
        });
    }
    match p.padding {
        Padding::Same => {
            let (out_h, pad_top) = same_axis(input.h, p.kh, p.stride_h);
            let (out_w, pad_left) = same_axis(input.w, p.kw, p.stride_w);
            Ok(ConvGeometry {
                out_h,
                out_w,
                pad_top,
                pad_left,
            })
        }
        Padding::Valid => {
            let (Some(out_h), Some(out_w)) = (
                valid_axis(input.h, p.kh, p.stride_h),
                valid_axis(input.w, p.kw, p.stride_w),
            ) else {
                return Err(Error::Shape {
                    node,
                    msg: format!(
                        "kernel {}x{} larger than input {}x{}",
                        p.kh, p.kw, input.h, input.w
                    ),
                });
            };
            Ok(ConvGeometry {
                out_h,
                out_w,
                pad_top: 0,
                pad_left: 0,
            })
        }
    }
}

/// Populates `output` on every node. Idempotent.
pub fn infer_shapes(graph: &mut Graph) -> Result<()> {
    let input = graph.input;
    let mut known: std::collections::HashMap<usize, TensorDesc> = Default::default();
    for node in graph.nodes.iter_mut() {
        let ins: Vec<TensorDesc> = node
            .inputs
            .iter()
            .map(|i| {
                known.get(i).copied().ok_or_else(|| Error::Shape {
                    node: node.id,
                    msg: format!("input {} is not produced by an earlier node", i),
                })
            })
            .collect::<Result<_>>()?;
        let err = |msg: String| Error::Shape { node: node.id, msg };
        let first = || ins.first().copied().ok_or_else(|| err("missing input".into()));

        let out = match &node.kind {
            LayerKind::Input => input,
            LayerKind::Convolution(p) => {
                let x = first()?;
                if p.groups == 0 || x.shape.c % p.groups != 0 || p.out_channels % p.groups != 0 {
                    return Err(err(format!(
                        "groups {} must divide input channels {} and output channels {}",
                        p.groups, x.shape.c, p.out_channels
                    )));
                }
                let g = conv_geometry(p, x.shape, node.id)?;
                TensorDesc {
                    shape: Shape::new(p.out_channels, g.out_h, g.out_w),
                    ..x
                }
            }
            LayerKind::BatchNorm { .. } | LayerKind::Scale | LayerKind::Relu | LayerKind::Softmax => {
                first()?
            }
            LayerKind::AveragePool(p) => {
                let x = first()?;
                if p.global {
                    TensorDesc {
                        shape: Shape::new(x.shape.c, 1, 1),
                        ..x
                    }
                } else {
                    if p.stride_h == 0 || p.stride_w == 0 {
                        return Err(err("pool stride must be positive".into()));
                    }
                    match (
                        valid_axis(x.shape.h, p.kh, p.stride_h),
                        valid_axis(x.shape.w, p.kw, p.stride_w),
                    ) {
                        (Some(h), Some(w)) if p.kh > 0 && p.kw > 0 => TensorDesc {
                            shape: Shape::new(x.shape.c, h, w),
                            ..x
                        },
                        _ => return Err(err("pool window larger than input".into())),
                    }
                }
            }
            LayerKind::Flatten => {
                let x = first()?;
                TensorDesc {
                    shape: Shape::new(x.numel(), 1, 1),
                    ..x
                }
            }
            LayerKind::FullyConnected { out_features } => {
                let x = first()?;
                TensorDesc {
                    shape: Shape::new(*out_features, 1, 1),
                    ..x
                }
            }
            LayerKind::Add => {
                let x = first()?;
                if ins.len() < 2 {
                    return Err(err("add needs at least two inputs".into()));
                }
                if ins.iter().any(|d| d.shape != x.shape) {
                    return Err(err("add inputs differ in shape".into()));
                }
                if ins.iter().any(|d| d.layout != x.layout) {
                    return Err(err("add inputs differ in layout".into()));
                }
                x
            }
            LayerKind::Convert { to } => TensorDesc {
                layout: *to,
                ..first()?
            },
        };
        if out.shape.c == 0 || out.shape.h == 0 || out.shape.w == 0 {
            return Err(err(format!("empty output shape {}", out.shape)));
        }
        known.insert(node.id, out);
        node.output = Some(out);
    }
    Ok(())
}

impl Graph {
    pub fn with_shapes(mut self) -> Result<Self> {
        infer_shapes(&mut self)?;
        Ok(self)
    }

    /// Layout of the graph output; conversions may leave it channel-minor.
    pub fn output_layout(&self) -> Layout {
        self.output_node()
            .and_then(|n| n.output)
            .map(|d| d.layout)
            .unwrap_or(Layout::ChannelMajor)
    }
}
