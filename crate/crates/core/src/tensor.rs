use crate::graph::{Layout, Shape, TensorDesc};

/// A dense f32 activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub desc: TensorDesc,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(desc: TensorDesc, data: Vec<f32>) -> Self {
        assert_eq!(desc.numel(), data.len(), "tensor data does not match shape");
        Tensor { desc, data }
    }

    pub fn zeros(desc: TensorDesc) -> Self {
        Tensor {
            data: vec![0.0; desc.numel()],
            desc,
        }
    }

    pub fn shape(&self) -> Shape {
        self.desc.shape
    }

    /// Index of the largest element; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// Copy of this tensor in channel-major order.
    pub fn to_channel_major(&self) -> Tensor {
        match self.desc.layout {
            Layout::ChannelMajor => self.clone(),
            Layout::ChannelMinor => {
                let mut data = vec![0.0; self.data.len()];
                crate::kernels::hwc_to_chw(&self.data, &mut data, self.desc.shape);
                Tensor {
                    desc: TensorDesc {
                        layout: Layout::ChannelMajor,
                        ..self.desc
                    },
                    data,
                }
            }
        }
    }
}

/// `max|a-b| / max(max|b|, tiny)`: the relative error measure used across
/// equivalence tests.
pub fn max_relative_error(actual: &[f32], reference: &[f32]) -> f64 {
    assert_eq!(actual.len(), reference.len());
    let scale = reference
        .iter()
        .fold(0.0f64, |m, v| m.max((*v as f64).abs()))
        .max(1e-30);
    let diff = actual
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (a, b)| m.max((*a as f64 - *b as f64).abs()));
    if actual.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    diff / scale
}
