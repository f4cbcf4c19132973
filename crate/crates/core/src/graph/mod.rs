//! Computation-graph representation shared by every pass, kernel and tool.
//!
//! A [`Graph`] is a list of [`LayerNode`]s in topological order plus a map of
//! named weight tensors. Nodes reference their producers by id; ids are stable
//! across passes (removed nodes leave gaps, inserted nodes take fresh ids), so
//! an [`Assignment`](crate::kernels::Assignment) made against a compiled graph
//! keeps its meaning.

mod format;
mod shape;
mod stats;
mod validate;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use format::{
    load_model, read_container, read_container_file, save_model, write_container,
    write_container_file, BLOB_MAGIC, BLOB_VERSION,
};
pub use shape::{conv_geometry, infer_shapes, ConvGeometry};
pub use stats::{
    count_flops, count_params, model_size_bytes, sparsity_report, FlopReport, LayerFlops,
    SparsityReport, TensorSparsity,
};
pub use validate::{validate, Diagnostic};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    F32,
    I16,
    I8,
}

impl DataType {
    pub fn byte_width(self) -> usize {
        match self {
            DataType::F32 => 4,
            DataType::I16 => 2,
            DataType::I8 => 1,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            DataType::F32 => 0,
            DataType::I16 => 1,
            DataType::I8 => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DataType::F32),
            1 => Some(DataType::I16),
            2 => Some(DataType::I8),
            _ => None,
        }
    }
}

/// Memory order of an activation tensor. `ChannelMajor` is CHW,
/// `ChannelMinor` is HWC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    ChannelMajor,
    ChannelMinor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Shape { c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.c * self.h * self.w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorDesc {
    pub shape: Shape,
    pub dtype: DataType,
    pub layout: Layout,
}

impl TensorDesc {
    pub fn f32(c: usize, h: usize, w: usize) -> Self {
        TensorDesc {
            shape: Shape::new(c, h, w),
            dtype: DataType::F32,
            layout: Layout::ChannelMajor,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I16(Vec<i16>),
    I8(Vec<i8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I16(v) => v.len(),
            TensorData::I8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DataType {
        match self {
            TensorData::F32(_) => DataType::F32,
            TensorData::I16(_) => DataType::I16,
            TensorData::I8(_) => DataType::I8,
        }
    }

    pub fn count_zeros(&self) -> usize {
        match self {
            TensorData::F32(v) => v.iter().filter(|x| **x == 0.0).count(),
            TensorData::I16(v) => v.iter().filter(|x| **x == 0).count(),
            TensorData::I8(v) => v.iter().filter(|x| **x == 0).count(),
        }
    }
}

/// A named constant tensor (weights, biases, normalization statistics).
/// `dims` is row-major with arbitrary rank: convolution weights are
/// `[out, in/groups, kh, kw]`, fully connected `[out, in]`, per-channel
/// vectors `[C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl WeightTensor {
    pub fn f32(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Self {
        WeightTensor {
            name: name.into(),
            dims,
            data: TensorData::F32(data),
        }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn dtype(&self) -> DataType {
        self.data.dtype()
    }

    pub fn size_bytes(&self) -> usize {
        self.data.len() * self.dtype().byte_width()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvParams {
    pub kh: usize,
    pub kw: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl ConvParams {
    pub fn new(kh: usize, kw: usize, out_channels: usize) -> Self {
        ConvParams {
            kh,
            kw,
            stride_h: 1,
            stride_w: 1,
            out_channels,
            groups: 1,
            padding: Padding::Same,
        }
    }

    pub fn stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride_h = sh;
        self.stride_w = sw;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }
}

/// Average pooling. `global` pools the whole spatial extent and ignores the
/// window fields; otherwise a Valid-padded window is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolParams {
    pub global: bool,
    #[serde(default)]
    pub kh: usize,
    #[serde(default)]
    pub kw: usize,
    #[serde(default)]
    pub stride_h: usize,
    #[serde(default)]
    pub stride_w: usize,
}

impl PoolParams {
    pub fn global() -> Self {
        PoolParams {
            global: true,
            kh: 0,
            kw: 0,
            stride_h: 0,
            stride_w: 0,
        }
    }

    pub fn window(kh: usize, kw: usize, stride_h: usize, stride_w: usize) -> Self {
        PoolParams {
            global: false,
            kh,
            kw,
            stride_h,
            stride_w,
        }
    }
}

pub const DEFAULT_BN_EPSILON: f32 = 1e-5;

fn default_epsilon() -> f32 {
    DEFAULT_BN_EPSILON
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Convolution(ConvParams),
    BatchNorm {
        #[serde(default = "default_epsilon")]
        epsilon: f32,
    },
    Scale,
    Relu,
    AveragePool(PoolParams),
    Flatten,
    FullyConnected {
        out_features: usize,
    },
    Softmax,
    /// Elementwise sum of two or more equally shaped inputs.
    Add,
    /// Reorders an activation into the target layout; inserted by
    /// [`insert_layout_conversions`](crate::passes::insert_layout_conversions).
    Convert {
        to: Layout,
    },
}

/// Parameter-free discriminant of [`LayerKind`], used by the kernel registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Input,
    Convolution,
    BatchNorm,
    Scale,
    Relu,
    AveragePool,
    Flatten,
    FullyConnected,
    Softmax,
    Add,
    Convert,
}

impl LayerKind {
    pub fn op(&self) -> OpKind {
        match self {
            LayerKind::Input => OpKind::Input,
            LayerKind::Convolution(_) => OpKind::Convolution,
            LayerKind::BatchNorm { .. } => OpKind::BatchNorm,
            LayerKind::Scale => OpKind::Scale,
            LayerKind::Relu => OpKind::Relu,
            LayerKind::AveragePool(_) => OpKind::AveragePool,
            LayerKind::Flatten => OpKind::Flatten,
            LayerKind::FullyConnected { .. } => OpKind::FullyConnected,
            LayerKind::Softmax => OpKind::Softmax,
            LayerKind::Add => OpKind::Add,
            LayerKind::Convert { .. } => OpKind::Convert,
        }
    }

    /// Layers whose weights can be quantized and into which BN/Scale fold.
    pub fn has_weights_matrix(&self) -> bool {
        matches!(
            self,
            LayerKind::Convolution(_) | LayerKind::FullyConnected { .. }
        )
    }

    /// One output element per input element, channel-wise parameters at most.
    pub fn is_elementwise(&self) -> bool {
        matches!(
            self,
            LayerKind::Relu | LayerKind::Scale | LayerKind::BatchNorm { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNode {
    pub id: usize,
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default)]
    pub inputs: Vec<usize>,
    #[serde(default)]
    pub weights: Vec<String>,
    #[serde(default)]
    pub fused_relu: bool,
    /// Populated by [`infer_shapes`].
    #[serde(skip)]
    pub output: Option<TensorDesc>,
}

impl LayerNode {
    pub fn new(id: usize, name: impl Into<String>, kind: LayerKind, inputs: Vec<usize>) -> Self {
        LayerNode {
            id,
            name: name.into(),
            kind,
            inputs,
            weights: Vec::new(),
            fused_relu: false,
            output: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<String>) -> Self {
        self.weights = weights;
        self
    }

    pub fn output_desc(&self) -> Result<&TensorDesc> {
        self.output.as_ref().ok_or(Error::ShapesNotInferred)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantScheme {
    Int8Sym,
    Int16Sym,
}

impl QuantScheme {
    /// Largest representable magnitude; the range is symmetric.
    pub fn qmax(self) -> i32 {
        match self {
            QuantScheme::Int8Sym => 127,
            QuantScheme::Int16Sym => 32767,
        }
    }

    pub fn dtype(self) -> DataType {
        match self {
            QuantScheme::Int8Sym => DataType::I8,
            QuantScheme::Int16Sym => DataType::I16,
        }
    }
}

/// Scales of one quantized layer. Real value = code × scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerQuant {
    pub weight_scale: f32,
    pub input_scale: f32,
    pub output_scale: f32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuantInfo {
    pub layers: BTreeMap<usize, (QuantScheme, LayerQuant)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub name: String,
    pub labels: Vec<String>,
    pub input: TensorDesc,
    pub nodes: Vec<LayerNode>,
    pub weights: BTreeMap<String, WeightTensor>,
    pub quant: QuantInfo,
}

impl Graph {
    pub fn new(name: impl Into<String>, input: TensorDesc) -> Self {
        Graph {
            name: name.into(),
            labels: Vec::new(),
            input,
            nodes: Vec::new(),
            weights: BTreeMap::new(),
            quant: QuantInfo::default(),
        }
    }

    pub fn node(&self, id: usize) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: usize) -> Option<&mut LayerNode> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    /// Position of each node id in `nodes`.
    pub fn index_map(&self) -> HashMap<usize, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, i))
            .collect()
    }

    /// Ids of the nodes reading the output of `id`, in graph order.
    pub fn consumers(&self, id: usize) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.inputs.contains(&id))
            .map(|n| n.id)
            .collect()
    }

    pub fn next_id(&self) -> usize {
        self.nodes.iter().map(|n| n.id + 1).max().unwrap_or(0)
    }

    /// The last node in topological order; its output is the graph output.
    pub fn output_node(&self) -> Option<&LayerNode> {
        self.nodes.last()
    }

    pub fn weight(&self, name: &str) -> Result<&WeightTensor> {
        self.weights
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    /// Appends a node with a fresh id and returns that id.
    pub fn push(&mut self, name: impl Into<String>, kind: LayerKind, inputs: Vec<usize>) -> usize {
        let id = self.next_id();
        self.nodes.push(LayerNode::new(id, name, kind, inputs));
        id
    }

    pub fn add_weight(&mut self, tensor: WeightTensor) {
        self.weights.insert(tensor.name.clone(), tensor);
    }

    /// Input channel count seen by `node`, from inferred shapes.
    pub fn input_desc(&self, node: &LayerNode) -> Result<TensorDesc> {
        match node.inputs.first() {
            None => Ok(self.input),
            Some(&src) => self
                .node(src)
                .ok_or_else(|| Error::InvalidGraph(format!("node {} not found", src)))?
                .output
                .ok_or(Error::ShapesNotInferred),
        }
    }

    /// Element type a node computes in: the dtype of its primary weight, F32
    /// for weightless nodes.
    pub fn node_dtype(&self, node: &LayerNode) -> DataType {
        node.weights
            .first()
            .and_then(|w| self.weights.get(w))
            .map(|w| w.dtype())
            .unwrap_or(DataType::F32)
    }

    /// Removes weight tensors no node references.
    pub fn prune_weights(&mut self) {
        let used: std::collections::HashSet<&String> =
            self.nodes.iter().flat_map(|n| n.weights.iter()).collect();
        let keep: BTreeMap<String, WeightTensor> = self
            .weights
            .iter()
            .filter(|(k, _)| used.contains(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        self.weights = keep;
    }
}
