//! Pluggable layer implementations and the executor that runs a compiled
//! graph under a per-layer [`Assignment`].
//!
//! Every implementation is registered in a [`Registry`] under a stable string
//! id together with an [`ImplDescriptor`] stating which layer kinds, element
//! type and activation layout it handles. The default registry carries the
//! full CPU kernel set; callers may register more.

mod conv;
mod executor;
mod gemm;
mod misc;
mod quantized;
mod reference;
mod winograd;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use executor::{execute, Executor};
pub use gemm::gemm;
pub use misc::{chw_to_hwc, hwc_to_chw};
pub use quantized::quantize_value;
pub use reference::{reference_activations, reference_execute};

use crate::error::{Error, Result};
use crate::graph::{
    DataType, Graph, LayerKind, LayerNode, LayerQuant, Layout, OpKind, QuantScheme, TensorDesc,
    WeightTensor,
};

/// Activation layout an implementation consumes and produces. `Any` passes
/// the incoming layout through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutReq {
    Fixed(Layout),
    Any,
}

impl LayoutReq {
    pub const CHANNEL_MAJOR: LayoutReq = LayoutReq::Fixed(Layout::ChannelMajor);
    pub const CHANNEL_MINOR: LayoutReq = LayoutReq::Fixed(Layout::ChannelMinor);

    pub fn resolve(self, incoming: Layout) -> Layout {
        match self {
            LayoutReq::Fixed(l) => l,
            LayoutReq::Any => incoming,
        }
    }
}

/// Rough speed class, for display only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostClass {
    Naive,
    Gemm,
    Fast,
    Quantized,
    Trivial,
}

/// Extra applicability test beyond kind and dtype, given the node and its
/// input descriptor.
pub type Constraint = fn(&LayerNode, &TensorDesc) -> bool;

#[derive(Clone)]
pub struct ImplDescriptor {
    pub id: String,
    pub kinds: Vec<OpKind>,
    pub layout: LayoutReq,
    pub dtype: DataType,
    pub cost: CostClass,
    pub constraint: Option<Constraint>,
}

impl fmt::Debug for ImplDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImplDescriptor")
            .field("id", &self.id)
            .field("kinds", &self.kinds)
            .field("layout", &self.layout)
            .field("dtype", &self.dtype)
            .field("cost", &self.cost)
            .finish()
    }
}

impl ImplDescriptor {
    pub fn new(id: &str, kinds: &[OpKind], layout: LayoutReq, dtype: DataType, cost: CostClass) -> Self {
        ImplDescriptor {
            id: id.to_string(),
            kinds: kinds.to_vec(),
            layout,
            dtype,
            cost,
            constraint: None,
        }
    }

    pub fn with_constraint(mut self, c: Constraint) -> Self {
        self.constraint = Some(c);
        self
    }
}

/// Everything a kernel may read about the node it runs.
#[derive(Debug, Clone)]
pub struct KernelArgs<'a> {
    pub node: &'a LayerNode,
    pub inputs: Vec<TensorDesc>,
    pub output: TensorDesc,
    pub weights: Vec<&'a WeightTensor>,
    pub quant: Option<(QuantScheme, LayerQuant)>,
}

impl KernelArgs<'_> {
    pub fn input(&self) -> &TensorDesc {
        &self.inputs[0]
    }

    pub(crate) fn weight_f32(&self, i: usize) -> Option<&[f32]> {
        self.weights.get(i).and_then(|w| w.as_f32())
    }
}

/// Per-executor reusable scratch memory.
#[derive(Debug, Default)]
pub struct Scratch {
    pub f: Vec<f32>,
    pub i: Vec<i32>,
}

impl Scratch {
    pub(crate) fn floats(&mut self, n: usize) -> &mut [f32] {
        if self.f.len() < n {
            self.f.resize(n, 0.0);
        }
        &mut self.f[..n]
    }
}

pub type ComputeFn = fn(&KernelArgs, &[&[f32]], &mut [f32], &mut Scratch);
pub type ElementwiseFn = fn(&KernelArgs, &mut [f32]);

/// Kernel entry point. `Elementwise` kernels update a buffer in place, which
/// lets the executor honor in-place aliases from the memory plan.
#[derive(Clone, Copy)]
pub enum Kernel {
    Compute(ComputeFn),
    Elementwise(ElementwiseFn),
}

pub struct Registry {
    entries: Vec<(ImplDescriptor, Kernel)>,
    index: HashMap<String, usize>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.entries.iter().map(|(d, _)| &d.id))
            .finish()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Registry::with_defaults()
    }
}

pub mod ids {
    pub const CONV_DIRECT: &str = "direct_f32";
    pub const CONV_IM2COL: &str = "im2col_gemm";
    pub const CONV_WINOGRAD: &str = "winograd_f32";
    pub const CONV_DEPTHWISE: &str = "depthwise_f32";
    pub const CONV_POINTWISE: &str = "pointwise_gemm";
    pub const CONV_DIRECT_HWC: &str = "direct_hwc_f32";
    pub const GEMM_I8: &str = "gemm_i8";
    pub const GEMM_I16: &str = "gemm_i16";
    pub const FC: &str = "fc_f32";
    pub const RELU: &str = "relu_f32";
    pub const BATCHNORM: &str = "batchnorm_f32";
    pub const SCALE: &str = "scale_f32";
    pub const AVGPOOL: &str = "avgpool_f32";
    pub const FLATTEN: &str = "flatten_f32";
    pub const SOFTMAX: &str = "softmax_f32";
    pub const ADD: &str = "add_f32";
}

fn winograd_ok(node: &LayerNode, _: &TensorDesc) -> bool {
    matches!(node.kind, LayerKind::Convolution(p)
        if p.kh == 3 && p.kw == 3 && p.stride_h == 1 && p.stride_w == 1 && p.groups == 1)
}

fn depthwise_ok(node: &LayerNode, input: &TensorDesc) -> bool {
    matches!(node.kind, LayerKind::Convolution(p)
        if p.groups == input.shape.c && p.out_channels == input.shape.c)
}

fn pointwise_ok(node: &LayerNode, _: &TensorDesc) -> bool {
    matches!(node.kind, LayerKind::Convolution(p)
        if p.kh == 1 && p.kw == 1 && p.stride_h == 1 && p.stride_w == 1 && p.groups == 1)
}

impl Registry {
    pub fn empty() -> Self {
        Registry {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// The built-in CPU kernel set.
    pub fn with_defaults() -> Self {
        use ids::*;
        use CostClass::*;
        use DataType::*;
        use OpKind::*;
        let mut r = Registry::empty();
        let major = LayoutReq::CHANNEL_MAJOR;
        let builtin: Vec<(ImplDescriptor, Kernel)> = vec![
            (
                ImplDescriptor::new(CONV_DIRECT, &[Convolution], major, F32, Naive),
                Kernel::Compute(conv::direct),
            ),
            (
                ImplDescriptor::new(CONV_IM2COL, &[Convolution], major, F32, Gemm),
                Kernel::Compute(gemm::conv_im2col),
            ),
            (
                ImplDescriptor::new(CONV_WINOGRAD, &[Convolution], major, F32, Fast)
                    .with_constraint(winograd_ok),
                Kernel::Compute(winograd::conv_winograd),
            ),
            (
                ImplDescriptor::new(CONV_DEPTHWISE, &[Convolution], major, F32, Fast)
                    .with_constraint(depthwise_ok),
                Kernel::Compute(conv::depthwise),
            ),
            (
                ImplDescriptor::new(CONV_POINTWISE, &[Convolution], major, F32, Gemm)
                    .with_constraint(pointwise_ok),
                Kernel::Compute(gemm::conv_pointwise),
            ),
            (
                ImplDescriptor::new(
                    CONV_DIRECT_HWC,
                    &[Convolution],
                    LayoutReq::CHANNEL_MINOR,
                    F32,
                    Naive,
                ),
                Kernel::Compute(conv::direct_hwc),
            ),
            (
                ImplDescriptor::new(GEMM_I8, &[Convolution, FullyConnected], major, I8, Quantized),
                Kernel::Compute(quantized::gemm_i8),
            ),
            (
                ImplDescriptor::new(GEMM_I16, &[Convolution, FullyConnected], major, I16, Quantized),
                Kernel::Compute(quantized::gemm_i16),
            ),
            (
                ImplDescriptor::new(FC, &[FullyConnected], major, F32, Gemm),
                Kernel::Compute(misc::fully_connected),
            ),
            (
                ImplDescriptor::new(RELU, &[Relu], LayoutReq::Any, F32, Trivial),
                Kernel::Elementwise(misc::relu),
            ),
            (
                ImplDescriptor::new(BATCHNORM, &[BatchNorm], major, F32, Trivial),
                Kernel::Elementwise(misc::batch_norm),
            ),
            (
                ImplDescriptor::new(SCALE, &[Scale], major, F32, Trivial),
                Kernel::Elementwise(misc::scale),
            ),
            (
                ImplDescriptor::new(AVGPOOL, &[AveragePool], major, F32, Trivial),
                Kernel::Compute(misc::average_pool),
            ),
            (
                ImplDescriptor::new(FLATTEN, &[Flatten], major, F32, Trivial),
                Kernel::Compute(misc::flatten),
            ),
            (
                ImplDescriptor::new(SOFTMAX, &[Softmax], LayoutReq::Any, F32, Trivial),
                Kernel::Compute(misc::softmax),
            ),
            (
                ImplDescriptor::new(ADD, &[Add], LayoutReq::Any, F32, Trivial),
                Kernel::Compute(misc::add),
            ),
        ];
        for (d, k) in builtin {
            r.register_impl(d, k).expect("builtin ids are unique");
        }
        r
    }

    pub fn register_impl(&mut self, descriptor: ImplDescriptor, kernel: Kernel) -> Result<()> {
        if self.index.contains_key(&descriptor.id) {
            return Err(Error::DuplicateImpl(descriptor.id));
        }
        self.index.insert(descriptor.id.clone(), self.entries.len());
        self.entries.push((descriptor, kernel));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<(&ImplDescriptor, Kernel)> {
        self.index.get(id).map(|i| {
            let (d, k) = &self.entries[*i];
            (d, *k)
        })
    }

    pub fn descriptor(&self, id: &str) -> Result<&ImplDescriptor> {
        self.get(id)
            .map(|(d, _)| d)
            .ok_or_else(|| Error::UnknownImpl(id.to_string()))
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ImplDescriptor> {
        self.entries.iter().map(|(d, _)| d)
    }

    /// Why `desc` cannot run `node`, or `Ok` if it can. Layout is not
    /// checked here; conversions bridge layouts.
    pub fn check(&self, desc: &ImplDescriptor, graph: &Graph, node: &LayerNode) -> Result<()> {
        let fail = |msg: String| Error::IncompatibleImpl {
            node: node.id,
            impl_id: desc.id.clone(),
            msg,
        };
        if !desc.kinds.contains(&node.kind.op()) {
            return Err(fail(format!("does not handle {:?}", node.kind.op())));
        }
        let dtype = graph.node_dtype(node);
        if desc.dtype != dtype {
            return Err(fail(format!("expects {:?}, node is {:?}", desc.dtype, dtype)));
        }
        if let Some(c) = desc.constraint {
            let input = graph.input_desc(node)?;
            if !c(node, &input) {
                return Err(fail("shape constraint not met".into()));
            }
        }
        Ok(())
    }

    /// Ids of every implementation able to run `node`, in registration order.
    pub fn implementations_for(&self, graph: &Graph, node: &LayerNode) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(d, _)| self.check(d, graph, node).is_ok())
            .map(|(d, _)| d.id.as_str())
            .collect()
    }

    /// For every node needing an implementation, the first applicable
    /// channel-major one.
    pub fn default_assignment(&self, graph: &Graph) -> Result<Assignment> {
        self.uniform_assignment(graph, &[])
    }

    /// Prefers the ids in `preferred` (in order) wherever they apply and
    /// falls back to the default choice elsewhere.
    pub fn uniform_assignment(&self, graph: &Graph, preferred: &[&str]) -> Result<Assignment> {
        let mut a = Assignment::default();
        for node in graph.nodes.iter().filter(|n| needs_impl(n)) {
            let options = self.implementations_for(graph, node);
            let pick = preferred
                .iter()
                .find(|p| options.contains(p))
                .copied()
                .or_else(|| {
                    options.iter().copied().find(|id| {
                        self.descriptor(id).map(|d| d.layout != LayoutReq::CHANNEL_MINOR).unwrap_or(false)
                    })
                })
                .or_else(|| options.first().copied())
                .ok_or_else(|| Error::IncompatibleImpl {
                    node: node.id,
                    impl_id: String::new(),
                    msg: "no registered implementation applies".into(),
                })?;
            a.set(node.id, pick);
        }
        Ok(a)
    }
}

impl Registry {
    /// An applicable implementation drawn uniformly per node.
    pub fn random_assignment<R: rand::Rng>(&self, graph: &Graph, rng: &mut R) -> Result<Assignment> {
        let mut a = Assignment::default();
        for node in graph.nodes.iter().filter(|n| needs_impl(n)) {
            let options = self.implementations_for(graph, node);
            if options.is_empty() {
                return Err(Error::IncompatibleImpl {
                    node: node.id,
                    impl_id: String::new(),
                    msg: "no registered implementation applies".into(),
                });
            }
            a.set(node.id, options[rng.random_range(0..options.len())]);
        }
        Ok(a)
    }
}

/// Nodes that are executed by a registered implementation. Input and layout
/// conversion nodes are handled by the executor itself.
pub fn needs_impl(node: &LayerNode) -> bool {
    !matches!(node.kind, LayerKind::Input | LayerKind::Convert { .. })
}

/// Node id → implementation id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Assignment {
    map: BTreeMap<usize, String>,
}

#[derive(Serialize, Deserialize)]
struct AssignmentEntry {
    node: usize,
    #[serde(rename = "impl")]
    impl_id: String,
}

#[derive(Serialize, Deserialize)]
struct AssignmentFile {
    #[serde(rename = "layer", default)]
    layers: Vec<AssignmentEntry>,
}

impl Assignment {
    pub fn set(&mut self, node: usize, impl_id: &str) {
        self.map.insert(node, impl_id.to_string());
    }

    pub fn get(&self, node: usize) -> Option<&str> {
        self.map.get(&node).map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.map.iter().map(|(k, v)| (*k, v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_map(&self) -> &BTreeMap<usize, String> {
        &self.map
    }

    /// Every node needing an implementation has one that supports it.
    pub fn check(&self, graph: &Graph, registry: &Registry) -> Result<()> {
        for node in graph.nodes.iter().filter(|n| needs_impl(n)) {
            let id = self.get(node.id).ok_or(Error::Unassigned(node.id))?;
            let desc = registry.descriptor(id)?;
            registry.check(desc, graph, node)?;
        }
        Ok(())
    }

    /// Text form: one `[[layer]]` table per node.
    pub fn to_toml(&self) -> String {
        let file = AssignmentFile {
            layers: self
                .map
                .iter()
                .map(|(k, v)| AssignmentEntry {
                    node: *k,
                    impl_id: v.clone(),
                })
                .collect(),
        };
        toml::to_string(&file).expect("assignment serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: AssignmentFile =
            toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        let mut a = Assignment::default();
        for e in file.layers {
            a.set(e.node, &e.impl_id);
        }
        Ok(a)
    }
}

impl FromIterator<(usize, String)> for Assignment {
    fn from_iter<T: IntoIterator<Item = (usize, String)>>(iter: T) -> Self {
        Assignment {
            map: iter.into_iter().collect(),
        }
    }
}

impl Serialize for Assignment {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        // numeric key order, not lexicographic
        use serde::ser::SerializeMap;
        let mut out = s.serialize_map(Some(self.map.len()))?;
        for (k, v) in &self.map {
            out.serialize_entry(&k.to_string(), v)?;
        }
        out.end()
    }
}
