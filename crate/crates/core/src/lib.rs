//! Inference engine and graph compiler for small CNNs on constrained CPUs,
//! built around a keyword-spotting workload.

pub mod audio;
pub mod benchmark;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod netbuilder;
pub mod passes;
pub mod qsdnn;
pub mod quantizer;
pub mod report;
pub mod tensor;
pub mod workflow;

pub use error::{Error, Result};
pub use graph::{
    DataType, Graph, LayerKind, LayerNode, Layout, OpKind, Shape, TensorDesc, WeightTensor,
};
pub use kernels::{Assignment, Executor, Registry};
pub use passes::{compile, CompileOptions, ExecutablePlan};
pub use tensor::Tensor;
