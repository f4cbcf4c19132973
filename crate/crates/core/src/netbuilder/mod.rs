//! Keyword-spotting network families built from compact per-stage specs,
//! random architecture sampling and Pareto selection.

mod pareto;
pub mod random;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    ConvParams, Graph, LayerKind, PoolParams, Shape, TensorDesc, WeightTensor, DEFAULT_BN_EPSILON,
};

pub use pareto::{pareto_frontier, Candidate};

pub const NUM_STAGES: usize = 6;
pub const INIT_RANGE: f32 = 0.1;

/// The twelve Speech Commands classes: ten keywords plus silence and unknown.
pub const DEFAULT_LABELS: [&str; 12] = [
    "yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go", "_silence_", "_unknown_",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kh: usize,
    pub kw: usize,
    pub out_channels: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl ConvLayerSpec {
    pub const fn new(kh: usize, kw: usize, out_channels: usize) -> Self {
        ConvLayerSpec {
            kh,
            kw,
            out_channels,
            stride_h: 1,
            stride_w: 1,
        }
    }

    pub const fn stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride_h = sh;
        self.stride_w = sw;
        self
    }
}

/// `"3x3, 40, 1x2"`: kernel, output channels, optional stride (default 1x1).
impl FromStr for ConvLayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Arch(format!("cannot parse stage `{}`, expected e.g. `3x3, 40, 1x2`", s));
        let pair = |p: &str| -> Result<(usize, usize)> {
            let (a, b) = p.trim().split_once(['x', 'X', '×']).ok_or_else(bad)?;
            Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
        };
        let parts: Vec<&str> = s.split(',').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(bad());
        }
        let (kh, kw) = pair(parts[0])?;
        let out: usize = parts[1].trim().parse().map_err(|_| bad())?;
        let (sh, sw) = match parts.get(2) {
            Some(p) => pair(p)?,
            None => (1, 1),
        };
        if [kh, kw, out, sh, sw].contains(&0) {
            return Err(Error::Arch(format!("stage `{}` has a zero field", s)));
        }
        Ok(ConvLayerSpec::new(kh, kw, out).stride(sh, sw))
    }
}

impl fmt::Display for ConvLayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}, {}, {}x{}",
            self.kh, self.kw, self.out_channels, self.stride_h, self.stride_w
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "cnn", alias = "CNN")]
    Cnn,
    #[serde(rename = "ds_cnn", alias = "DS_CNN")]
    DsCnn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub name: String,
    pub variant: Variant,
    pub stages: [ConvLayerSpec; NUM_STAGES],
    pub num_classes: usize,
    pub input: Shape,
    pub labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ArchFile {
    name: String,
    variant: Variant,
    #[serde(default = "default_classes")]
    num_classes: usize,
    #[serde(default)]
    labels: Vec<String>,
    #[serde(default)]
    input: Option<[usize; 3]>,
    stages: Vec<String>,
}

fn default_classes() -> usize {
    DEFAULT_LABELS.len()
}

impl ArchSpec {
    pub fn new(name: impl Into<String>, variant: Variant, stages: [ConvLayerSpec; NUM_STAGES]) -> Self {
        ArchSpec {
            name: name.into(),
            variant,
            stages,
            num_classes: DEFAULT_LABELS.len(),
            input: Shape::new(1, 40, 32),
            labels: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// The same stages under the other variant.
    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut s = self.clone();
        s.variant = variant;
        if variant == Variant::DsCnn && !s.name.starts_with("ds_") {
            s.name = format!("ds_{}", s.name);
        }
        s
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: ArchFile = toml::from_str(text).map_err(|e| Error::Arch(e.to_string()))?;
        let parsed = f
            .stages
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<ConvLayerSpec>>>()?;
        let stages: [ConvLayerSpec; NUM_STAGES] = parsed.try_into().map_err(|v: Vec<_>| {
            Error::Arch(format!("expected {} conv stages, got {}", NUM_STAGES, v.len()))
        })?;
        let mut spec = ArchSpec::new(f.name, f.variant, stages);
        spec.num_classes = f.num_classes;
        if let Some([c, h, w]) = f.input {
            spec.input = Shape::new(c, h, w);
        }
        if !f.labels.is_empty() {
            spec.labels = f.labels;
        } else if f.num_classes != DEFAULT_LABELS.len() {
            spec.labels = (0..f.num_classes).map(|i| format!("class_{}", i)).collect();
        }
        spec.check()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        let f = ArchFile {
            name: self.name.clone(),
            variant: self.variant,
            num_classes: self.num_classes,
            labels: self.labels.clone(),
            input: Some([self.input.c, self.input.h, self.input.w]),
            stages: self.stages.iter().map(|s| s.to_string()).collect(),
        };
        toml::to_string(&f).expect("arch spec serializes")
    }

    pub fn check(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Arch("num_classes must be positive".into()));
        }
        if self.labels.len() != self.num_classes {
            return Err(Error::Arch(format!(
                "{} labels for {} classes",
                self.labels.len(),
                self.num_classes
            )));
        }
        if self.input.numel() == 0 {
            return Err(Error::Arch("empty input shape".into()));
        }
        for s in &self.stages {
            if [s.kh, s.kw, s.out_channels, s.stride_h, s.stride_w].contains(&0) {
                return Err(Error::Arch(format!("stage `{}` has a zero field", s)));
            }
        }
        Ok(())
    }
}

const fn s(kh: usize, kw: usize, m: usize) -> ConvLayerSpec {
    ConvLayerSpec::new(kh, kw, m)
}

/// The hand-designed starting CNN. Its second stage runs at stride 1x1; pass
/// explicit strides to build the 2x2 reading.
pub fn seed_cnn() -> ArchSpec {
    ArchSpec::new(
        "seed_cnn",
        Variant::Cnn,
        [s(4, 10, 100).stride(1, 2), s(3, 3, 100), s(3, 3, 100), s(3, 3, 100), s(3, 3, 100), s(3, 3, 100)],
    )
}

pub fn seed_ds_cnn() -> ArchSpec {
    seed_cnn().with_variant(Variant::DsCnn)
}

pub fn kws1() -> ArchSpec {
    ArchSpec::new(
        "kws1",
        Variant::Cnn,
        [s(3, 3, 40).stride(1, 2), s(3, 3, 30), s(1, 1, 30), s(5, 5, 50), s(5, 5, 50), s(5, 5, 50)],
    )
}

pub fn kws3() -> ArchSpec {
    ArchSpec::new(
        "kws3",
        Variant::Cnn,
        [s(5, 5, 50).stride(1, 2), s(1, 1, 30), s(5, 5, 40), s(3, 3, 20), s(5, 5, 30), s(3, 3, 50)],
    )
}

pub fn kws9() -> ArchSpec {
    ArchSpec::new(
        "kws9",
        Variant::Cnn,
        [s(5, 5, 50).stride(1, 2), s(1, 1, 20), s(1, 1, 50), s(3, 3, 20), s(5, 5, 20), s(3, 3, 40)],
    )
}

pub fn ds_kws1() -> ArchSpec {
    kws1().with_variant(Variant::DsCnn)
}

pub fn ds_kws3() -> ArchSpec {
    kws3().with_variant(Variant::DsCnn)
}

pub fn ds_kws9() -> ArchSpec {
    kws9().with_variant(Variant::DsCnn)
}

pub fn preset(name: &str) -> Option<ArchSpec> {
    Some(match name {
        "seed_cnn" => seed_cnn(),
        "seed_ds_cnn" => seed_ds_cnn(),
        "kws1" => kws1(),
        "kws3" => kws3(),
        "kws9" => kws9(),
        "ds_kws1" => ds_kws1(),
        "ds_kws3" => ds_kws3(),
        "ds_kws9" => ds_kws9(),
        _ => return None,
    })
}

pub const PRESETS: [&str; 8] = [
    "seed_cnn", "seed_ds_cnn", "kws1", "kws3", "kws9", "ds_kws1", "ds_kws3", "ds_kws9",
];

struct Builder {
    g: Graph,
    rng: ChaCha8Rng,
}

impl Builder {
    fn uniform(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.rng.random_range(-INIT_RANGE..=INIT_RANGE)).collect()
    }

    fn conv_block(&mut self, name: &str, input: usize, cin: usize, p: ConvParams) -> usize {
        let w = format!("{}.weight", name);
        let b = format!("{}.bias", name);
        let dims = vec![p.out_channels, cin / p.groups, p.kh, p.kw];
        let n = dims.iter().product();
        let data = self.uniform(n);
        self.g.add_weight(WeightTensor::f32(&w, dims, data));
        let bias = self.uniform(p.out_channels);
        self.g.add_weight(WeightTensor::f32(&b, vec![p.out_channels], bias));
        let conv = self.g.push(name, LayerKind::Convolution(p), vec![input]);
        self.g.node_mut(conv).expect("just pushed").weights = vec![w, b];
        self.norm_relu(name, conv, p.out_channels)
    }

    /// BN → Scale → ReLU, normalization initialized to identity.
    fn norm_relu(&mut self, name: &str, input: usize, c: usize) -> usize {
        let names = ["mean", "var", "gamma", "beta"].map(|k| format!("{}_bn.{}", name, k));
        for (n, v) in names.iter().zip([0.0, 1.0, 1.0, 0.0]) {
            self.g.add_weight(WeightTensor::f32(n, vec![c], vec![v; c]));
        }
        let bn = self.g.push(
            format!("{}_bn", name),
            LayerKind::BatchNorm {
                epsilon: DEFAULT_BN_EPSILON,
            },
            vec![input],
        );
        self.g.node_mut(bn).expect("just pushed").weights = vec![names[0].clone(), names[1].clone()];
        let sc = self.g.push(format!("{}_scale", name), LayerKind::Scale, vec![bn]);
        self.g.node_mut(sc).expect("just pushed").weights = vec![names[2].clone(), names[3].clone()];
        self.g.push(format!("{}_relu", name), LayerKind::Relu, vec![sc])
    }
}

/// Builds the float graph for `spec` with weights drawn uniformly from
/// ±0.1 by a generator seeded with `seed`; normalization layers start as the
/// identity. Shapes are inferred.
pub fn build_network(spec: &ArchSpec, seed: u64) -> Result<Graph> {
    spec.check()?;
    let mut b = Builder {
        g: Graph::new(&spec.name, TensorDesc::f32(spec.input.c, spec.input.h, spec.input.w)),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    b.g.labels = spec.labels.clone();
    let mut cur = b.g.push("input", LayerKind::Input, vec![]);
    let mut c = spec.input.c;
    for (i, st) in spec.stages.iter().enumerate() {
        let n = i + 1;
        if spec.variant == Variant::Cnn || i == 0 {
            let p = ConvParams::new(st.kh, st.kw, st.out_channels).stride(st.stride_h, st.stride_w);
            cur = b.conv_block(&format!("conv{}", n), cur, c, p);
        } else {
            let dw = ConvParams::new(st.kh, st.kw, c)
                .stride(st.stride_h, st.stride_w)
                .groups(c);
            cur = b.conv_block(&format!("conv{}_dw", n), cur, c, dw);
            let pw = ConvParams::new(1, 1, st.out_channels);
            cur = b.conv_block(&format!("conv{}_pw", n), cur, c, pw);
        }
        c = st.out_channels;
    }
    cur = b.g.push("pool", LayerKind::AveragePool(PoolParams::global()), vec![cur]);
    cur = b.g.push("flatten", LayerKind::Flatten, vec![cur]);
    let (w, bias) = (b.uniform(spec.num_classes * c), b.uniform(spec.num_classes));
    b.g.add_weight(WeightTensor::f32("fc.weight", vec![spec.num_classes, c], w));
    b.g.add_weight(WeightTensor::f32("fc.bias", vec![spec.num_classes], bias));
    cur = b.g.push(
        "fc",
        LayerKind::FullyConnected {
            out_features: spec.num_classes,
        },
        vec![cur],
    );
    b.g.node_mut(cur).expect("just pushed").weights = vec!["fc.weight".into(), "fc.bias".into()];
    b.g.push("softmax", LayerKind::Softmax, vec![cur]);
    crate::graph::infer_shapes(&mut b.g)?;
    Ok(b.g)
}

/// Values an architecture sampler may draw per stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpace {
    pub variant: Variant,
    pub kernel_sizes: Vec<usize>,
    pub channels: Vec<usize>,
}

impl Default for ArchSpace {
    fn default() -> Self {
        ArchSpace {
            variant: Variant::Cnn,
            kernel_sizes: vec![1, 3, 5],
            channels: vec![20, 30, 40, 50],
        }
    }
}

/// Uniform random stand-in for a tuned architecture search. Kernel height,
/// width and channel count are drawn independently per stage; the first stage
/// keeps the 1x2 stride of the reference models.
pub fn sample_arch(space: &ArchSpace, seed: u64) -> Result<ArchSpec> {
    if space.kernel_sizes.is_empty() || space.channels.is_empty() {
        return Err(Error::Arch("empty search space".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |v: &[usize]| v[rng.random_range(0..v.len())];
    let stages = std::array::from_fn(|i| {
        let st = ConvLayerSpec::new(pick(&space.kernel_sizes), pick(&space.kernel_sizes), pick(&space.channels));
        if i == 0 {
            st.stride(1, 2)
        } else {
            st
        }
    });
    Ok(ArchSpec::new(format!("sample_{}", seed), space.variant, stages))
}
