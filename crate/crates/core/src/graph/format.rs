//! On-disk model bundle: a TOML manifest describing topology plus a binary
//! tensor container holding the weights.
//!
//! Container layout (all integers little-endian, no alignment padding):
//!
//! ```text
//! magic    "LPNW"
//! version  u16
//! count    u32
//! count × { name_len u16, name utf-8, dtype u8, rank u8, dims u32 × rank, data }
//! ```
//!
//! dtype codes: 0 = f32, 1 = i16, 2 = i8. Tensors are written in name order.
//! The same container stores feature tensors produced by the audio frontend.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    infer_shapes, validate, DataType, Graph, LayerNode, LayerQuant, Layout, QuantInfo,
    QuantScheme, Shape, TensorData, TensorDesc, WeightTensor,
};
use crate::error::{Error, Result};

pub const BLOB_MAGIC: &[u8; 4] = b"LPNW";
pub const BLOB_VERSION: u16 = 1;

const MANIFEST_FORMAT: &str = "edgenn-model";
const MANIFEST_VERSION: u32 = 1;

pub fn write_container<'a>(tensors: impl IntoIterator<Item = &'a WeightTensor>) -> Result<Vec<u8>> {
    let mut sorted: Vec<&WeightTensor> = tensors.into_iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));

    let mut buf = Vec::new();
    buf.extend_from_slice(BLOB_MAGIC);
    buf.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    buf.extend_from_slice(&(sorted.len() as u32).to_le_bytes());
    for t in sorted {
        let name = t.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Blob(format!("tensor name `{}` too long", t.name)))?;
        let rank = u8::try_from(t.dims.len())
            .map_err(|_| Error::Blob(format!("tensor `{}` has too many dims", t.name)))?;
        if t.data.len() != t.numel() {
            return Err(Error::Blob(format!(
                "tensor `{}` holds {} values for dims {:?}",
                t.name,
                t.data.len(),
                t.dims
            )));
        }
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(t.dtype().code());
        buf.push(rank);
        for d in &t.dims {
            let d = u32::try_from(*d)
                .map_err(|_| Error::Blob(format!("tensor `{}` extent too large", t.name)))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        match &t.data {
            TensorData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::I16(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::I8(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Blob(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}

/// Parses a tensor container, rejecting duplicate names and trailing bytes.
pub fn read_container(bytes: &[u8]) -> Result<Vec<WeightTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != BLOB_MAGIC {
        return Err(Error::Blob("bad magic".into()));
    }
    let version = r.u16()?;
    if version != BLOB_VERSION {
        return Err(Error::Blob(format!("unsupported version {}", version)));
    }
    let count = r.u32()? as usize;
    let mut names = HashSet::new();
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Blob("tensor name is not utf-8".into()))?
            .to_string();
        let code = r.u8()?;
        let dtype = DataType::from_code(code)
            .ok_or_else(|| Error::Blob(format!("tensor `{}` has unknown dtype {}", name, code)))?;
        let rank = r.u8()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let raw = r.take(n * dtype.byte_width())?;
        let data = match dtype {
            DataType::F32 => TensorData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DataType::I16 => TensorData::I16(
                raw.chunks_exact(2)
                    .map(|c| i16::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DataType::I8 => TensorData::I8(raw.iter().map(|b| *b as i8).collect()),
        };
        if !names.insert(name.clone()) {
            return Err(Error::DuplicateWeight(name));
        }
        out.push(WeightTensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Blob(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn write_container_file<'a>(
    path: &Path,
    tensors: impl IntoIterator<Item = &'a WeightTensor>,
) -> Result<()> {
    let bytes = write_container(tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_container_file(path: &Path) -> Result<Vec<WeightTensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_container(&bytes)
}

#[derive(Serialize, Deserialize)]
struct InputEntry {
    shape: [usize; 3],
    dtype: DataType,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct WeightEntry {
    name: String,
    dtype: DataType,
    dims: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct QuantEntry {
    node: usize,
    scheme: QuantScheme,
    weight_scale: f32,
    input_scale: f32,
    output_scale: f32,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    name: String,
    labels: Vec<String>,
    input: InputEntry,
    #[serde(rename = "node", default)]
    nodes: Vec<LayerNode>,
    #[serde(rename = "weight", default)]
    weights: Vec<WeightEntry>,
    #[serde(rename = "quant", default)]
    quant: Vec<QuantEntry>,
}

fn manifest_of(graph: &Graph) -> Manifest {
    Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        name: graph.name.clone(),
        labels: graph.labels.clone(),
        input: InputEntry {
            shape: [graph.input.shape.c, graph.input.shape.h, graph.input.shape.w],
            dtype: graph.input.dtype,
            layout: graph.input.layout,
        },
        nodes: graph.nodes.clone(),
        weights: graph
            .weights
            .values()
            .map(|w| WeightEntry {
                name: w.name.clone(),
                dtype: w.dtype(),
                dims: w.dims.clone(),
            })
            .collect(),
        quant: graph
            .quant
            .layers
            .iter()
            .map(|(node, (scheme, q))| QuantEntry {
                node: *node,
                scheme: *scheme,
                weight_scale: q.weight_scale,
                input_scale: q.input_scale,
                output_scale: q.output_scale,
            })
            .collect(),
    }
}

pub(crate) fn manifest_to_string(graph: &Graph) -> Result<String> {
    toml::to_string(&manifest_of(graph)).map_err(|e| Error::Manifest(e.to_string()))
}

/// Reassembles a graph from manifest text and parsed container tensors.
pub(crate) fn assemble(manifest_text: &str, tensors: Vec<WeightTensor>) -> Result<Graph> {
    let m: Manifest =
        toml::from_str(manifest_text).map_err(|e| Error::Manifest(e.to_string()))?;
    if m.format != MANIFEST_FORMAT {
        return Err(Error::Manifest(format!("unknown format `{}`", m.format)));
    }
    if m.version != MANIFEST_VERSION {
        return Err(Error::Manifest(format!("unsupported version {}", m.version)));
    }

    let mut blob: BTreeMap<String, WeightTensor> = BTreeMap::new();
    for t in tensors {
        if blob.contains_key(&t.name) {
            return Err(Error::DuplicateWeight(t.name));
        }
        blob.insert(t.name.clone(), t);
    }
    let mut weights = BTreeMap::new();
    for entry in &m.weights {
        if weights.contains_key(&entry.name) {
            return Err(Error::DuplicateWeight(entry.name.clone()));
        }
        let t = blob
            .remove(&entry.name)
            .ok_or_else(|| Error::MissingWeight(entry.name.clone()))?;
        if t.dtype() != entry.dtype || t.dims != entry.dims {
            return Err(Error::WeightMismatch {
                name: entry.name.clone(),
                msg: format!(
                    "manifest {:?} {:?}, blob {:?} {:?}",
                    entry.dtype,
                    entry.dims,
                    t.dtype(),
                    t.dims
                ),
            });
        }
        weights.insert(entry.name.clone(), t);
    }
    if let Some(extra) = blob.keys().next() {
        return Err(Error::Blob(format!(
            "tensor `{}` is not declared in the manifest",
            extra
        )));
    }
    for node in &m.nodes {
        for w in &node.weights {
            if !weights.contains_key(w) {
                return Err(Error::MissingWeight(w.clone()));
            }
        }
    }

    let mut quant = QuantInfo::default();
    for q in m.quant {
        quant.layers.insert(
            q.node,
            (
                q.scheme,
                LayerQuant {
                    weight_scale: q.weight_scale,
                    input_scale: q.input_scale,
                    output_scale: q.output_scale,
                },
            ),
        );
    }

    let [c, h, w] = m.input.shape;
    let mut graph = Graph {
        name: m.name,
        labels: m.labels,
        input: TensorDesc {
            shape: Shape::new(c, h, w),
            dtype: m.input.dtype,
            layout: m.input.layout,
        },
        nodes: m.nodes,
        weights,
        quant,
    };
    let diags = validate(&graph);
    if !diags.is_empty() {
        let msg: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(Error::InvalidGraph(msg.join("; ")));
    }
    infer_shapes(&mut graph)?;
    Ok(graph)
}

pub fn save_model(graph: &Graph, manifest_path: &Path, blob_path: &Path) -> Result<()> {
    let text = manifest_to_string(graph)?;
    let blob = write_container(graph.weights.values())?;
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    fs::write(blob_path, blob).map_err(|e| Error::io(blob_path, e))
}

pub fn load_model(manifest_path: &Path, blob_path: &Path) -> Result<Graph> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let tensors = read_container_file(blob_path)?;
    assemble(&text, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LayerKind;

    fn relu_graph() -> Graph {
        let mut g = Graph::new("relu", TensorDesc::f32(1, 2, 2));
        let x = g.push("in", LayerKind::Input, vec![]);
        g.push("relu", LayerKind::Relu, vec![x]);
        g.with_shapes().unwrap()
    }

    #[test]
    fn weightless_graph_has_header_only_blob() {
        let g = relu_graph();
        let blob = write_container(g.weights.values()).unwrap();
        assert_eq!(blob.len(), 4 + 2 + 4);
        let text = manifest_to_string(&g).unwrap();
        assert_eq!(text.matches("[[node]]").count(), 2);
        assert_eq!(assemble(&text, read_container(&blob).unwrap()).unwrap(), g);
    }

    #[test]
    fn container_rejects_duplicates_and_truncation() {
        let a = WeightTensor::f32("a", vec![2], vec![1.0, 2.0]);
        let blob = write_container([&a]).unwrap();
        assert!(matches!(
            read_container(&blob[..blob.len() - 1]),
            Err(Error::Blob(_))
        ));
        // hand-build two identically named entries
        let mut dup = blob.clone();
        dup[6..10].copy_from_slice(&2u32.to_le_bytes());
        dup.extend_from_slice(&blob[10..]);
        assert!(matches!(read_container(&dup), Err(Error::DuplicateWeight(n)) if n == "a"));
    }

    #[test]
    fn container_header_layout() {
        let t = WeightTensor {
            name: "q".into(),
            dims: vec![3],
            data: TensorData::I16(vec![-1, 0, 258]),
        };
        let blob = write_container([&t]).unwrap();
        assert_eq!(&blob[..4], b"LPNW");
        assert_eq!(u16::from_le_bytes([blob[4], blob[5]]), 1);
        assert_eq!(u32::from_le_bytes(blob[6..10].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes([blob[10], blob[11]]), 1);
        assert_eq!(blob[12], b'q');
        assert_eq!(blob[13], 1); // i16
        assert_eq!(blob[14], 1); // rank
        assert_eq!(u32::from_le_bytes(blob[15..19].try_into().unwrap()), 3);
        assert_eq!(&blob[19..], &[0xff, 0xff, 0, 0, 2, 1]);
    }
}
