use std::time::{Duration, Instant};

use super::misc::convert;
use super::{needs_impl, Assignment, Kernel, KernelArgs, LayoutReq, Registry, Scratch};
use crate::error::{Error, Result};
use crate::graph::{DataType, LayerKind, Layout};
use crate::passes::ExecutablePlan;
use crate::tensor::Tensor;

enum Op {
    Input,
    Convert { from: Layout, to: Layout },
    Run(Kernel),
}

struct Step<'p> {
    args: KernelArgs<'p>,
    op: Op,
    /// (buffer, element count) per input
    inputs: Vec<(usize, usize)>,
    output: usize,
    len: usize,
    in_place: bool,
    /// Buffers whose occupant dies after this step.
    release: Vec<usize>,
}

/// A plan bound to an assignment, owning the activation arena and kernel
/// scratch space. Reusable across inferences; not shareable across threads.
pub struct Executor<'p> {
    plan: &'p ExecutablePlan,
    steps: Vec<Step<'p>>,
    buffers: Vec<Vec<f32>>,
    scratch: Scratch,
    poison: bool,
}

impl<'p> Executor<'p> {
    pub fn new(plan: &'p ExecutablePlan, registry: &Registry, assignment: &Assignment) -> Result<Self> {
        let graph = &plan.graph;
        let mem = &plan.memory;
        let index = graph.index_map();
        let n = graph.nodes.len();
        let output_id = graph.output_node().map(|o| o.id);

        let mut last_use = vec![0usize; n];
        for (i, node) in graph.nodes.iter().enumerate() {
            last_use[i] = i;
            for src in &node.inputs {
                last_use[index[src]] = i;
            }
        }

        let mut steps = Vec::with_capacity(n);
        for (i, node) in graph.nodes.iter().enumerate() {
            let output = node.output.ok_or(Error::ShapesNotInferred)?;
            let in_descs = node
                .inputs
                .iter()
                .map(|s| graph.nodes[index[s]].output.ok_or(Error::ShapesNotInferred))
                .collect::<Result<Vec<_>>>()?;
            let weights = node
                .weights
                .iter()
                .map(|w| graph.weight(w))
                .collect::<Result<Vec<_>>>()?;
            let quant = graph.quant.layers.get(&node.id).copied();
            let buf_of = |id: usize| {
                mem.buffer_of
                    .get(&id)
                    .copied()
                    .ok_or_else(|| Error::InvalidGraph(format!("node {} missing from memory plan", id)))
            };

            let op = match node.kind {
                LayerKind::Input => Op::Input,
                LayerKind::Convert { to } => Op::Convert {
                    from: in_descs[0].layout,
                    to,
                },
                _ => {
                    debug_assert!(needs_impl(node));
                    let id = assignment.get(node.id).ok_or(Error::Unassigned(node.id))?;
                    let (desc, kernel) = registry
                        .get(id)
                        .ok_or_else(|| Error::UnknownImpl(id.to_string()))?;
                    registry.check(desc, graph, node)?;
                    match desc.layout {
                        LayoutReq::Fixed(want) => {
                            if let Some(d) = in_descs.iter().find(|d| d.layout != want) {
                                return Err(Error::LayoutMismatch {
                                    node: node.id,
                                    expected: want,
                                    actual: d.layout,
                                });
                            }
                        }
                        LayoutReq::Any => {
                            if let Some(d) = in_descs.iter().find(|d| d.layout != in_descs[0].layout) {
                                return Err(Error::LayoutMismatch {
                                    node: node.id,
                                    expected: in_descs[0].layout,
                                    actual: d.layout,
                                });
                            }
                        }
                    }
                    if desc.dtype != DataType::F32 && quant.is_none() {
                        return Err(Error::Quant(format!(
                            "node {} has quantized weights but no scales",
                            node.id
                        )));
                    }
                    Op::Run(kernel)
                }
            };

            let in_place = mem.in_place.contains(&node.id);
            if in_place && !matches!(op, Op::Run(Kernel::Elementwise(_))) {
                return Err(Error::IncompatibleImpl {
                    node: node.id,
                    impl_id: assignment.get(node.id).unwrap_or("").to_string(),
                    msg: "memory plan runs this node in place but the kernel is not elementwise".into(),
                });
            }

            let out_buf = buf_of(node.id)?;
            let inputs = node
                .inputs
                .iter()
                .zip(&in_descs)
                .map(|(s, d)| Ok((buf_of(*s)?, d.numel())))
                .collect::<Result<Vec<_>>>()?;
            let release = node
                .inputs
                .iter()
                .filter(|s| last_use[index[s]] == i && Some(**s) != output_id)
                .map(|s| buf_of(*s))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .filter(|b| *b != out_buf)
                .collect();

            steps.push(Step {
                args: KernelArgs {
                    node,
                    inputs: in_descs,
                    output,
                    weights,
                    quant,
                },
                op,
                inputs,
                output: out_buf,
                len: output.numel(),
                in_place,
                release,
            });
        }

        let buffers = mem.buffer_bytes.iter().map(|b| vec![0.0f32; b / 4]).collect();
        Ok(Executor {
            plan,
            steps,
            buffers,
            scratch: Scratch::default(),
            poison: false,
        })
    }

    /// When set, every buffer is filled with NaN as soon as its occupant's
    /// last consumer has run, exposing any illegal aliasing.
    pub fn set_poison(&mut self, on: bool) {
        self.poison = on;
    }

    pub fn arena_bytes(&self) -> usize {
        self.buffers.iter().map(|b| b.len() * 4).sum()
    }

    /// Node ids in execution order, matching the entries of profiled runs.
    pub fn node_ids(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.args.node.id).collect()
    }

    pub fn node_names(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.args.node.name.clone()).collect()
    }

    pub fn run(&mut self, input: &Tensor) -> Result<Tensor> {
        self.run_inner(input, None)
    }

    /// Runs once, recording the wall time of every step.
    pub fn run_profiled(&mut self, input: &Tensor, timings: &mut Vec<Duration>) -> Result<Tensor> {
        timings.clear();
        self.run_inner(input, Some(timings))
    }

    fn run_inner(&mut self, input: &Tensor, mut timings: Option<&mut Vec<Duration>>) -> Result<Tensor> {
        let want = self.plan.graph.input;
        if input.desc.shape != want.shape || input.desc.layout != want.layout {
            return Err(Error::InputMismatch(format!(
                "expected {} {:?}, got {} {:?}",
                want.shape, want.layout, input.desc.shape, input.desc.layout
            )));
        }
        for step in &self.steps {
            let started = timings.as_ref().map(|_| Instant::now());
            match step.op {
                Op::Input => self.buffers[step.output][..step.len].copy_from_slice(&input.data),
                Op::Convert { from, to } => {
                    let mut out = std::mem::take(&mut self.buffers[step.output]);
                    let (b, l) = step.inputs[0];
                    convert(from, to, step.args.inputs[0].shape, &self.buffers[b][..l], &mut out[..step.len]);
                    self.buffers[step.output] = out;
                }
                Op::Run(Kernel::Compute(f)) => {
                    let mut out = std::mem::take(&mut self.buffers[step.output]);
                    let ins: Vec<&[f32]> = step
                        .inputs
                        .iter()
                        .map(|(b, l)| &self.buffers[*b][..*l])
                        .collect();
                    f(&step.args, &ins, &mut out[..step.len], &mut self.scratch);
                    self.buffers[step.output] = out;
                }
                Op::Run(Kernel::Elementwise(f)) => {
                    if !step.in_place {
                        let mut out = std::mem::take(&mut self.buffers[step.output]);
                        let (b, l) = step.inputs[0];
                        out[..step.len].copy_from_slice(&self.buffers[b][..l]);
                        self.buffers[step.output] = out;
                    }
                    f(&step.args, &mut self.buffers[step.output][..step.len]);
                }
            }
            if self.poison {
                for b in &step.release {
                    self.buffers[*b].fill(f32::NAN);
                }
            }
            if let (Some(t), Some(s)) = (timings.as_deref_mut(), started) {
                t.push(s.elapsed());
            }
        }
        let last = self.steps.last().ok_or_else(|| Error::InvalidGraph("empty graph".into()))?;
        Ok(Tensor::new(
            last.args.output,
            self.buffers[last.output][..last.len].to_vec(),
        ))
    }
}

/// Binds `plan` to `assignment` and runs one inference.
pub fn execute(plan: &ExecutablePlan, registry: &Registry, assignment: &Assignment, input: &Tensor) -> Result<Tensor> {
    Executor::new(plan, registry, assignment)?.run(input)
}
