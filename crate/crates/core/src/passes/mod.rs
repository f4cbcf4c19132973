//! Graph-to-graph rewrites and static memory planning.

mod fold;
mod fuse;
mod layout;
mod memory;

use serde::{Deserialize, Serialize};

pub use fold::fold_bn_scale;
pub use fuse::fuse_activations;
pub use layout::insert_layout_conversions;
pub use memory::{live_ranges, naive_plan, plan_memory, MemoryPlan};

use crate::error::{Error, Result};
use crate::graph::{infer_shapes, validate, Graph};
use crate::kernels::{Assignment, Registry};

/// Points every consumer of `from` at `to`.
pub(crate) fn rewire(g: &mut Graph, from: usize, to: usize) {
    for node in g.nodes.iter_mut() {
        for i in node.inputs.iter_mut() {
            if *i == from {
                *i = to;
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PassReport {
    pub pass: String,
    pub nodes_removed: usize,
    pub bytes_saved: usize,
    pub conversions_inserted: usize,
    /// Human-readable reasons a candidate was left alone.
    pub skipped: Vec<String>,
}

impl PassReport {
    pub fn new(pass: impl Into<String>) -> Self {
        PassReport {
            pass: pass.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompileOptions {
    pub fold: bool,
    pub fuse: bool,
    /// Share buffers between non-overlapping activations. When off every
    /// output gets its own buffer.
    pub plan: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            fold: true,
            fuse: true,
            plan: true,
        }
    }
}

/// A validated, optimized graph with its memory plan.
#[derive(Debug, Clone)]
pub struct ExecutablePlan {
    pub graph: Graph,
    pub memory: MemoryPlan,
    pub reports: Vec<PassReport>,
    pub options: CompileOptions,
}

fn make_plan(graph: &Graph, opts: &CompileOptions) -> Result<MemoryPlan> {
    if opts.plan {
        plan_memory(graph)
    } else {
        naive_plan(graph)
    }
}

/// Validates `graph`, runs the enabled rewrites and plans memory.
pub fn compile(graph: &Graph, opts: &CompileOptions) -> Result<ExecutablePlan> {
    let diags = validate(graph);
    if !diags.is_empty() {
        return Err(Error::InvalidGraph(
            diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "),
        ));
    }
    let mut g = graph.clone();
    infer_shapes(&mut g)?;
    let mut reports = Vec::new();
    if opts.fold {
        let (next, r) = fold_bn_scale(&g)?;
        g = next;
        reports.push(r);
    }
    if opts.fuse {
        let (next, r) = fuse_activations(&g)?;
        g = next;
        reports.push(r);
    }
    infer_shapes(&mut g)?;
    let memory = make_plan(&g, opts)?;
    Ok(ExecutablePlan {
        graph: g,
        memory,
        reports,
        options: *opts,
    })
}

impl ExecutablePlan {
    /// Specializes the plan for `assignment`: inserts the layout conversions
    /// the chosen implementations need and re-plans memory.
    pub fn bind(&self, registry: &Registry, assignment: &Assignment) -> Result<ExecutablePlan> {
        assignment.check(&self.graph, registry)?;
        let (g, r) = insert_layout_conversions(&self.graph, registry, assignment)?;
        let memory = make_plan(&g, &self.options)?;
        let mut reports = self.reports.clone();
        reports.push(r);
        Ok(ExecutablePlan {
            graph: g,
            memory,
            reports,
            options: self.options,
        })
    }
}
