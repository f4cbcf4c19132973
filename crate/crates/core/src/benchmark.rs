//! Latency measurement: warm-up runs are discarded, statistics are taken over
//! the measured runs only, on a monotonic clock.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Assignment, Executor, Registry};
use crate::passes::ExecutablePlan;
use crate::tensor::Tensor;

/// Relative standard deviation above which a measurement is flagged.
pub const UNSTABLE_CV: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub runs: usize,
    pub warmups: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { runs: 10, warmups: 1 }
    }
}

/// Milliseconds. `stddev` is the sample standard deviation (0 for one run).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub stddev: f64,
}

impl Stats {
    pub fn from_samples(ms: &[f64]) -> Self {
        assert!(!ms.is_empty(), "no samples");
        let n = ms.len() as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = if ms.len() > 1 {
            ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let min = ms.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = ms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Stats {
            // rounding in the sum must not push the mean outside [min, max]
            mean: mean.clamp(min, max),
            min,
            max,
            stddev: var.sqrt(),
        }
    }

    pub fn is_unstable(&self) -> bool {
        self.mean > 0.0 && self.stddev > UNSTABLE_CV * self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub node: usize,
    pub name: String,
    #[serde(rename = "impl")]
    pub impl_id: Option<String>,
    #[serde(flatten)]
    pub stats: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedLayer {
    pub node: usize,
    #[serde(rename = "impl")]
    pub impl_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub total: Stats,
    pub layers: Vec<LayerStats>,
    pub runs: usize,
    pub warmups: usize,
    pub assignment: Vec<AssignedLayer>,
    pub platform: String,
}

/// Something that runs one inference while timing each layer.
pub trait Runner {
    /// `(node id, name)` in the order timings are reported.
    fn layers(&self) -> Vec<(usize, String)>;
    fn run_timed(&mut self, input: &Tensor, per_layer: &mut Vec<Duration>) -> Result<()>;
}

impl Runner for Executor<'_> {
    fn layers(&self) -> Vec<(usize, String)> {
        self.node_ids().into_iter().zip(self.node_names()).collect()
    }

    fn run_timed(&mut self, input: &Tensor, per_layer: &mut Vec<Duration>) -> Result<()> {
        self.run_profiled(input, per_layer).map(|_| ())
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Per-layer statistics: node id, layer name and timing.
pub type LayerTimings = Vec<(usize, String, Stats)>;

/// Executes `warmups + runs` inferences and summarizes the last `runs`.
/// Returns total statistics and per-layer statistics in runner order.
pub fn measure<R: Runner + ?Sized>(
    runner: &mut R,
    input: &Tensor,
    cfg: &BenchConfig,
) -> Result<(Stats, LayerTimings)> {
    if cfg.runs == 0 {
        return Err(Error::InputMismatch("benchmark needs at least one measured run".into()));
    }
    let layers = runner.layers();
    let mut per_layer = Vec::with_capacity(layers.len());
    for _ in 0..cfg.warmups {
        runner.run_timed(input, &mut per_layer)?;
    }
    let mut totals = Vec::with_capacity(cfg.runs);
    let mut layer_samples = vec![Vec::with_capacity(cfg.runs); layers.len()];
    for _ in 0..cfg.runs {
        let t = Instant::now();
        runner.run_timed(input, &mut per_layer)?;
        totals.push(ms(t.elapsed()));
        for (s, d) in layer_samples.iter_mut().zip(&per_layer) {
            s.push(ms(*d));
        }
    }
    let total = Stats::from_samples(&totals);
    let layers = layers
        .into_iter()
        .zip(layer_samples)
        .filter(|(_, s)| !s.is_empty())
        .map(|((id, name), s)| (id, name, Stats::from_samples(&s)))
        .collect();
    Ok((total, layers))
}

pub fn platform_note() -> String {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!(
        "{}-{}, {} hardware threads, single-threaded kernels",
        std::env::consts::OS,
        std::env::consts::ARCH,
        threads
    )
}

/// Binds `plan` to `assignment` and benchmarks it.
pub fn benchmark(
    plan: &ExecutablePlan,
    registry: &Registry,
    assignment: &Assignment,
    input: &Tensor,
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    let bound = plan.bind(registry, assignment)?;
    let mut exec = Executor::new(&bound, registry, assignment)?;
    let (total, layers) = measure(&mut exec, input, cfg)?;
    if total.is_unstable() {
        log::warn!(
            "unstable timing: stddev {:.3} ms is over {:.0}% of mean {:.3} ms",
            total.stddev,
            UNSTABLE_CV * 100.0,
            total.mean
        );
    }
    Ok(BenchReport {
        total,
        layers: layers
            .into_iter()
            .map(|(node, name, stats)| LayerStats {
                node,
                name,
                impl_id: assignment.get(node).map(str::to_string),
                stats,
            })
            .collect(),
        runs: cfg.runs,
        warmups: cfg.warmups,
        assignment: assignment
            .iter()
            .map(|(node, id)| AssignedLayer {
                node,
                impl_id: id.to_string(),
            })
            .collect(),
        platform: platform_note(),
    })
}

/// A latency oracle for the implementation search: the fastest of
/// `cfg.runs` inferences of `plan` bound to the given assignment, in
/// milliseconds. Timing noise only ever adds time, so the minimum separates
/// close implementations with fewer runs than the mean.
pub fn latency_measure<'a>(
    plan: &'a ExecutablePlan,
    registry: &'a Registry,
    input: &'a Tensor,
    cfg: BenchConfig,
) -> impl FnMut(&Assignment) -> Result<f64> + 'a {
    move |a: &Assignment| {
        let bound = plan.bind(registry, a)?;
        let mut exec = Executor::new(&bound, registry, a)?;
        Ok(measure(&mut exec, input, &cfg)?.0.min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TensorDesc;

    struct Counting {
        calls: usize,
        first_layer: Vec<Duration>,
    }

    impl Runner for Counting {
        fn layers(&self) -> Vec<(usize, String)> {
            vec![(1, "a".into()), (2, "b".into())]
        }
        fn run_timed(&mut self, _: &Tensor, per_layer: &mut Vec<Duration>) -> Result<()> {
            per_layer.clear();
            let d = self.first_layer.get(self.calls).copied().unwrap_or_default();
            self.calls += 1;
            per_layer.push(d);
            per_layer.push(Duration::ZERO);
            Ok(())
        }
    }

    #[test]
    fn eleven_executions_ten_measured() {
        let mut r = Counting {
            calls: 0,
            // warm-up would dominate the stats if it were counted
            first_layer: std::iter::once(Duration::from_secs(3600)).chain(std::iter::repeat_n(Duration::ZERO, 10)).collect(),
        };
        let x = Tensor::zeros(TensorDesc::f32(1, 1, 1));
        let (_, layers) = measure(&mut r, &x, &BenchConfig::default()).unwrap();
        assert_eq!(r.calls, 11);
        assert_eq!(layers[0].2.max, 0.0);
    }

    #[test]
    fn single_run_stats_degenerate() {
        let s = Stats::from_samples(&[2.5]);
        assert_eq!((s.mean, s.min, s.max, s.stddev), (2.5, 2.5, 2.5, 0.0));
        let s = Stats::from_samples(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.stddev - 1.0).abs() < 1e-12);
        assert!(Stats::from_samples(&[1.0, 3.0]).is_unstable());
        assert!(!Stats::from_samples(&[1.0, 1.1]).is_unstable());
    }

    #[test]
    fn zero_runs_rejected() {
        let mut r = Counting { calls: 0, first_layer: vec![] };
        let x = Tensor::zeros(TensorDesc::f32(1, 1, 1));
        assert!(measure(&mut r, &x, &BenchConfig { runs: 0, warmups: 1 }).is_err());
        assert_eq!(r.calls, 0);
    }
}
