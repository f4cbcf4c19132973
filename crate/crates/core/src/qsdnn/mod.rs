//! Q-learning search over per-layer implementation assignments.
//!
//! Each episode walks the layers in order, picking one implementation per
//! layer ε-greedily from a table indexed by (layer, incoming layout). The
//! finished assignment is measured end to end; the negated latency is the
//! reward of every step and is propagated backwards through the episode's
//! states. A short refinement pass re-times the best few assignments so a
//! single lucky sample does not decide the result.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Graph, Layout};
use crate::kernels::{needs_impl, Assignment, LayoutReq, Registry};

pub const BRUTE_FORCE_LIMIT: u128 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchConfig {
    pub total_episodes: usize,
    /// Episodes run at ε = 1 before the linear decay starts.
    pub exploration_episodes: usize,
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub seed: u64,
    /// Restrict each layer to these implementation ids where at least one of
    /// them applies. Layers none of them can run keep their full choice.
    pub allowed: Option<Vec<String>>,
    /// Reuse the latency of an assignment already measured instead of
    /// measuring it again.
    pub cache_measurements: bool,
    /// After the episodes, re-measure this many of the fastest distinct
    /// assignments `refine_rounds` times each, keeping every assignment's
    /// lowest latency.
    pub refine_top: usize,
    pub refine_rounds: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            total_episodes: 1500,
            exploration_episodes: 500,
            learning_rate: 0.1,
            discount: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            seed: 0,
            allowed: None,
            cache_measurements: true,
            refine_top: 5,
            refine_rounds: 3,
        }
    }
}

impl SearchConfig {
    pub fn check(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if self.total_episodes == 0 {
            return Err(Error::Search("total_episodes must be positive".into()));
        }
        if self.exploration_episodes > self.total_episodes {
            return Err(Error::Search("exploration_episodes exceeds total_episodes".into()));
        }
        if !unit(self.learning_rate) || !unit(self.discount) {
            return Err(Error::Search("learning rate and discount must lie in (0, 1]".into()));
        }
        if ![self.epsilon_start, self.epsilon_end].iter().all(|e| (0.0..=1.0).contains(e)) {
            return Err(Error::Search("epsilon must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// ε for a 0-based episode index: flat during exploration, then linear
    /// down to `epsilon_end` at the final episode.
    pub fn epsilon(&self, episode: usize) -> f64 {
        if episode < self.exploration_episodes {
            return self.epsilon_start;
        }
        let span = self.total_episodes - self.exploration_episodes;
        if span <= 1 {
            return self.epsilon_end;
        }
        let t = (episode - self.exploration_episodes) as f64 / (span - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t.min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerChoice {
    pub node: usize,
    /// Position of the node whose output feeds this layer, if it is a
    /// searched layer; `None` for the graph input.
    pub source: Option<usize>,
    pub options: Vec<(String, LayoutReq)>,
}

/// The layers to decide, in execution order, with their candidate
/// implementations.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub layers: Vec<LayerChoice>,
    pub input_layout: Layout,
}

impl SearchSpace {
    pub fn new(graph: &Graph, registry: &Registry, allowed: Option<&[String]>) -> Result<Self> {
        let mut layers = Vec::new();
        let mut position: HashMap<usize, usize> = HashMap::new();
        for node in &graph.nodes {
            if !needs_impl(node) {
                // conversions are regenerated per assignment; follow through them
                if let Some(src) = node.inputs.first().and_then(|s| position.get(s)).copied() {
                    position.insert(node.id, src);
                }
                continue;
            }
            let all = registry.implementations_for(graph, node);
            if all.is_empty() {
                return Err(Error::Search(format!(
                    "no implementation applies to node {} ({})",
                    node.id, node.name
                )));
            }
            let filtered: Vec<&str> = match allowed {
                Some(ids) => all.iter().copied().filter(|id| ids.iter().any(|a| a == id)).collect(),
                None => all.clone(),
            };
            let chosen = if filtered.is_empty() { all } else { filtered };
            let options = chosen
                .into_iter()
                .map(|id| Ok((id.to_string(), registry.descriptor(id)?.layout)))
                .collect::<Result<Vec<_>>>()?;
            let source = node.inputs.first().and_then(|s| position.get(s)).copied();
            position.insert(node.id, layers.len());
            layers.push(LayerChoice {
                node: node.id,
                source,
                options,
            });
        }
        Ok(SearchSpace {
            layers,
            input_layout: graph.input.layout,
        })
    }

    /// Number of distinct assignments.
    pub fn size(&self) -> u128 {
        self.layers
            .iter()
            .map(|l| l.options.len() as u128)
            .fold(1u128, |a, b| a.saturating_mul(b))
    }

    pub fn assignment(&self, actions: &[usize]) -> Assignment {
        self.layers
            .iter()
            .zip(actions)
            .map(|(l, a)| (l.node, l.options[*a].0.clone()))
            .collect()
    }
}

/// Q-learning state: layer position and the layout its input arrives in.
pub type State = (usize, Layout);

/// Action values per state. Cells never updated hold NaN and are ignored by
/// the greedy choice, so an action is only preferred once it has been tried.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTable {
    values: HashMap<State, Vec<f64>>,
}

impl QTable {
    fn row(&mut self, s: State, n: usize) -> &mut Vec<f64> {
        self.values.entry(s).or_insert_with(|| vec![f64::NAN; n])
    }

    /// Value of an action, `None` until it has been updated.
    pub fn get(&self, s: State, action: usize) -> Option<f64> {
        self.values.get(&s).map(|r| r[action]).filter(|v| !v.is_nan())
    }

    /// Best tried action, lowest index on ties; 0 when nothing was tried.
    pub fn best_action(&self, s: State) -> usize {
        let mut best: Option<(usize, f64)> = None;
        for (i, v) in self.values.get(&s).into_iter().flatten().enumerate() {
            if !v.is_nan() && best.is_none_or(|(_, b)| *v > b) {
                best = Some((i, *v));
            }
        }
        best.map_or(0, |(i, _)| i)
    }

    /// Largest tried action value, 0 for an unseen state.
    pub fn max_value(&self, s: State) -> f64 {
        let m = self
            .values
            .get(&s)
            .map_or(f64::NAN, |r| r.iter().cloned().fold(f64::NAN, f64::max));
        if m.is_nan() {
            0.0
        } else {
            m
        }
    }

    pub fn states(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode: usize,
    pub assignment: Assignment,
    pub latency: f64,
    pub epsilon: f64,
    /// Lowest latency measured up to and including this episode.
    pub best: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub episodes: Vec<Episode>,
}

#[derive(Serialize)]
struct EpisodeRow {
    episode: usize,
    latency: f64,
    epsilon: f64,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Array of `{episode, latency, epsilon}` objects.
    pub fn to_json(&self) -> String {
        let rows: Vec<EpisodeRow> = self
            .episodes
            .iter()
            .map(|e| EpisodeRow {
                episode: e.episode,
                latency: e.latency,
                epsilon: e.epsilon,
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("episode log serializes")
    }

    /// `episode,latency,epsilon,best` with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("episode,latency,epsilon,best\n");
        for e in &self.episodes {
            let _ = writeln!(s, "{},{},{},{}", e.episode, e.latency, e.epsilon, e.best);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: Assignment,
    pub best_latency: f64,
    pub log: EpisodeLog,
    pub q: QTable,
}

/// Resumable search state; [`search`] wraps the common case.
pub struct Searcher<'s> {
    space: &'s SearchSpace,
    config: SearchConfig,
    rng: ChaCha8Rng,
    q: QTable,
    log: EpisodeLog,
    best: Option<(Assignment, f64)>,
    cache: HashMap<Vec<usize>, f64>,
}

impl<'s> Searcher<'s> {
    pub fn new(space: &'s SearchSpace, config: SearchConfig) -> Result<Self> {
        config.check()?;
        if space.layers.is_empty() {
            return Err(Error::Search("nothing to search: graph has no layers".into()));
        }
        Ok(Searcher {
            space,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            q: QTable::default(),
            log: EpisodeLog::default(),
            best: None,
            cache: HashMap::new(),
        })
    }

    fn layout_out(&self, layouts: &[Layout], layer: usize, action: usize) -> Layout {
        let incoming = self.incoming(layouts, layer);
        self.space.layers[layer].options[action].1.resolve(incoming)
    }

    fn incoming(&self, layouts: &[Layout], layer: usize) -> Layout {
        match self.space.layers[layer].source {
            Some(p) => layouts[p],
            None => self.space.input_layout,
        }
    }

    /// Picks every layer's action; `epsilon = 0` is the greedy rollout.
    fn rollout(&mut self, epsilon: f64) -> (Vec<State>, Vec<usize>) {
        let n = self.space.layers.len();
        let mut states = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        let mut layouts = Vec::with_capacity(n);
        for i in 0..n {
            let s = (i, self.incoming(&layouts, i));
            let k = self.space.layers[i].options.len();
            let a = if epsilon > 0.0 && self.rng.random_bool(epsilon) {
                self.rng.random_range(0..k)
            } else {
                self.q.best_action(s)
            };
            layouts.push(self.layout_out(&layouts, i, a));
            states.push(s);
            actions.push(a);
        }
        (states, actions)
    }

    pub fn greedy(&mut self) -> Assignment {
        let (_, actions) = self.rollout(0.0);
        self.space.assignment(&actions)
    }

    /// Runs one episode at the given ε and returns its measured latency.
    pub fn episode<M>(&mut self, epsilon: f64, measure: &mut M) -> Result<f64>
    where
        M: FnMut(&Assignment) -> Result<f64>,
    {
        let (states, actions) = self.rollout(epsilon);
        let assignment = self.space.assignment(&actions);
        let latency = match self.cache.get(&actions) {
            Some(l) if self.config.cache_measurements => *l,
            _ => {
                let l = measure(&assignment)?;
                if !l.is_finite() {
                    return Err(Error::Search(format!("measured latency {} is not finite", l)));
                }
                self.cache.insert(actions.clone(), l);
                l
            }
        };

        let (alpha, gamma) = (self.config.learning_rate, self.config.discount);
        for t in (0..states.len()).rev() {
            // every step sees the episode reward: a layer's state does not
            // record upstream choices, so bootstrapping alone would give
            // all of its actions the same target
            let target = if t + 1 == states.len() {
                -latency
            } else {
                -latency + gamma * self.q.max_value(states[t + 1])
            };
            let k = self.space.layers[t].options.len();
            let cell = &mut self.q.row(states[t], k)[actions[t]];
            // first visit takes the target outright
            *cell = if cell.is_nan() { target } else { *cell + alpha * (target - *cell) };
        }

        if self.best.as_ref().is_none_or(|(_, b)| latency < *b) {
            self.best = Some((assignment.clone(), latency));
        }
        let best = self.best.as_ref().map_or(latency, |(_, b)| *b);
        self.log.episodes.push(Episode {
            episode: self.log.episodes.len(),
            assignment,
            latency,
            epsilon,
            best,
        });
        Ok(latency)
    }

    /// Runs the configured schedule.
    pub fn run<M>(&mut self, measure: &mut M) -> Result<()>
    where
        M: FnMut(&Assignment) -> Result<f64>,
    {
        for e in 0..self.config.total_episodes {
            let eps = self.config.epsilon(e);
            self.episode(eps, measure)?;
        }
        self.refine(measure)
    }

    /// Re-measures the fastest distinct assignments seen so far, interleaved
    /// round by round. An assignment's latency is the lowest of all its
    /// measurements, so the result is still the fastest ever measured.
    pub fn refine<M>(&mut self, measure: &mut M) -> Result<()>
    where
        M: FnMut(&Assignment) -> Result<f64>,
    {
        let mut top: Vec<(Vec<usize>, f64)> = self.cache.iter().map(|(k, v)| (k.clone(), *v)).collect();
        top.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        top.truncate(self.config.refine_top);
        for _ in 0..self.config.refine_rounds {
            for (actions, _) in &top {
                let assignment = self.space.assignment(actions);
                let l = measure(&assignment)?;
                let cached = self.cache.get_mut(actions).expect("from the cache");
                *cached = cached.min(l);
                if self.best.as_ref().is_none_or(|(_, b)| l < *b) {
                    self.best = Some((assignment, l));
                }
            }
        }
        Ok(())
    }

    pub fn q_table(&self) -> &QTable {
        &self.q
    }

    pub fn finish(self) -> SearchResult {
        let (best, best_latency) = self.best.expect("at least one episode ran");
        SearchResult {
            best,
            best_latency,
            log: self.log,
            q: self.q,
        }
    }
}

/// Searches the assignment space of `graph` and returns the fastest
/// assignment ever measured along with the full episode log.
pub fn search<M>(graph: &Graph, registry: &Registry, measure: &mut M, config: &SearchConfig) -> Result<SearchResult>
where
    M: FnMut(&Assignment) -> Result<f64>,
{
    let space = SearchSpace::new(graph, registry, config.allowed.as_deref())?;
    let mut s = Searcher::new(&space, config.clone())?;
    s.run(measure)?;
    Ok(s.finish())
}

/// Measures every assignment in a space of at most [`BRUTE_FORCE_LIMIT`]
/// and returns the fastest (first in enumeration order on ties).
pub fn brute_force_space<M>(space: &SearchSpace, measure: &mut M) -> Result<(Assignment, f64)>
where
    M: FnMut(&Assignment) -> Result<f64>,
{
    let size = space.size();
    if size > BRUTE_FORCE_LIMIT {
        return Err(Error::SpaceTooLarge(size, BRUTE_FORCE_LIMIT));
    }
    let n = space.layers.len();
    let mut actions = vec![0usize; n];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let l = measure(&space.assignment(&actions))?;
        if best.as_ref().is_none_or(|(_, b)| l < *b) {
            best = Some((actions.clone(), l));
        }
        // odometer, last layer fastest
        let mut i = n;
        loop {
            if i == 0 {
                let (a, l) = best.expect("space is non-empty");
                return Ok((space.assignment(&a), l));
            }
            i -= 1;
            actions[i] += 1;
            if actions[i] < space.layers[i].options.len() {
                break;
            }
            actions[i] = 0;
        }
    }
}

pub fn brute_force<M>(
    graph: &Graph,
    registry: &Registry,
    measure: &mut M,
    allowed: Option<&[String]>,
) -> Result<(Assignment, f64)>
where
    M: FnMut(&Assignment) -> Result<f64>,
{
    brute_force_space(&SearchSpace::new(graph, registry, allowed)?, measure)
}
