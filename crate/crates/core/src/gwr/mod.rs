//! The grow-when-required replay map.
//!
//! The map maintains a self-organizing network over visited states. Each
//! incoming transition either inserts a node exactly at the new state or
//! merges the state into its best-matching unit (BMU), gated by the
//! activation and habituation thresholds. Consecutively activated BMUs are
//! linked by directed temporal edges that accumulate a traversal count and
//! exponentially averaged action and reward; replay batches are sampled by
//! walking those edges, so the tuples handed to the agent live in map space
//! rather than raw state space.
//!
//! With both thresholds above 1 every sample inserts a distinct node and the
//! map stores the raw stream verbatim, mimicking a conventional buffer.

mod snapshot;

pub use snapshot::{
    MapSnapshot, NeighborhoodEdgeRecord, NodeRecord, TemporalEdgeRecord, FORMAT_VERSION,
};

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::{ReplayBatch, ReplayMemory, Transition};

/// Stable node identifier. Ids increase monotonically and are never reused
/// within one map's lifetime.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct NodeId(pub u64);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// How `sample` draws tuples from the graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Source node uniform over nodes with at least one outgoing temporal
    /// edge, successor proportional to traversal counts.
    #[default]
    GraphWalk,
    /// Source node uniform over all nodes, rejecting edge-less picks with a
    /// retry cap of 64; falls back to the eligible-only draw on exhaustion.
    AllNodesRejection,
    /// Uniform over stored temporal edges. When every input inserted a
    /// distinct node (counts all 1) this is tuple-equivalent to a uniform
    /// draw from a FIFO buffer holding the same stream.
    TupleUniform,
}

/// Map hyperparameters. Field defaults follow the reference configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GwrParams {
    /// Activation threshold; insertion requires BMU activation below it.
    pub activation_threshold: f64,
    /// Habituation threshold; insertion requires BMU habituation below it.
    pub habituation_threshold: f64,
    /// Habituation rate for the BMU.
    pub tau_bmu: f64,
    /// Habituation rate for the BMU's neighbors.
    pub tau_neighbor: f64,
    /// Habituation curve constant; the habituation floor is `1 - 1/kappa`.
    pub kappa: f64,
    /// Weight of the incoming value in the exponential edge average.
    pub phi: f64,
    /// Number of temporal context descriptors per node (K). Zero disables
    /// the context machinery entirely.
    pub context_depth: usize,
    /// Blend factor for the context recursion.
    pub context_beta: f64,
    /// Neighborhood edges older than this are removed.
    pub age_max: u32,
    /// Learning rate moving the BMU toward the sample.
    pub eps_bmu: f64,
    /// Learning rate moving the BMU's neighbors toward the sample.
    pub eps_neighbor: f64,
    /// Per-coordinate uniform range for the two seed nodes.
    pub init_range: (f64, f64),
    pub sample_mode: SampleMode,
    /// Threshold sampled done flags at 0.5 instead of passing fractional
    /// averages through.
    pub threshold_done: bool,
    /// Record |incoming action - stored edge action| at each merge for
    /// `drift_stats`.
    pub record_drift: bool,
}

impl Default for GwrParams {
    fn default() -> Self {
        GwrParams {
            activation_threshold: 0.95,
            habituation_threshold: 0.8,
            tau_bmu: 0.3,
            tau_neighbor: 0.1,
            kappa: 1.05,
            phi: 0.7,
            context_depth: 4,
            context_beta: 0.7,
            age_max: 10,
            eps_bmu: 0.1,
            eps_neighbor: 0.001,
            init_range: (-1.0, 1.0),
            sample_mode: SampleMode::GraphWalk,
            threshold_done: false,
            record_drift: false,
        }
    }
}

impl GwrParams {
    /// Thresholds above 1 make every sample insert a node, so the map stores
    /// the raw stream verbatim.
    pub fn always_insert() -> Self {
        GwrParams {
            activation_threshold: 1.1,
            habituation_threshold: 1.1,
            ..GwrParams::default()
        }
    }

    /// Lowest habituation reachable under the update rule.
    pub fn habituation_floor(&self) -> f64 {
        1.0 - 1.0 / self.kappa
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.activation_threshold > 0.0 && self.activation_threshold.is_finite()) {
            return Err(Error::config("activation threshold must be finite and > 0"));
        }
        if !(self.habituation_threshold > 0.0 && self.habituation_threshold.is_finite()) {
            return Err(Error::config("habituation threshold must be finite and > 0"));
        }
        for (name, v) in [
            ("tau_bmu", self.tau_bmu),
            ("tau_neighbor", self.tau_neighbor),
            ("phi", self.phi),
            ("context_beta", self.context_beta),
            ("eps_bmu", self.eps_bmu),
            ("eps_neighbor", self.eps_neighbor),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.kappa > 1.0) {
            return Err(Error::config(format!("kappa must be > 1, got {}", self.kappa)));
        }
        if self.age_max < 1 {
            return Err(Error::config("age_max must be >= 1"));
        }
        if !(self.init_range.0 < self.init_range.1) {
            return Err(Error::config("init range must be a nonempty interval"));
        }
        Ok(())
    }
}

/// One network node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GwrNode {
    /// Position in map space (same dimension as the state space).
    pub weight: Vec<f64>,
    /// Firing counter decaying from 1 toward `1 - 1/kappa`.
    pub habituation: f64,
    /// Exponentially averaged done flag of the states merged here.
    pub done_avg: f64,
    /// Number of done updates applied (the `n` of the averaging rule).
    pub done_updates: u64,
    /// K context vectors, each the dimension of `weight`.
    pub context: Vec<Vec<f64>>,
}

/// One directed temporal edge: traversal count plus averaged action and
/// reward. The count doubles as the number of averaging updates applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalEdge {
    pub count: u64,
    pub action: Vec<f64>,
    pub reward: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AddKind {
    Inserted,
    Merged,
}

/// Outcome of one `add` call (of its final network update when the call
/// learned an episode-start state first).
#[derive(Clone, Debug, PartialEq)]
pub struct AddOutcome {
    pub kind: AddKind,
    pub bmu: NodeId,
    pub new_node: Option<NodeId>,
}

/// Summary returned by [`GwrMap::drift_stats`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftSummary {
    pub count: usize,
    pub mean: f64,
    pub max: f64,
}

const DRIFT_CAPACITY: usize = 65_536;
const REJECTION_RETRY_CAP: usize = 64;

/// The grow-when-required replay map.
#[derive(Clone, Debug)]
pub struct GwrMap {
    params: GwrParams,
    state_dim: usize,
    action_dim: Option<usize>,
    nodes: BTreeMap<NodeId, GwrNode>,
    /// Symmetric adjacency of undirected neighborhood edges with ages;
    /// `neighborhood[a][b] == neighborhood[b][a]` always.
    neighborhood: BTreeMap<NodeId, BTreeMap<NodeId, u32>>,
    /// Directed temporal edges keyed by source, then target.
    temporal: BTreeMap<NodeId, BTreeMap<NodeId, TemporalEdge>>,
    /// Reverse index: target -> sources, kept in lockstep with `temporal`.
    temporal_in: BTreeMap<NodeId, BTreeSet<NodeId>>,
    temporal_len: usize,
    last_bmu: Option<NodeId>,
    /// Set when a terminal done flag was seen; the next sample is then
    /// treated as an episode start even without the explicit flag.
    pending_episode_start: bool,
    /// Current global context vectors (K entries of state dimension).
    global_context: Vec<Vec<f64>>,
    next_id: u64,
    inserts: u64,
    merges: u64,
    drift: VecDeque<f64>,
}

/// Activation of a node at the given distance from the sample.
pub fn activation(dist: f64) -> f64 {
    (-dist).exp()
}

/// One habituation step: `h + tau * (kappa * (1 - h) - 1)`, clamped to the
/// reachable band `[1 - 1/kappa, 1]`.
pub fn habituate(h: f64, tau: f64, kappa: f64) -> f64 {
    (h + tau * (kappa * (1.0 - h) - 1.0)).clamp(1.0 - 1.0 / kappa, 1.0)
}

/// Exponentially weighted average shared by done flags and edge values:
/// the first update takes the incoming value verbatim, later updates blend
/// `phi * incoming + (1 - phi) * old`.
pub fn ewa_update(old: f64, incoming: f64, phi: f64, is_first: bool) -> f64 {
    if is_first {
        incoming
    } else {
        phi * incoming + (1.0 - phi) * old
    }
}

/// Vector form of [`ewa_update`], applied component-wise in place.
pub fn ewa_update_vec(old: &mut [f64], incoming: &[f64], phi: f64, is_first: bool) {
    debug_assert_eq!(old.len(), incoming.len());
    for (o, i) in old.iter_mut().zip(incoming) {
        *o = ewa_update(*o, *i, phi, is_first);
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl GwrMap {
    /// Creates a map with two seed nodes at positions drawn uniformly from
    /// the configured init range.
    pub fn new(params: GwrParams, state_dim: usize, rng: &mut dyn RngCore) -> Result<Self> {
        params.validate()?;
        if state_dim == 0 {
            return Err(Error::config("state dimension must be >= 1"));
        }
        let (lo, hi) = params.init_range;
        let k = params.context_depth;
        let mut map = GwrMap {
            params,
            state_dim,
            action_dim: None,
            nodes: BTreeMap::new(),
            neighborhood: BTreeMap::new(),
            temporal: BTreeMap::new(),
            temporal_in: BTreeMap::new(),
            temporal_len: 0,
            last_bmu: None,
            pending_episode_start: false,
            global_context: vec![vec![0.0; state_dim]; k],
            next_id: 0,
            inserts: 0,
            merges: 0,
            drift: VecDeque::new(),
        };
        for _ in 0..2 {
            let weight: Vec<f64> = (0..state_dim).map(|_| rng.gen_range(lo..=hi)).collect();
            let id = map.alloc_id();
            map.nodes.insert(
                id,
                GwrNode {
                    weight,
                    habituation: 1.0,
                    done_avg: 0.0,
                    done_updates: 0,
                    context: vec![vec![0.0; state_dim]; k],
                },
            );
        }
        Ok(map)
    }

    fn alloc_id(&mut self) -> NodeId {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        id
    }

    pub fn params(&self) -> &GwrParams {
        &self.params
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> Option<&GwrNode> {
        self.nodes.get(&id)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn last_bmu(&self) -> Option<NodeId> {
        self.last_bmu
    }

    /// Cumulative (inserted, merged) sample counts.
    pub fn update_counts(&self) -> (u64, u64) {
        (self.inserts, self.merges)
    }

    pub fn temporal_edge(&self, from: NodeId, to: NodeId) -> Option<&TemporalEdge> {
        self.temporal.get(&from).and_then(|m| m.get(&to))
    }

    pub fn temporal_edge_count(&self) -> usize {
        self.temporal_len
    }

    /// Key view of the traversal-count matrix.
    pub fn temporal_counts(&self) -> impl Iterator<Item = ((NodeId, NodeId), u64)> + '_ {
        self.temporal
            .iter()
            .flat_map(|(&f, m)| m.iter().map(move |(&t, e)| ((f, t), e.count)))
    }

    /// Key view of the averaged-action matrix.
    pub fn temporal_actions(&self) -> impl Iterator<Item = ((NodeId, NodeId), &[f64])> + '_ {
        self.temporal
            .iter()
            .flat_map(|(&f, m)| m.iter().map(move |(&t, e)| ((f, t), e.action.as_slice())))
    }

    /// Key view of the averaged-reward matrix.
    pub fn temporal_rewards(&self) -> impl Iterator<Item = ((NodeId, NodeId), f64)> + '_ {
        self.temporal
            .iter()
            .flat_map(|(&f, m)| m.iter().map(move |(&t, e)| ((f, t), e.reward)))
    }

    /// Undirected neighborhood edges as `((low, high), age)`.
    pub fn neighborhood_edges(&self) -> impl Iterator<Item = ((NodeId, NodeId), u32)> + '_ {
        self.neighborhood.iter().flat_map(|(&a, m)| {
            m.iter()
                .filter(move |(&b, _)| a < b)
                .map(move |(&b, &age)| ((a, b), age))
        })
    }

    pub fn neighbors_of(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.neighborhood
            .get(&id)
            .into_iter()
            .flat_map(|m| m.keys().copied())
    }

    /// Successor probabilities from `s`, proportional to traversal counts.
    pub fn successor_distribution(&self, s: NodeId) -> Vec<(NodeId, f64)> {
        let Some(out) = self.temporal.get(&s) else {
            return Vec::new();
        };
        let total: u64 = out.values().map(|e| e.count).sum();
        out.iter()
            .map(|(&t, e)| (t, e.count as f64 / total as f64))
            .collect()
    }

    /// Distance from a node to a sample. With no context descriptors this is
    /// the Euclidean distance; otherwise the spatial term and the K context
    /// terms are averaged under the root so the activation scale stays
    /// comparable across context depths.
    pub fn distance(&self, id: NodeId, x: &[f64]) -> Result<f64> {
        let node = self
            .nodes
            .get(&id)
            .ok_or_else(|| Error::config(format!("unknown node {id}")))?;
        self.check_state_dim(x)?;
        Ok(self.distance_to(node, x))
    }

    fn distance_to(&self, node: &GwrNode, x: &[f64]) -> f64 {
        let k = self.params.context_depth;
        if k == 0 {
            return sq_dist(x, &node.weight).sqrt();
        }
        let mut acc = sq_dist(x, &node.weight);
        for (global, own) in self.global_context.iter().zip(&node.context) {
            acc += sq_dist(global, own);
        }
        (acc / (k + 1) as f64).sqrt()
    }

    fn check_state_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::config(format!(
                "sample dimension {} does not match map dimension {}",
                x.len(),
                self.state_dim
            )));
        }
        Ok(())
    }

    /// BMU and second-BMU for a sample; ties break toward the lower id.
    fn find_bmu_pair(&self, x: &[f64]) -> (NodeId, f64, NodeId) {
        debug_assert!(self.nodes.len() >= 2);
        let mut best: Option<(NodeId, f64)> = None;
        let mut second: Option<(NodeId, f64)> = None;
        for (&id, node) in &self.nodes {
            let d = self.distance_to(node, x);
            match best {
                Some((_, bd)) if d >= bd => match second {
                    Some((_, sd)) if d >= sd => {}
                    _ => second = Some((id, d)),
                },
                _ => {
                    second = best;
                    best = Some((id, d));
                }
            }
        }
        let (b, bd) = best.expect("map holds at least two nodes");
        let (s, _) = second.expect("map holds at least two nodes");
        (b, bd, s)
    }

    /// Feeds one transition into the map.
    ///
    /// When the transition starts an episode (explicit flag or a terminal
    /// done seen on the previous call), the temporal chain and the global
    /// context are reset and `state` is learned as a standalone sample
    /// before `next_state`, so episode starts grow the map by up to two
    /// nodes and never bridge episodes with a temporal edge.
    pub fn add(&mut self, t: &Transition) -> Result<AddOutcome> {
        self.check_state_dim(&t.state)?;
        self.check_state_dim(&t.next_state)?;
        match self.action_dim {
            None => self.action_dim = Some(t.action.len()),
            Some(d) if d != t.action.len() => {
                return Err(Error::config(format!(
                    "transition action dimension {} does not match map dimension {d}",
                    t.action.len()
                )));
            }
            _ => {}
        }
        let boundary = t.episode_start || self.pending_episode_start;
        self.pending_episode_start = false;
        if boundary {
            self.last_bmu = None;
            for c in &mut self.global_context {
                c.iter_mut().for_each(|v| *v = 0.0);
            }
            // Episode-start states are never terminal; learn with done 0.
            self.learn_sample(&t.state, None, 0.0);
        }
        let outcome = self.learn_sample(&t.next_state, Some((&t.action, t.reward)), t.done);
        if t.done >= 0.5 {
            self.pending_episode_start = true;
        }
        Ok(outcome)
    }

    /// One network update for sample `x`. `payload` carries the action and
    /// reward for the temporal edge from the previous BMU; episode-start
    /// samples pass `None` (their chain is already cut).
    fn learn_sample(&mut self, x: &[f64], payload: Option<(&[f64], f64)>, done: f64) -> AddOutcome {
        let (bmu, bmu_dist, second) = self.find_bmu_pair(x);
        let h_bmu = self.nodes[&bmu].habituation;
        let insert = activation(bmu_dist) < self.params.activation_threshold
            && h_bmu < self.params.habituation_threshold;

        let outcome = if insert {
            let k = self.alloc_id();
            self.nodes.insert(
                k,
                GwrNode {
                    weight: x.to_vec(),
                    habituation: 1.0,
                    done_avg: done,
                    done_updates: 1,
                    context: self.global_context.clone(),
                },
            );
            self.set_neighbor_age(k, bmu, 0);
            self.set_neighbor_age(k, second, 0);
            if let (Some(prev), Some((action, reward))) = (self.last_bmu, payload) {
                self.bump_temporal(prev, k, action, reward);
            }
            self.inserts += 1;
            self.age_and_prune(k, &[bmu, second]);
            AddOutcome {
                kind: AddKind::Inserted,
                bmu,
                new_node: Some(k),
            }
        } else {
            self.set_neighbor_age(bmu, second, 0);
            let neighbors: Vec<NodeId> = self.neighbors_of(bmu).collect();
            self.move_node(bmu, x, self.params.eps_bmu);
            for &n in &neighbors {
                self.move_node(n, x, self.params.eps_neighbor);
            }
            {
                let phi = self.params.phi;
                let node = self.nodes.get_mut(&bmu).expect("bmu is live");
                node.done_avg = ewa_update(node.done_avg, done, phi, node.done_updates == 0);
                node.done_updates += 1;
            }
            if let (Some(prev), Some((action, reward))) = (self.last_bmu, payload) {
                self.bump_temporal(prev, bmu, action, reward);
            }
            let (tau_b, tau_n, kappa) = (
                self.params.tau_bmu,
                self.params.tau_neighbor,
                self.params.kappa,
            );
            {
                let node = self.nodes.get_mut(&bmu).expect("bmu is live");
                node.habituation = habituate(node.habituation, tau_b, kappa);
            }
            for &n in &neighbors {
                let node = self.nodes.get_mut(&n).expect("neighbor is live");
                node.habituation = habituate(node.habituation, tau_n, kappa);
            }
            self.merges += 1;
            self.age_and_prune(bmu, &[second]);
            AddOutcome {
                kind: AddKind::Merged,
                bmu,
                new_node: None,
            }
        };

        let winner = outcome.new_node.unwrap_or(outcome.bmu);
        self.update_global_context(winner);
        self.last_bmu = Some(winner);
        outcome
    }

    /// Moves a node's weight and context vectors toward the sample and the
    /// current global context, scaled by the node's own habituation.
    fn move_node(&mut self, id: NodeId, x: &[f64], eps: f64) {
        let global = std::mem::take(&mut self.global_context);
        {
            let node = self.nodes.get_mut(&id).expect("moved node is live");
            let step = eps * node.habituation;
            for (w, xi) in node.weight.iter_mut().zip(x) {
                *w += step * (xi - *w);
            }
            for (own, target) in node.context.iter_mut().zip(&global) {
                for (c, g) in own.iter_mut().zip(target) {
                    *c += step * (g - *c);
                }
            }
        }
        self.global_context = global;
    }

    fn set_neighbor_age(&mut self, a: NodeId, b: NodeId, age: u32) {
        debug_assert_ne!(a, b);
        self.neighborhood.entry(a).or_default().insert(b, age);
        self.neighborhood.entry(b).or_default().insert(a, age);
    }

    /// Creates the temporal edge with the raw values or folds the incoming
    /// values into the existing averages.
    fn bump_temporal(&mut self, from: NodeId, to: NodeId, action: &[f64], reward: f64) {
        let out = self.temporal.entry(from).or_default();
        if let Some(edge) = out.get_mut(&to) {
            if self.params.record_drift {
                let dev = edge
                    .action
                    .iter()
                    .zip(action)
                    .map(|(s, a)| (s - a).abs())
                    .fold(0.0_f64, f64::max);
                if self.drift.len() == DRIFT_CAPACITY {
                    self.drift.pop_front();
                }
                self.drift.push_back(dev);
            }
            edge.count += 1;
            ewa_update_vec(&mut edge.action, action, self.params.phi, false);
            edge.reward = ewa_update(edge.reward, reward, self.params.phi, false);
        } else {
            out.insert(
                to,
                TemporalEdge {
                    count: 1,
                    action: action.to_vec(),
                    reward,
                },
            );
            self.temporal_in.entry(to).or_default().insert(from);
            self.temporal_len += 1;
        }
    }

    /// Ages the winner's neighborhood edges (edges created or reset this
    /// call stay at 0), removes over-age edges, and prunes nodes left
    /// without neighborhood edges together with their temporal keys.
    fn age_and_prune(&mut self, winner: NodeId, fresh: &[NodeId]) {
        let partners: Vec<NodeId> = self.neighbors_of(winner).collect();
        let mut dead_edges: Vec<NodeId> = Vec::new();
        for p in partners {
            if fresh.contains(&p) {
                continue;
            }
            let age = {
                let a = self
                    .neighborhood
                    .get_mut(&winner)
                    .and_then(|m| m.get_mut(&p))
                    .expect("adjacency is symmetric");
                *a += 1;
                *a
            };
            let mirror = self
                .neighborhood
                .get_mut(&p)
                .and_then(|m| m.get_mut(&winner))
                .expect("adjacency is symmetric");
            *mirror = age;
            if age > self.params.age_max {
                dead_edges.push(p);
            }
        }
        let mut orphans: Vec<NodeId> = Vec::new();
        for p in dead_edges {
            self.remove_neighbor_edge(winner, p);
            if self.neighborhood.get(&p).map_or(true, BTreeMap::is_empty) {
                orphans.push(p);
            }
        }
        // The winner always keeps a fresh edge, so it can never be orphaned
        // here and the map never drops below two nodes.
        for p in orphans {
            self.remove_node(p);
        }
        debug_assert!(self.nodes.len() >= 2);
    }

    fn remove_neighbor_edge(&mut self, a: NodeId, b: NodeId) {
        if let Some(m) = self.neighborhood.get_mut(&a) {
            m.remove(&b);
        }
        if let Some(m) = self.neighborhood.get_mut(&b) {
            m.remove(&a);
        }
    }

    fn remove_node(&mut self, id: NodeId) {
        self.nodes.remove(&id);
        self.neighborhood.remove(&id);
        if let Some(out) = self.temporal.remove(&id) {
            self.temporal_len -= out.len();
            for to in out.keys() {
                if let Some(sources) = self.temporal_in.get_mut(to) {
                    sources.remove(&id);
                    if sources.is_empty() {
                        self.temporal_in.remove(to);
                    }
                }
            }
        }
        if let Some(sources) = self.temporal_in.remove(&id) {
            for from in sources {
                if let Some(out) = self.temporal.get_mut(&from) {
                    if out.remove(&id).is_some() {
                        self.temporal_len -= 1;
                    }
                    if out.is_empty() {
                        self.temporal.remove(&from);
                    }
                }
            }
        }
        if self.last_bmu == Some(id) {
            self.last_bmu = None;
        }
    }

    /// Recomputes the global context from the winner: the first descriptor
    /// blends toward the winner's weight, deeper ones toward its shallower
    /// stored descriptors.
    fn update_global_context(&mut self, winner: NodeId) {
        if self.params.context_depth == 0 {
            return;
        }
        let beta = self.params.context_beta;
        let node = &self.nodes[&winner];
        let mut fresh = Vec::with_capacity(self.params.context_depth);
        for k in 1..=self.params.context_depth {
            let prior: &[f64] = if k == 1 {
                &node.weight
            } else {
                &node.context[k - 2]
            };
            let blended: Vec<f64> = node
                .weight
                .iter()
                .zip(prior)
                .map(|(w, c)| beta * w + (1.0 - beta) * c)
                .collect();
            fresh.push(blended);
        }
        self.global_context = fresh;
    }

    /// Samples `n` synthetic transitions by walking the temporal graph.
    pub fn sample_batch(&self, n: usize, rng: &mut dyn RngCore) -> Result<ReplayBatch> {
        if self.temporal_len == 0 {
            return Err(Error::EmptyMemory("map holds no temporal edges".into()));
        }
        if n == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        let mut transitions = Vec::with_capacity(n);
        match self.params.sample_mode {
            SampleMode::GraphWalk => {
                let eligible: Vec<NodeId> = self.temporal.keys().copied().collect();
                for _ in 0..n {
                    let s = eligible[rng.gen_range(0..eligible.len())];
                    transitions.push(self.draw_from(s, rng));
                }
            }
            SampleMode::AllNodesRejection => {
                let all: Vec<NodeId> = self.nodes.keys().copied().collect();
                let eligible: Vec<NodeId> = self.temporal.keys().copied().collect();
                for _ in 0..n {
                    let mut picked = None;
                    for _ in 0..REJECTION_RETRY_CAP {
                        let s = all[rng.gen_range(0..all.len())];
                        if self.temporal.contains_key(&s) {
                            picked = Some(s);
                            break;
                        }
                    }
                    let s = picked.unwrap_or_else(|| eligible[rng.gen_range(0..eligible.len())]);
                    transitions.push(self.draw_from(s, rng));
                }
            }
            SampleMode::TupleUniform => {
                let edges: Vec<(NodeId, NodeId)> = self
                    .temporal
                    .iter()
                    .flat_map(|(&f, m)| m.keys().map(move |&t| (f, t)))
                    .collect();
                for _ in 0..n {
                    let (s, t) = edges[rng.gen_range(0..edges.len())];
                    transitions.push(self.emit(s, t));
                }
            }
        }
        Ok(ReplayBatch { transitions })
    }

    fn draw_from(&self, s: NodeId, rng: &mut dyn RngCore) -> Transition {
        let out = &self.temporal[&s];
        let total: u64 = out.values().map(|e| e.count).sum();
        let mut pick = rng.gen_range(0..total);
        for (&t, edge) in out {
            if pick < edge.count {
                return self.emit(s, t);
            }
            pick -= edge.count;
        }
        unreachable!("cumulative counts cover the draw range");
    }

    fn emit(&self, s: NodeId, t: NodeId) -> Transition {
        let edge = &self.temporal[&s][&t];
        let done_raw = self.nodes[&t].done_avg;
        let done = if self.params.threshold_done {
            if done_raw >= 0.5 {
                1.0
            } else {
                0.0
            }
        } else {
            done_raw
        };
        Transition {
            state: self.nodes[&s].weight.clone(),
            next_state: self.nodes[&t].weight.clone(),
            action: edge.action.clone(),
            reward: edge.reward,
            done,
            episode_start: false,
        }
    }

    /// Running statistics over the most recent `window` recorded action
    /// deviations at merge time.
    pub fn drift_stats(&self, window: usize) -> Result<DriftSummary> {
        if !self.params.record_drift {
            return Err(Error::Unavailable(
                "drift recording is disabled in the map parameters".into(),
            ));
        }
        let take = window.min(self.drift.len());
        let slice = self.drift.iter().rev().take(take);
        let mut max = 0.0_f64;
        let mut sum = 0.0_f64;
        for &d in slice {
            max = max.max(d);
            sum += d;
        }
        Ok(DriftSummary {
            count: take,
            mean: if take == 0 { 0.0 } else { sum / take as f64 },
            max,
        })
    }

    /// Raw recorded drift deviations, oldest first.
    pub fn drift_records(&self) -> impl Iterator<Item = f64> + '_ {
        self.drift.iter().copied()
    }

    /// Verifies the map's structural invariants; returns human-readable
    /// violations (empty means the map is sound).
    pub fn check_integrity(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let floor = self.params.habituation_floor() - 1e-12;
        for (&id, node) in &self.nodes {
            if node.weight.len() != self.state_dim {
                problems.push(format!("{id}: weight dimension {}", node.weight.len()));
            }
            if node.context.len() != self.params.context_depth {
                problems.push(format!("{id}: context depth {}", node.context.len()));
            }
            if !(floor..=1.0 + 1e-12).contains(&node.habituation) {
                problems.push(format!("{id}: habituation {} out of band", node.habituation));
            }
            if !(0.0..=1.0).contains(&node.done_avg) {
                problems.push(format!("{id}: done average {}", node.done_avg));
            }
        }
        for (&a, m) in &self.neighborhood {
            if !self.nodes.contains_key(&a) {
                problems.push(format!("neighborhood references dead node {a}"));
            }
            for (&b, &age) in m {
                if !self.nodes.contains_key(&b) {
                    problems.push(format!("neighborhood edge {a}-{b} references dead node"));
                }
                if self.neighborhood.get(&b).and_then(|n| n.get(&a)) != Some(&age) {
                    problems.push(format!("neighborhood edge {a}-{b} not symmetric"));
                }
                if age > self.params.age_max {
                    problems.push(format!("neighborhood edge {a}-{b} over-age {age}"));
                }
            }
        }
        let mut seen = 0usize;
        for (&f, out) in &self.temporal {
            if !self.nodes.contains_key(&f) {
                problems.push(format!("temporal source {f} is dead"));
            }
            let mut total = 0u64;
            for (&t, edge) in out {
                seen += 1;
                if !self.nodes.contains_key(&t) {
                    problems.push(format!("temporal edge {f}->{t} references dead node"));
                }
                if edge.count == 0 {
                    problems.push(format!("temporal edge {f}->{t} has zero count"));
                }
                if self
                    .temporal_in
                    .get(&t)
                    .map_or(true, |s| !s.contains(&f))
                {
                    problems.push(format!("temporal edge {f}->{t} missing reverse index"));
                }
                total += edge.count;
            }
            if total > 0 {
                let prob_sum: f64 = out.values().map(|e| e.count as f64 / total as f64).sum();
                if (prob_sum - 1.0).abs() > 1e-12 {
                    problems.push(format!("successor probabilities from {f} sum to {prob_sum}"));
                }
            }
        }
        if seen != self.temporal_len {
            problems.push(format!(
                "temporal edge count {} does not match stored {}",
                seen, self.temporal_len
            ));
        }
        for (&t, sources) in &self.temporal_in {
            for &f in sources {
                if self.temporal.get(&f).map_or(true, |m| !m.contains_key(&t)) {
                    problems.push(format!("reverse index {f}->{t} has no forward edge"));
                }
            }
        }
        if let Some(b) = self.last_bmu {
            if !self.nodes.contains_key(&b) {
                problems.push(format!("last BMU {b} is dead"));
            }
        }
        problems
    }
}

impl ReplayMemory for GwrMap {
    fn add(&mut self, t: &Transition) -> Result<()> {
        GwrMap::add(self, t).map(|_| ())
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<ReplayBatch> {
        self.sample_batch(n, rng)
    }

    fn memory_size(&self) -> usize {
        self.nodes.len()
    }
}

#[cfg(test)]
mod tests;
