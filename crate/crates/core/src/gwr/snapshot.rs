//! Versioned binary snapshot of a map.
//!
//! The encoding is little-endian with a fixed field order, so two identical
//! maps always produce identical bytes and every stored real survives the
//! round trip bit-exactly. Decoding is strict: truncated or inconsistent
//! input yields an error naming the offending field and no partial map.

use std::collections::{BTreeMap, BTreeSet};

use super::{GwrMap, GwrNode, GwrParams, NodeId, SampleMode, TemporalEdge};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"GWRM";

/// Structured form of a snapshot; the unit the byte codec reads and writes.
/// All fields are public so synthetic maps can be assembled in tests and
/// tooling.
#[derive(Clone, Debug, PartialEq)]
pub struct MapSnapshot {
    pub state_dim: usize,
    pub action_dim: Option<usize>,
    pub params: GwrParams,
    pub pending_episode_start: bool,
    pub last_bmu: Option<NodeId>,
    pub next_id: u64,
    pub inserts: u64,
    pub merges: u64,
    pub nodes: Vec<NodeRecord>,
    pub neighborhood_edges: Vec<NeighborhoodEdgeRecord>,
    pub temporal_edges: Vec<TemporalEdgeRecord>,
    pub global_context: Vec<Vec<f64>>,
    pub drift: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub node: GwrNode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodEdgeRecord {
    pub a: NodeId,
    pub b: NodeId,
    pub age: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalEdgeRecord {
    pub from: NodeId,
    pub to: NodeId,
    pub count: u64,
    pub action: Vec<f64>,
    pub reward: f64,
}

impl GwrMap {
    /// Structured snapshot of the full map state.
    pub fn snapshot(&self) -> MapSnapshot {
        MapSnapshot {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            params: self.params.clone(),
            pending_episode_start: self.pending_episode_start,
            last_bmu: self.last_bmu,
            next_id: self.next_id,
            inserts: self.inserts,
            merges: self.merges,
            nodes: self
                .nodes
                .iter()
                .map(|(&id, node)| NodeRecord {
                    id,
                    node: node.clone(),
                })
                .collect(),
            neighborhood_edges: self
                .neighborhood_edges()
                .map(|((a, b), age)| NeighborhoodEdgeRecord { a, b, age })
                .collect(),
            temporal_edges: self
                .temporal
                .iter()
                .flat_map(|(&from, out)| {
                    out.iter().map(move |(&to, edge)| TemporalEdgeRecord {
                        from,
                        to,
                        count: edge.count,
                        action: edge.action.clone(),
                        reward: edge.reward,
                    })
                })
                .collect(),
            global_context: self.global_context.clone(),
            drift: self.drift.iter().copied().collect(),
        }
    }

    pub fn snapshot_bytes(&self) -> Vec<u8> {
        self.snapshot().to_bytes()
    }

    /// Rebuilds a map from a structured snapshot, validating referential
    /// integrity before returning it.
    pub fn from_snapshot(snap: MapSnapshot) -> Result<Self> {
        snap.params
            .validate()
            .map_err(|e| Error::decode("params", e.to_string()))?;
        if snap.state_dim == 0 {
            return Err(Error::decode("state_dim", "must be >= 1"));
        }
        let k = snap.params.context_depth;

        let mut nodes = BTreeMap::new();
        for rec in snap.nodes {
            if rec.node.weight.len() != snap.state_dim {
                return Err(Error::decode(
                    "nodes.weight",
                    format!("node {} has dimension {}", rec.id, rec.node.weight.len()),
                ));
            }
            if rec.node.context.len() != k
                || rec.node.context.iter().any(|c| c.len() != snap.state_dim)
            {
                return Err(Error::decode(
                    "nodes.context",
                    format!("node {} context shape mismatch", rec.id),
                ));
            }
            if rec.id.0 >= snap.next_id {
                return Err(Error::decode(
                    "next_id",
                    format!("node {} not below next_id {}", rec.id, snap.next_id),
                ));
            }
            if nodes.insert(rec.id, rec.node).is_some() {
                return Err(Error::decode("nodes.id", format!("duplicate node {}", rec.id)));
            }
        }

        let mut neighborhood: BTreeMap<NodeId, BTreeMap<NodeId, u32>> = BTreeMap::new();
        for e in &snap.neighborhood_edges {
            if e.a == e.b {
                return Err(Error::decode(
                    "neighborhood_edges",
                    format!("self edge on {}", e.a),
                ));
            }
            if !nodes.contains_key(&e.a) || !nodes.contains_key(&e.b) {
                return Err(Error::decode(
                    "neighborhood_edges",
                    format!("edge {}-{} references a missing node", e.a, e.b),
                ));
            }
            neighborhood.entry(e.a).or_default().insert(e.b, e.age);
            neighborhood.entry(e.b).or_default().insert(e.a, e.age);
        }

        let mut action_dim = snap.action_dim;
        let mut temporal: BTreeMap<NodeId, BTreeMap<NodeId, TemporalEdge>> = BTreeMap::new();
        let mut temporal_in: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        let mut temporal_len = 0usize;
        for e in snap.temporal_edges {
            if !nodes.contains_key(&e.from) || !nodes.contains_key(&e.to) {
                return Err(Error::decode(
                    "temporal_edges",
                    format!("edge {}->{} references a missing node", e.from, e.to),
                ));
            }
            if e.count == 0 {
                return Err(Error::decode(
                    "temporal_edges.count",
                    format!("edge {}->{} has zero count", e.from, e.to),
                ));
            }
            match action_dim {
                None => action_dim = Some(e.action.len()),
                Some(d) if d != e.action.len() => {
                    return Err(Error::decode(
                        "temporal_edges.action",
                        format!("edge {}->{} action dimension {}", e.from, e.to, e.action.len()),
                    ));
                }
                _ => {}
            }
            let prev = temporal.entry(e.from).or_default().insert(
                e.to,
                TemporalEdge {
                    count: e.count,
                    action: e.action,
                    reward: e.reward,
                },
            );
            if prev.is_some() {
                return Err(Error::decode(
                    "temporal_edges",
                    format!("duplicate edge {}->{}", e.from, e.to),
                ));
            }
            temporal_in.entry(e.to).or_default().insert(e.from);
            temporal_len += 1;
        }

        if snap.global_context.len() != k
            || snap.global_context.iter().any(|c| c.len() != snap.state_dim)
        {
            return Err(Error::decode("global_context", "shape mismatch"));
        }
        if let Some(b) = snap.last_bmu {
            if !nodes.contains_key(&b) {
                return Err(Error::decode("last_bmu", format!("{b} is not a live node")));
            }
        }

        Ok(GwrMap {
            params: snap.params,
            state_dim: snap.state_dim,
            action_dim,
            nodes,
            neighborhood,
            temporal,
            temporal_in,
            temporal_len,
            last_bmu: snap.last_bmu,
            pending_episode_start: snap.pending_episode_start,
            global_context: snap.global_context,
            next_id: snap.next_id,
            inserts: snap.inserts,
            merges: snap.merges,
            drift: snap.drift.into_iter().collect(),
        })
    }

    pub fn restore(bytes: &[u8]) -> Result<Self> {
        Self::from_snapshot(MapSnapshot::from_bytes(bytes)?)
    }
}

impl MapSnapshot {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u16(FORMAT_VERSION);
        w.u32(self.state_dim as u32);
        w.opt_u32(self.action_dim.map(|d| d as u32));
        let p = &self.params;
        w.f64(p.activation_threshold);
        w.f64(p.habituation_threshold);
        w.f64(p.tau_bmu);
        w.f64(p.tau_neighbor);
        w.f64(p.kappa);
        w.f64(p.phi);
        w.u32(p.context_depth as u32);
        w.f64(p.context_beta);
        w.u32(p.age_max);
        w.f64(p.eps_bmu);
        w.f64(p.eps_neighbor);
        w.f64(p.init_range.0);
        w.f64(p.init_range.1);
        w.u8(match p.sample_mode {
            SampleMode::GraphWalk => 0,
            SampleMode::AllNodesRejection => 1,
            SampleMode::TupleUniform => 2,
        });
        w.u8(p.threshold_done as u8);
        w.u8(p.record_drift as u8);
        w.u8(self.pending_episode_start as u8);
        w.opt_u64(self.last_bmu.map(|n| n.0));
        w.u64(self.next_id);
        w.u64(self.inserts);
        w.u64(self.merges);
        w.u64(self.nodes.len() as u64);
        for rec in &self.nodes {
            w.u64(rec.id.0);
            w.f64(rec.node.habituation);
            w.f64(rec.node.done_avg);
            w.u64(rec.node.done_updates);
            for &v in &rec.node.weight {
                w.f64(v);
            }
            for ctx in &rec.node.context {
                for &v in ctx {
                    w.f64(v);
                }
            }
        }
        w.u64(self.neighborhood_edges.len() as u64);
        for e in &self.neighborhood_edges {
            w.u64(e.a.0);
            w.u64(e.b.0);
            w.u32(e.age);
        }
        w.u64(self.temporal_edges.len() as u64);
        for e in &self.temporal_edges {
            w.u64(e.from.0);
            w.u64(e.to.0);
            w.u64(e.count);
            w.u32(e.action.len() as u32);
            for &v in &e.action {
                w.f64(v);
            }
            w.f64(e.reward);
        }
        for ctx in &self.global_context {
            for &v in ctx {
                w.f64(v);
            }
        }
        w.u64(self.drift.len() as u64);
        for &v in &self.drift {
            w.f64(v);
        }
        w.out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take("magic", 4)?;
        if magic != MAGIC {
            return Err(Error::decode("magic", "not a map snapshot"));
        }
        let version = r.u16("format_version")?;
        if version != FORMAT_VERSION {
            return Err(Error::decode(
                "format_version",
                format!("unsupported version {version}, expected {FORMAT_VERSION}"),
            ));
        }
        let state_dim = r.u32("state_dim")? as usize;
        let action_dim = r.opt_u32("action_dim")?.map(|d| d as usize);
        let params = GwrParams {
            activation_threshold: r.f64("params.activation_threshold")?,
            habituation_threshold: r.f64("params.habituation_threshold")?,
            tau_bmu: r.f64("params.tau_bmu")?,
            tau_neighbor: r.f64("params.tau_neighbor")?,
            kappa: r.f64("params.kappa")?,
            phi: r.f64("params.phi")?,
            context_depth: r.u32("params.context_depth")? as usize,
            context_beta: r.f64("params.context_beta")?,
            age_max: r.u32("params.age_max")?,
            eps_bmu: r.f64("params.eps_bmu")?,
            eps_neighbor: r.f64("params.eps_neighbor")?,
            init_range: (r.f64("params.init_range.0")?, r.f64("params.init_range.1")?),
            sample_mode: match r.u8("params.sample_mode")? {
                0 => SampleMode::GraphWalk,
                1 => SampleMode::AllNodesRejection,
                2 => SampleMode::TupleUniform,
                other => {
                    return Err(Error::decode(
                        "params.sample_mode",
                        format!("unknown variant {other}"),
                    ))
                }
            },
            threshold_done: r.bool("params.threshold_done")?,
            record_drift: r.bool("params.record_drift")?,
        };
        let pending_episode_start = r.bool("pending_episode_start")?;
        let last_bmu = r.opt_u64("last_bmu")?.map(NodeId);
        let next_id = r.u64("next_id")?;
        let inserts = r.u64("inserts")?;
        let merges = r.u64("merges")?;
        let node_count = r.u64("nodes.len")? as usize;
        let mut nodes = Vec::with_capacity(node_count.min(1 << 20));
        for _ in 0..node_count {
            let id = NodeId(r.u64("nodes.id")?);
            let habituation = r.f64("nodes.habituation")?;
            let done_avg = r.f64("nodes.done_avg")?;
            let done_updates = r.u64("nodes.done_updates")?;
            let weight = r.f64_vec("nodes.weight", state_dim)?;
            let mut context = Vec::with_capacity(params.context_depth);
            for _ in 0..params.context_depth {
                context.push(r.f64_vec("nodes.context", state_dim)?);
            }
            nodes.push(NodeRecord {
                id,
                node: GwrNode {
                    weight,
                    habituation,
                    done_avg,
                    done_updates,
                    context,
                },
            });
        }
        let neigh_count = r.u64("neighborhood_edges.len")? as usize;
        let mut neighborhood_edges = Vec::with_capacity(neigh_count.min(1 << 20));
        for _ in 0..neigh_count {
            neighborhood_edges.push(NeighborhoodEdgeRecord {
                a: NodeId(r.u64("neighborhood_edges.a")?),
                b: NodeId(r.u64("neighborhood_edges.b")?),
                age: r.u32("neighborhood_edges.age")?,
            });
        }
        let temp_count = r.u64("temporal_edges.len")? as usize;
        let mut temporal_edges = Vec::with_capacity(temp_count.min(1 << 20));
        for _ in 0..temp_count {
            let from = NodeId(r.u64("temporal_edges.from")?);
            let to = NodeId(r.u64("temporal_edges.to")?);
            let count = r.u64("temporal_edges.count")?;
            let len = r.u32("temporal_edges.action.len")? as usize;
            let action = r.f64_vec("temporal_edges.action", len)?;
            let reward = r.f64("temporal_edges.reward")?;
            temporal_edges.push(TemporalEdgeRecord {
                from,
                to,
                count,
                action,
                reward,
            });
        }
        let mut global_context = Vec::with_capacity(params.context_depth);
        for _ in 0..params.context_depth {
            global_context.push(r.f64_vec("global_context", state_dim)?);
        }
        let drift_count = r.u64("drift.len")? as usize;
        let drift = r.f64_vec("drift", drift_count)?;
        if r.pos != r.buf.len() {
            return Err(Error::decode(
                "trailer",
                format!("{} unread trailing bytes", r.buf.len() - r.pos),
            ));
        }
        Ok(MapSnapshot {
            state_dim,
            action_dim,
            params,
            pending_episode_start,
            last_bmu,
            next_id,
            inserts,
            merges,
            nodes,
            neighborhood_edges,
            temporal_edges,
            global_context,
            drift,
        })
    }
}

#[derive(Default)]
struct Writer {
    out: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.out.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.out.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn opt_u32(&mut self, v: Option<u32>) {
        match v {
            Some(v) => {
                self.u8(1);
                self.u32(v);
            }
            None => self.u8(0),
        }
    }
    fn opt_u64(&mut self, v: Option<u64>) {
        match v {
            Some(v) => {
                self.u8(1);
                self.u64(v);
            }
            None => self.u8(0),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, field: &str, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::decode(field, "truncated input"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(field, 1)?[0])
    }
    fn bool(&mut self, field: &str) -> Result<bool> {
        match self.u8(field)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::decode(field, format!("invalid boolean byte {other}"))),
        }
    }
    fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(field, 2)?.try_into().unwrap()))
    }
    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(field, 4)?.try_into().unwrap()))
    }
    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(field, 8)?.try_into().unwrap()))
    }
    fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(field, 8)?.try_into().unwrap()))
    }
    fn f64_vec(&mut self, field: &str, n: usize) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            v.push(self.f64(field)?);
        }
        Ok(v)
    }
    fn opt_u32(&mut self, field: &str) -> Result<Option<u32>> {
        Ok(if self.bool(field)? {
            Some(self.u32(field)?)
        } else {
            None
        })
    }
    fn opt_u64(&mut self, field: &str) -> Result<Option<u64>> {
        Ok(if self.bool(field)? {
            Some(self.u64(field)?)
        } else {
            None
        })
    }
}
