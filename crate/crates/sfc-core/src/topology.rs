//! Network topology: nodes, delay/bandwidth edges, hosted VNF instances, and
//! the requests routed over them.
//!
//! Node ids are dense in `[0, node_count)` and double as matrix indices. VNF
//! type ids are dense in `[0, |M|)` following the `vnf_types` ordering of the
//! topology document; that ordering is canonical for featurization.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest;
use crate::error::{Error, Result};

pub type NodeId = usize;
pub type VnfTypeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VnfType {
    pub id: VnfTypeId,
    pub name: String,
}

/// Undirected edge, stored with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub delay_ms: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VnfInstance {
    pub host: NodeId,
    pub vnf_type: VnfTypeId,
    pub proc_delay_ms: f64,
    pub capacity: f64,
}

/// A service request: route `source -> destination` while processing `chain`
/// in order. Active during ticks `[arrival_time, expiry_time)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub source: NodeId,
    pub destination: NodeId,
    pub chain: Vec<VnfTypeId>,
    pub bandwidth_demand: f64,
    pub max_delay_ms: f64,
    pub arrival_time: u64,
    pub expiry_time: u64,
}

impl Request {
    /// Checks the request against a topology: node/type ranges, positive
    /// demand and budget, arrival before expiry. `source == destination` is
    /// permitted (degenerate single-node routes exist).
    pub fn validate(&self, t: &Topology) -> Result<()> {
        if self.source >= t.node_count() {
            return Err(Error::UnknownNode(self.source));
        }
        if self.destination >= t.node_count() {
            return Err(Error::UnknownNode(self.destination));
        }
        for &ty in &self.chain {
            if ty >= t.vnf_types().len() {
                return Err(Error::InvalidRequest(format!(
                    "request {}: vnf type id {ty} out of range",
                    self.id
                )));
            }
        }
        if !(self.bandwidth_demand > 0.0) || !self.bandwidth_demand.is_finite() {
            return Err(Error::InvalidRequest(format!(
                "request {}: bandwidth_demand must be positive",
                self.id
            )));
        }
        if !(self.max_delay_ms > 0.0) || !self.max_delay_ms.is_finite() {
            return Err(Error::InvalidRequest(format!(
                "request {}: max_delay_ms must be positive",
                self.id
            )));
        }
        if self.arrival_time >= self.expiry_time {
            return Err(Error::InvalidRequest(format!(
                "request {}: arrival_time must precede expiry_time",
                self.id
            )));
        }
        Ok(())
    }
}

/// On-disk topology document. `vnf_type` in instances refers to a name in
/// `vnf_types`; that list's order is the canonical feature order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDoc {
    pub nodes: Vec<usize>,
    pub edges: Vec<EdgeDoc>,
    pub instances: Vec<InstanceDoc>,
    pub vnf_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub u: usize,
    pub v: usize,
    pub delay_ms: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDoc {
    pub host: usize,
    pub vnf_type: String,
    pub proc_delay_ms: f64,
    pub capacity: f64,
}

/// Validated immutable topology. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct Topology {
    vnf_types: Vec<VnfType>,
    node_count: usize,
    edges: Vec<Edge>,
    instances: Vec<VnfInstance>,
    adjacency: Vec<Vec<NodeId>>,
    edge_by_pair: HashMap<(NodeId, NodeId), usize>,
    instance_by_key: HashMap<(NodeId, VnfTypeId), usize>,
    hash: String,
}

impl Topology {
    pub fn parse(text: &str) -> Result<Topology> {
        let doc: TopologyDoc = serde_json::from_str(text)?;
        Topology::from_doc(&doc)
    }

    pub fn load(path: &Path) -> Result<Topology> {
        let text = std::fs::read_to_string(path)?;
        Topology::parse(&text)
    }

    pub fn from_doc(doc: &TopologyDoc) -> Result<Topology> {
        let n = doc.nodes.len();
        if n < 1 {
            return Err(Error::InvalidTopology("no nodes".into()));
        }
        let mut seen = vec![false; n];
        for &id in &doc.nodes {
            if id >= n {
                return Err(Error::InvalidTopology(format!(
                    "node ids must be dense in [0, {n}), got {id}"
                )));
            }
            if seen[id] {
                return Err(Error::InvalidTopology(format!("duplicate node id {id}")));
            }
            seen[id] = true;
        }

        let mut vnf_types = Vec::with_capacity(doc.vnf_types.len());
        let mut type_by_name = HashMap::new();
        for (id, name) in doc.vnf_types.iter().enumerate() {
            if type_by_name.insert(name.clone(), id).is_some() {
                return Err(Error::InvalidTopology(format!(
                    "duplicate vnf type name `{name}`"
                )));
            }
            vnf_types.push(VnfType {
                id,
                name: name.clone(),
            });
        }

        let mut edges = Vec::with_capacity(doc.edges.len());
        let mut edge_by_pair = HashMap::new();
        let mut adjacency: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for e in &doc.edges {
            if e.u >= n {
                return Err(Error::UnknownNode(e.u));
            }
            if e.v >= n {
                return Err(Error::UnknownNode(e.v));
            }
            if e.u == e.v {
                return Err(Error::InvalidTopology(format!("self-loop at node {}", e.u)));
            }
            if !(e.delay_ms > 0.0) || !e.delay_ms.is_finite() {
                return Err(Error::InvalidTopology(format!(
                    "edge ({},{}) delay must be positive",
                    e.u, e.v
                )));
            }
            if !(e.bandwidth > 0.0) || !e.bandwidth.is_finite() {
                return Err(Error::InvalidTopology(format!(
                    "edge ({},{}) bandwidth must be positive",
                    e.u, e.v
                )));
            }
            let (u, v) = if e.u < e.v { (e.u, e.v) } else { (e.v, e.u) };
            if edge_by_pair.insert((u, v), edges.len()).is_some() {
                return Err(Error::InvalidTopology(format!("duplicate edge ({u},{v})")));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
            edges.push(Edge {
                u,
                v,
                delay_ms: e.delay_ms,
                bandwidth: e.bandwidth,
            });
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }

        // Connectivity: every node reachable from node 0.
        if n > 1 {
            let mut visited = vec![false; n];
            let mut stack = vec![0usize];
            visited[0] = true;
            while let Some(u) = stack.pop() {
                for &v in &adjacency[u] {
                    if !visited[v] {
                        visited[v] = true;
                        stack.push(v);
                    }
                }
            }
            if let Some(u) = visited.iter().position(|&ok| !ok) {
                return Err(Error::InvalidTopology(format!(
                    "graph is disconnected: node {u} unreachable from node 0"
                )));
            }
        }

        let mut instances = Vec::with_capacity(doc.instances.len());
        let mut instance_by_key = HashMap::new();
        for i in &doc.instances {
            if i.host >= n {
                return Err(Error::UnknownNode(i.host));
            }
            let &ty = type_by_name
                .get(&i.vnf_type)
                .ok_or_else(|| Error::UnknownVnfType(i.vnf_type.clone()))?;
            if !(i.proc_delay_ms > 0.0) || !i.proc_delay_ms.is_finite() {
                return Err(Error::InvalidTopology(format!(
                    "instance {} at node {} processing delay must be positive",
                    i.vnf_type, i.host
                )));
            }
            if i.capacity < 0.0 || !i.capacity.is_finite() {
                return Err(Error::InvalidTopology(format!(
                    "instance {} at node {} capacity must be non-negative",
                    i.vnf_type, i.host
                )));
            }
            if instance_by_key.insert((i.host, ty), instances.len()).is_some() {
                return Err(Error::InvalidTopology(format!(
                    "duplicate instance of `{}` at node {}",
                    i.vnf_type, i.host
                )));
            }
            instances.push(VnfInstance {
                host: i.host,
                vnf_type: ty,
                proc_delay_ms: i.proc_delay_ms,
                capacity: i.capacity,
            });
        }

        let mut t = Topology {
            vnf_types,
            node_count: n,
            edges,
            instances,
            adjacency,
            edge_by_pair,
            instance_by_key,
            hash: String::new(),
        };
        t.hash = digest::json_digest(&t.to_doc());
        Ok(t)
    }

    /// Canonical document: nodes ascending, edges sorted by (u,v), instances
    /// sorted by (host, type). Documents differing only in listing order map
    /// to the same canonical form, hence the same hash.
    pub fn to_doc(&self) -> TopologyDoc {
        let mut edges: Vec<EdgeDoc> = self
            .edges
            .iter()
            .map(|e| EdgeDoc {
                u: e.u,
                v: e.v,
                delay_ms: e.delay_ms,
                bandwidth: e.bandwidth,
            })
            .collect();
        edges.sort_by(|a, b| (a.u, a.v).cmp(&(b.u, b.v)));
        let mut instances: Vec<InstanceDoc> = self
            .instances
            .iter()
            .map(|i| InstanceDoc {
                host: i.host,
                vnf_type: self.vnf_types[i.vnf_type].name.clone(),
                proc_delay_ms: i.proc_delay_ms,
                capacity: i.capacity,
            })
            .collect();
        instances.sort_by(|a, b| (a.host, &a.vnf_type).cmp(&(b.host, &b.vnf_type)));
        TopologyDoc {
            nodes: (0..self.node_count).collect(),
            edges,
            instances,
            vnf_types: self.vnf_types.iter().map(|t| t.name.clone()).collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn vnf_types(&self) -> &[VnfType] {
        &self.vnf_types
    }

    pub fn vnf_type_id(&self, name: &str) -> Option<VnfTypeId> {
        self.vnf_types.iter().position(|t| t.name == name)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn instances(&self) -> &[VnfInstance] {
        &self.instances
    }

    /// Sorted neighbor list of `u`. Symmetric by construction.
    pub fn neighbors(&self, u: NodeId) -> Result<&[NodeId]> {
        self.adjacency
            .get(u)
            .map(|v| v.as_slice())
            .ok_or(Error::UnknownNode(u))
    }

    /// Edge slot for the unordered pair (u,v), if adjacent.
    pub fn edge_index(&self, u: NodeId, v: NodeId) -> Option<usize> {
        let key = if u < v { (u, v) } else { (v, u) };
        self.edge_by_pair.get(&key).copied()
    }

    pub fn edge_between(&self, u: NodeId, v: NodeId) -> Option<&Edge> {
        self.edge_index(u, v).map(|i| &self.edges[i])
    }

    /// Instance slot hosting `vnf_type` at `host`, if present.
    pub fn instance_index(&self, host: NodeId, vnf_type: VnfTypeId) -> Option<usize> {
        self.instance_by_key.get(&(host, vnf_type)).copied()
    }

    pub fn instance_at(&self, host: NodeId, vnf_type: VnfTypeId) -> Option<&VnfInstance> {
        self.instance_index(host, vnf_type).map(|i| &self.instances[i])
    }

    pub fn hosts_of(&self, vnf_type: VnfTypeId) -> impl Iterator<Item = NodeId> + '_ {
        self.instances
            .iter()
            .filter(move |i| i.vnf_type == vnf_type)
            .map(|i| i.host)
    }

    /// SHA-256 of the canonical document.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn min_edge_delay(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| e.delay_ms)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_edge_bandwidth(&self) -> f64 {
        self.edges.iter().map(|e| e.bandwidth).fold(0.0, f64::max)
    }

    /// Number of annotation features: one flag per VNF type plus source and
    /// destination flags.
    pub fn annotation_width(&self) -> usize {
        self.vnf_types.len() + 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> Result<Topology> {
        Topology::parse(text)
    }

    #[test]
    fn minimal_two_node_graph() {
        let t = doc(r#"{
            "nodes": [0, 1],
            "edges": [{"u": 0, "v": 1, "delay_ms": 1.0, "bandwidth": 10.0}],
            "instances": [],
            "vnf_types": []
        }"#)
        .unwrap();
        assert_eq!(t.node_count(), 2);
        assert_eq!(t.edges().len(), 1);
        assert_eq!(t.neighbors(0).unwrap(), &[1]);
        assert_eq!(t.neighbors(1).unwrap(), &[0]);
        assert_eq!(t.annotation_width(), 2);
    }

    #[test]
    fn edge_to_undeclared_node_rejected() {
        let err = doc(r#"{
            "nodes": [0, 1],
            "edges": [{"u": 0, "v": 2, "delay_ms": 1.0, "bandwidth": 10.0}],
            "instances": [],
            "vnf_types": []
        }"#)
        .unwrap_err();
        assert!(matches!(err, Error::UnknownNode(2)));
    }

    #[test]
    fn disconnected_graph_rejected() {
        let err = doc(r#"{
            "nodes": [0, 1, 2, 3],
            "edges": [{"u": 0, "v": 1, "delay_ms": 1.0, "bandwidth": 10.0},
                      {"u": 2, "v": 3, "delay_ms": 1.0, "bandwidth": 10.0}],
            "instances": [],
            "vnf_types": []
        }"#)
        .unwrap_err();
        assert!(matches!(err, Error::InvalidTopology(_)));
    }

    #[test]
    fn duplicate_edge_rejected_in_either_orientation() {
        let err = doc(r#"{
            "nodes": [0, 1],
            "edges": [{"u": 0, "v": 1, "delay_ms": 1.0, "bandwidth": 10.0},
                      {"u": 1, "v": 0, "delay_ms": 2.0, "bandwidth": 10.0}],
            "instances": [],
            "vnf_types": []
        }"#)
        .unwrap_err();
        assert!(matches!(err, Error::InvalidTopology(_)));
    }

    #[test]
    fn self_loop_rejected() {
        let err = doc(r#"{
            "nodes": [0, 1],
            "edges": [{"u": 0, "v": 1, "delay_ms": 1.0, "bandwidth": 10.0},
                      {"u": 1, "v": 1, "delay_ms": 1.0, "bandwidth": 10.0}],
            "instances": [],
            "vnf_types": []
        }"#)
        .unwrap_err();
        assert!(matches!(err, Error::InvalidTopology(_)));
    }

    #[test]
    fn unknown_instance_type_rejected() {
        let err = doc(r#"{
            "nodes": [0, 1],
            "edges": [{"u": 0, "v": 1, "delay_ms": 1.0, "bandwidth": 10.0}],
            "instances": [{"host": 0, "vnf_type": "NAT", "proc_delay_ms": 1.0, "capacity": 5.0}],
            "vnf_types": ["Firewall"]
        }"#)
        .unwrap_err();
        assert!(matches!(err, Error::UnknownVnfType(_)));
    }

    #[test]
    fn triangle_neighbors() {
        let t = doc(r#"{
            "nodes": [0, 1, 2],
            "edges": [{"u": 0, "v": 1, "delay_ms": 1.0, "bandwidth": 10.0},
                      {"u": 1, "v": 2, "delay_ms": 1.0, "bandwidth": 10.0},
                      {"u": 0, "v": 2, "delay_ms": 1.0, "bandwidth": 10.0}],
            "instances": [],
            "vnf_types": []
        }"#)
        .unwrap();
        assert_eq!(t.neighbors(0).unwrap(), &[1, 2]);
        assert_eq!(t.neighbors(1).unwrap(), &[0, 2]);
        assert_eq!(t.neighbors(2).unwrap(), &[0, 1]);
        assert!(matches!(t.neighbors(3), Err(Error::UnknownNode(3))));
    }

    #[test]
    fn path_graph_neighbors() {
        let t = doc(r#"{
            "nodes": [0, 1, 2],
            "edges": [{"u": 0, "v": 1, "delay_ms": 1.0, "bandwidth": 10.0},
                      {"u": 1, "v": 2, "delay_ms": 1.0, "bandwidth": 10.0}],
            "instances": [],
            "vnf_types": []
        }"#)
        .unwrap();
        assert_eq!(t.neighbors(1).unwrap(), &[0, 2]);
    }

    #[test]
    fn hash_invariant_to_listing_order() {
        let a = doc(r#"{
            "nodes": [0, 1, 2],
            "edges": [{"u": 1, "v": 2, "delay_ms": 2.0, "bandwidth": 10.0},
                      {"u": 1, "v": 0, "delay_ms": 1.0, "bandwidth": 10.0}],
            "instances": [{"host": 2, "vnf_type": "NAT", "proc_delay_ms": 1.0, "capacity": 5.0},
                          {"host": 0, "vnf_type": "NAT", "proc_delay_ms": 1.0, "capacity": 5.0}],
            "vnf_types": ["NAT"]
        }"#)
        .unwrap();
        let b = doc(r#"{
            "nodes": [0, 1, 2],
            "edges": [{"u": 0, "v": 1, "delay_ms": 1.0, "bandwidth": 10.0},
                      {"u": 2, "v": 1, "delay_ms": 2.0, "bandwidth": 10.0}],
            "instances": [{"host": 0, "vnf_type": "NAT", "proc_delay_ms": 1.0, "capacity": 5.0},
                          {"host": 2, "vnf_type": "NAT", "proc_delay_ms": 1.0, "capacity": 5.0}],
            "vnf_types": ["NAT"]
        }"#)
        .unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn request_validation() {
        let t = doc(r#"{
            "nodes": [0, 1],
            "edges": [{"u": 0, "v": 1, "delay_ms": 1.0, "bandwidth": 10.0}],
            "instances": [{"host": 0, "vnf_type": "NAT", "proc_delay_ms": 1.0, "capacity": 5.0}],
            "vnf_types": ["NAT"]
        }"#)
        .unwrap();
        let good = Request {
            id: 0,
            source: 0,
            destination: 1,
            chain: vec![0],
            bandwidth_demand: 1.0,
            max_delay_ms: 10.0,
            arrival_time: 0,
            expiry_time: 5,
        };
        assert!(good.validate(&t).is_ok());

        let mut r = good.clone();
        r.source = 7;
        assert!(r.validate(&t).is_err());

        let mut r = good.clone();
        r.chain = vec![3];
        assert!(r.validate(&t).is_err());

        let mut r = good.clone();
        r.expiry_time = 0;
        assert!(r.validate(&t).is_err());

        // Equal endpoints are permitted.
        let mut r = good;
        r.destination = 0;
        assert!(r.validate(&t).is_ok());
    }
}
