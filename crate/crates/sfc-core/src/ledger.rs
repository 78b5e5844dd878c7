//! Residual edge bandwidth and instance capacity as requests come and go.
//!
//! The ledger journals per-request consumption instead of mutating residual
//! floats in place: a residual is `capacity - sum(active holdings)`, computed
//! in request-id order. Releasing a request removes its journal entry, so
//! `release(apply(x)) = x` holds structurally and bit-exactly, with no
//! dependence on float addition order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::digest;
use crate::error::{Error, Result};
use crate::path::SfcPath;
use crate::topology::{Request, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Consumption {
    /// edge index -> total bandwidth held (demand x traversal count)
    edges: BTreeMap<usize, f64>,
    /// instance index -> total capacity held
    instances: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceLedger {
    edge_capacity: Vec<f64>,
    instance_capacity: Vec<f64>,
    active: BTreeMap<u64, Consumption>,
}

impl ResourceLedger {
    /// Fresh ledger with full capacities from the topology.
    pub fn new(t: &Topology) -> ResourceLedger {
        ResourceLedger {
            edge_capacity: t.edges().iter().map(|e| e.bandwidth).collect(),
            instance_capacity: t.instances().iter().map(|i| i.capacity).collect(),
            active: BTreeMap::new(),
        }
    }

    pub fn edge_residual(&self, edge_idx: usize) -> f64 {
        let mut r = self.edge_capacity[edge_idx];
        for c in self.active.values() {
            if let Some(held) = c.edges.get(&edge_idx) {
                r -= held;
            }
        }
        r
    }

    pub fn instance_residual(&self, instance_idx: usize) -> f64 {
        let mut r = self.instance_capacity[instance_idx];
        for c in self.active.values() {
            if let Some(held) = c.instances.get(&instance_idx) {
                r -= held;
            }
        }
        r
    }

    /// All edge residuals in edge-index order.
    pub fn edge_residuals(&self) -> Vec<f64> {
        let mut out = self.edge_capacity.clone();
        for c in self.active.values() {
            for (&idx, held) in &c.edges {
                out[idx] -= held;
            }
        }
        out
    }

    /// All instance residuals in instance-index order.
    pub fn instance_residuals(&self) -> Vec<f64> {
        let mut out = self.instance_capacity.clone();
        for c in self.active.values() {
            for (&idx, held) in &c.instances {
                out[idx] -= held;
            }
        }
        out
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn holds(&self, request_id: u64) -> bool {
        self.active.contains_key(&request_id)
    }

    /// Consume the path's cumulative edge/instance demand for `r`. Checks
    /// every residual before touching anything; on error the ledger is
    /// unchanged.
    pub fn apply_request(&mut self, t: &Topology, r: &Request, p: &SfcPath) -> Result<()> {
        if self.active.contains_key(&r.id) {
            return Err(Error::DuplicateRequest(r.id));
        }
        let mut edges = BTreeMap::new();
        for ((u, v), count) in p.edge_multiset() {
            let idx = t.edge_index(u, v).ok_or_else(|| {
                Error::InvalidArgument(format!("path step {u} -> {v} is not an edge"))
            })?;
            let needed = count as f64 * r.bandwidth_demand;
            if self.edge_residual(idx) < needed {
                return Err(Error::InsufficientResources(format!(
                    "request {}: edge ({u},{v}) residual {} < needed {needed}",
                    r.id,
                    self.edge_residual(idx)
                )));
            }
            edges.insert(idx, needed);
        }
        let mut instances = BTreeMap::new();
        for ((host, ty), count) in p.instance_multiset(&r.chain) {
            let idx = t.instance_index(host, ty).ok_or_else(|| {
                Error::InvalidArgument(format!("no instance of type {ty} at node {host}"))
            })?;
            let needed = count as f64 * r.bandwidth_demand;
            if self.instance_residual(idx) < needed {
                return Err(Error::InsufficientResources(format!(
                    "request {}: instance {idx} residual {} < needed {needed}",
                    r.id,
                    self.instance_residual(idx)
                )));
            }
            instances.insert(idx, needed);
        }
        self.active.insert(r.id, Consumption { edges, instances });
        Ok(())
    }

    /// Return everything `apply_request` consumed for this request.
    pub fn release_request(&mut self, r: &Request) -> Result<()> {
        self.release_id(r.id)
    }

    pub fn release_id(&mut self, request_id: u64) -> Result<()> {
        self.active
            .remove(&request_id)
            .map(|_| ())
            .ok_or(Error::UnknownRequest(request_id))
    }

    /// SHA-256 over all residuals (edge order, then instance order), using
    /// exact f64 bit patterns. Equal digests mean equal residual state.
    pub fn snapshot_digest(&self) -> String {
        let mut bytes = Vec::with_capacity(8 * (self.edge_capacity.len() + self.instance_capacity.len()));
        for r in self.edge_residuals() {
            bytes.extend_from_slice(&r.to_bits().to_le_bytes());
        }
        for r in self.instance_residuals() {
            bytes.extend_from_slice(&r.to_bits().to_le_bytes());
        }
        digest::hex_digest(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::PathStep;

    fn topo() -> Topology {
        Topology::parse(
            r#"{
            "nodes": [0, 1, 2],
            "edges": [{"u": 0, "v": 1, "delay_ms": 2.0, "bandwidth": 10.0},
                      {"u": 1, "v": 2, "delay_ms": 3.0, "bandwidth": 3.0}],
            "instances": [{"host": 1, "vnf_type": "NAT", "proc_delay_ms": 1.0, "capacity": 5.0}],
            "vnf_types": ["NAT"]
        }"#,
        )
        .unwrap()
    }

    fn req(id: u64, demand: f64) -> Request {
        Request {
            id,
            source: 0,
            destination: 2,
            chain: vec![0],
            bandwidth_demand: demand,
            max_delay_ms: 100.0,
            arrival_time: 0,
            expiry_time: 10,
        }
    }

    fn path() -> SfcPath {
        SfcPath::new(vec![
            PathStep { node: 0, process: false },
            PathStep { node: 1, process: true },
            PathStep { node: 2, process: false },
        ])
    }

    #[test]
    fn apply_release_round_trip_is_bit_exact() {
        let t = topo();
        let mut ledger = ResourceLedger::new(&t);
        let before = ledger.clone();
        let digest_before = ledger.snapshot_digest();
        ledger.apply_request(&t, &req(7, 2.0), &path()).unwrap();
        assert_eq!(ledger.edge_residual(0), 8.0);
        assert_eq!(ledger.edge_residual(1), 1.0);
        assert_eq!(ledger.instance_residual(0), 3.0);
        ledger.release_request(&req(7, 2.0)).unwrap();
        assert_eq!(ledger, before);
        assert_eq!(ledger.snapshot_digest(), digest_before);
    }

    #[test]
    fn insufficient_residual_is_an_error_and_leaves_ledger_unchanged() {
        let t = topo();
        let mut ledger = ResourceLedger::new(&t);
        let before = ledger.clone();
        // Edge (1,2) has bandwidth 3; demand 5 cannot fit.
        let err = ledger.apply_request(&t, &req(1, 5.0), &path()).unwrap_err();
        assert!(matches!(err, Error::InsufficientResources(_)));
        assert_eq!(ledger, before);
    }

    #[test]
    fn repeated_traversal_consumes_repeatedly() {
        let t = topo();
        let mut ledger = ResourceLedger::new(&t);
        // 0-1-0-1(process)-2 crosses edge (0,1) three times.
        let p = SfcPath::new(vec![
            PathStep { node: 0, process: false },
            PathStep { node: 1, process: false },
            PathStep { node: 0, process: false },
            PathStep { node: 1, process: true },
            PathStep { node: 2, process: false },
        ]);
        ledger.apply_request(&t, &req(1, 2.0), &p).unwrap();
        assert_eq!(ledger.edge_residual(0), 4.0);
        assert_eq!(ledger.edge_residual(1), 1.0);
    }

    #[test]
    fn duplicate_apply_and_unknown_release_rejected() {
        let t = topo();
        let mut ledger = ResourceLedger::new(&t);
        let r = req(9, 1.0);
        ledger.apply_request(&t, &r, &path()).unwrap();
        assert!(matches!(
            ledger.apply_request(&t, &r, &path()),
            Err(Error::DuplicateRequest(9))
        ));
        assert!(matches!(ledger.release_id(42), Err(Error::UnknownRequest(42))));
    }

    #[test]
    fn interleaved_requests_restore_in_any_release_order() {
        let t = topo();
        let mut ledger = ResourceLedger::new(&t);
        let initial = ledger.clone();
        let a = req(1, 0.5);
        let b = req(2, 0.25);
        let c = req(3, 1.25);
        ledger.apply_request(&t, &a, &path()).unwrap();
        ledger.apply_request(&t, &b, &path()).unwrap();
        ledger.apply_request(&t, &c, &path()).unwrap();
        ledger.release_request(&b).unwrap();
        ledger.release_request(&c).unwrap();
        ledger.release_request(&a).unwrap();
        assert_eq!(ledger, initial);
    }
}
