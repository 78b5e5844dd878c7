//! Processing paths: ordered node visits with per-visit processing flags,
//! their delay cost, and classification against a request and ledger.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::ResourceLedger;
use crate::topology::{NodeId, Request, Topology, VnfTypeId};

/// Hard cap on generated/accepted path length, in steps.
pub const MAX_PATH_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub node: NodeId,
    pub process: bool,
}

/// A walk through the topology. Step 0 is the source visit; each later step
/// traverses one edge. A step with `process = true` applies the next chain
/// stage at its node; at most one stage per visit.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SfcPath {
    pub steps: Vec<PathStep>,
}

impl SfcPath {
    pub fn new(steps: Vec<PathStep>) -> SfcPath {
        SfcPath { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Directed traversals as normalized unordered pairs with multiplicity.
    pub fn edge_multiset(&self) -> BTreeMap<(NodeId, NodeId), usize> {
        let mut counts = BTreeMap::new();
        for w in self.steps.windows(2) {
            let (a, b) = (w[0].node, w[1].node);
            let key = if a < b { (a, b) } else { (b, a) };
            *counts.entry(key).or_insert(0) += 1;
        }
        counts
    }

    /// Nodes of processing steps in order; the k-th entry handles chain[k].
    pub fn processing_nodes(&self) -> Vec<NodeId> {
        self.steps
            .iter()
            .filter(|s| s.process)
            .map(|s| s.node)
            .collect()
    }

    /// Instance usage (host, vnf_type) with multiplicity for a given chain.
    /// Stops pairing once the chain is exhausted.
    pub fn instance_multiset(&self, chain: &[VnfTypeId]) -> BTreeMap<(NodeId, VnfTypeId), usize> {
        let mut counts = BTreeMap::new();
        for (stage, &node) in self.processing_nodes().iter().enumerate() {
            if stage >= chain.len() {
                break;
            }
            *counts.entry((node, chain[stage])).or_insert(0) += 1;
        }
        counts
    }

    /// Render as `0 -> 3[Firewall] -> 5` using topology type names.
    pub fn render(&self, t: &Topology, chain: &[VnfTypeId]) -> String {
        let mut stage = 0usize;
        let mut parts = Vec::with_capacity(self.steps.len());
        for s in &self.steps {
            if s.process {
                let name = chain
                    .get(stage)
                    .and_then(|&ty| t.vnf_types().get(ty))
                    .map(|v| v.name.as_str())
                    .unwrap_or("?");
                parts.push(format!("{}[{}]", s.node, name));
                stage += 1;
            } else {
                parts.push(s.node.to_string());
            }
        }
        parts.join(" -> ")
    }
}

/// Total delay of a path: edge delays with traversal multiplicity plus the
/// processing delay of each instance used, matched to `chain` in order.
pub fn path_cost(t: &Topology, p: &SfcPath, chain: &[VnfTypeId]) -> Result<f64> {
    let mut cost = 0.0;
    for w in p.steps.windows(2) {
        let e = t.edge_between(w[0].node, w[1].node).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "path step {} -> {} is not an edge",
                w[0].node, w[1].node
            ))
        })?;
        cost += e.delay_ms;
    }
    let mut stage = 0usize;
    for s in &p.steps {
        if !s.process {
            continue;
        }
        let &ty = chain.get(stage).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "path has more processing steps than the chain ({} stages)",
                chain.len()
            ))
        })?;
        let inst = t.instance_at(s.node, ty).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "node {} hosts no instance of vnf type {}",
                s.node, ty
            ))
        })?;
        cost += inst.proc_delay_ms;
        stage += 1;
    }
    Ok(cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathClass {
    Valid,
    Failure,
    Overmax,
}

impl std::fmt::Display for PathClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PathClass::Valid => write!(f, "valid"),
            PathClass::Failure => write!(f, "failure"),
            PathClass::Overmax => write!(f, "overmax"),
        }
    }
}

/// Classify any candidate path. Total: never errors.
///
/// Failure when structure or resources are broken: wrong endpoints, broken
/// adjacency, chain not fully processed in order at hosting nodes, more than
/// [`MAX_PATH_STEPS`] steps, or the ledger cannot cover the path's cumulative
/// edge/instance consumption. Otherwise Overmax when cost exceeds the
/// request's budget, else Valid.
pub fn classify_path(
    t: &Topology,
    r: &Request,
    p: &SfcPath,
    ledger: &ResourceLedger,
) -> PathClass {
    if p.steps.is_empty() || p.steps.len() > MAX_PATH_STEPS {
        return PathClass::Failure;
    }
    if p.steps[0].node != r.source || p.steps[p.steps.len() - 1].node != r.destination {
        return PathClass::Failure;
    }
    if p.steps.iter().any(|s| s.node >= t.node_count()) {
        return PathClass::Failure;
    }
    for w in p.steps.windows(2) {
        if t.edge_between(w[0].node, w[1].node).is_none() {
            return PathClass::Failure;
        }
    }
    let processed = p.processing_nodes();
    if processed.len() != r.chain.len() {
        return PathClass::Failure;
    }
    for (stage, &node) in processed.iter().enumerate() {
        if t.instance_at(node, r.chain[stage]).is_none() {
            return PathClass::Failure;
        }
    }
    for ((u, v), count) in p.edge_multiset() {
        let idx = match t.edge_index(u, v) {
            Some(i) => i,
            None => return PathClass::Failure,
        };
        if ledger.edge_residual(idx) < count as f64 * r.bandwidth_demand {
            return PathClass::Failure;
        }
    }
    for ((host, ty), count) in p.instance_multiset(&r.chain) {
        let idx = match t.instance_index(host, ty) {
            Some(i) => i,
            None => return PathClass::Failure,
        };
        if ledger.instance_residual(idx) < count as f64 * r.bandwidth_demand {
            return PathClass::Failure;
        }
    }
    let cost = match path_cost(t, p, &r.chain) {
        Ok(c) => c,
        Err(_) => return PathClass::Failure,
    };
    if cost > r.max_delay_ms {
        PathClass::Overmax
    } else {
        PathClass::Valid
    }
}
