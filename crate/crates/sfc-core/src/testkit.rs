//! Seeded generators for random problem instances, shared by unit tests,
//! property tests, benches, and the acceptance suite.
//!
//! All delays, bandwidths, and demands land on a 0.25 grid so that path costs
//! and ledger arithmetic are exact in f64 regardless of summation order.

use std::collections::BTreeSet;

use rand::prelude::*;

use crate::topology::{
    EdgeDoc, InstanceDoc, Request, Topology, TopologyDoc, VnfTypeId,
};

/// Canonical VNF type names, in feature order.
pub const VNF_NAMES: [&str; 5] = ["NAT", "Firewall", "IDS", "Proxy", "WANopt"];

/// Uniform draw from the 0.25 grid in [lo, hi]; bounds must sit on the grid.
pub fn grid_value(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    let lo_q = (lo * 4.0).round() as i64;
    let hi_q = (hi * 4.0).round() as i64;
    debug_assert!(lo_q <= hi_q);
    rng.random_range(lo_q..=hi_q) as f64 * 0.25
}

/// Connected random topology: a random spanning tree plus extra edges, with
/// at least one instance per VNF type. Delays in [0.25, 8], bandwidth in
/// [4, 10], processing delays in [0.25, 4], capacities in [2, 8].
pub fn random_topology(rng: &mut impl Rng, node_count: usize, vnf_type_count: usize) -> Topology {
    assert!(node_count >= 2, "need at least two nodes");
    assert!(
        (1..=VNF_NAMES.len()).contains(&vnf_type_count),
        "between 1 and {} VNF types",
        VNF_NAMES.len()
    );

    let mut edges: Vec<EdgeDoc> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut order: Vec<usize> = (0..node_count).collect();
    order.shuffle(rng);
    for i in 1..node_count {
        let a = order[i];
        let b = order[rng.random_range(0..i)];
        let (u, v) = (a.min(b), a.max(b));
        seen.insert((u, v));
        edges.push(EdgeDoc {
            u,
            v,
            delay_ms: grid_value(rng, 0.25, 8.0),
            bandwidth: grid_value(rng, 4.0, 10.0),
        });
    }
    for _ in 0..node_count / 2 + 1 {
        let a = rng.random_range(0..node_count);
        let b = rng.random_range(0..node_count);
        if a == b {
            continue;
        }
        let (u, v) = (a.min(b), a.max(b));
        if !seen.insert((u, v)) {
            continue;
        }
        edges.push(EdgeDoc {
            u,
            v,
            delay_ms: grid_value(rng, 0.25, 8.0),
            bandwidth: grid_value(rng, 4.0, 10.0),
        });
    }

    let mut instances: Vec<InstanceDoc> = Vec::new();
    let mut placed = BTreeSet::new();
    for ty in 0..vnf_type_count {
        for _ in 0..rng.random_range(1..=2) {
            let host = rng.random_range(0..node_count);
            if !placed.insert((host, ty)) {
                continue;
            }
            instances.push(InstanceDoc {
                host,
                vnf_type: VNF_NAMES[ty].to_string(),
                proc_delay_ms: grid_value(rng, 0.25, 4.0),
                capacity: grid_value(rng, 2.0, 8.0),
            });
        }
    }

    let doc = TopologyDoc {
        nodes: (0..node_count).collect(),
        edges,
        instances,
        vnf_types: VNF_NAMES[..vnf_type_count].iter().map(|s| s.to_string()).collect(),
    };
    Topology::from_doc(&doc).expect("generated topology must validate")
}

/// Random request over `t`: uniform source and destination (occasionally
/// equal), chain of length in `chain_len`, demand on the 0.25 grid in
/// [0.25, 4], generous delay budget.
pub fn random_request(
    rng: &mut impl Rng,
    t: &Topology,
    id: u64,
    chain_len: std::ops::RangeInclusive<usize>,
) -> Request {
    let n = t.node_count();
    let source = rng.random_range(0..n);
    let destination = rng.random_range(0..n);
    let len = rng.random_range(chain_len);
    let chain: Vec<VnfTypeId> = (0..len)
        .map(|_| rng.random_range(0..t.vnf_types().len()))
        .collect();
    Request {
        id,
        source,
        destination,
        chain,
        bandwidth_demand: grid_value(rng, 0.25, 4.0),
        max_delay_ms: 1e6,
        arrival_time: 0,
        expiry_time: 1,
    }
}

/// Uniformly random permutation of 0..n.
pub fn random_permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

/// Relabels node i as perm[i]; edges, instances, and adjacency move with the
/// labels while the VNF type order stays fixed.
pub fn permute_topology(t: &Topology, perm: &[usize]) -> Topology {
    assert_eq!(perm.len(), t.node_count(), "permutation length must match");
    let mut check: Vec<usize> = perm.to_vec();
    check.sort_unstable();
    assert!(check.iter().enumerate().all(|(i, &p)| i == p), "not a permutation");

    let doc = t.to_doc();
    let edges = doc
        .edges
        .iter()
        .map(|e| {
            let (a, b) = (perm[e.u], perm[e.v]);
            EdgeDoc {
                u: a.min(b),
                v: a.max(b),
                delay_ms: e.delay_ms,
                bandwidth: e.bandwidth,
            }
        })
        .collect();
    let instances = doc
        .instances
        .iter()
        .map(|i| InstanceDoc {
            host: perm[i.host],
            vnf_type: i.vnf_type.clone(),
            proc_delay_ms: i.proc_delay_ms,
            capacity: i.capacity,
        })
        .collect();
    let permuted = TopologyDoc {
        nodes: doc.nodes,
        edges,
        instances,
        vnf_types: doc.vnf_types,
    };
    Topology::from_doc(&permuted).expect("permuted topology must validate")
}

/// The same relabeling applied to a request's endpoints.
pub fn permute_request(r: &Request, perm: &[usize]) -> Request {
    let mut out = r.clone();
    out.source = perm[r.source];
    out.destination = perm[r.destination];
    out
}
