//! Exact optimal SFC path computation.
//!
//! The production solver runs Dijkstra on the layered graph: states are
//! (node, chain stage, just-processed). Moving along an edge keeps the stage;
//! processing the next chain VNF at the current node advances it. The
//! just-processed flag exists because a path step can process at most once
//! per visit, so two consecutive processings at one node must be represented
//! as leave-and-return; without the flag the layered graph would admit
//! optima no path can express.
//!
//! Resource checks compare residuals from a ledger snapshot against the
//! request demand. The search does not model a path consuming the same edge
//! or instance twice within itself (that would make the problem NP-hard);
//! instead the relaxed optimum is post-checked for cumulative deployability
//! and the request is labeled infeasible when it fails, without searching
//! for costlier deployable alternatives. The brute-force reference solver
//! applies the same relaxation and post-check so the two agree exactly.
//!
//! Equal-cost ties are broken by the lexicographically smallest transition
//! token sequence (processing before moving, moves by ascending neighbor id),
//! which coincides with smallest node sequence whenever node sequences
//! differ and makes greedy reconstruction exact.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::ledger::ResourceLedger;
use crate::path::{path_cost, PathStep, SfcPath, MAX_PATH_STEPS};
use crate::topology::{Request, Topology};

/// Reconstruction treats a transition as on-an-optimal-path when its cost
/// plus the downstream distance matches the local distance within this
/// slack. Grid-quantized inputs match exactly; the slack covers arbitrary
/// positive reals.
pub const RECONSTRUCT_SLACK: f64 = 1e-9;

/// Outcome of one solve. `cost` is re-derived from the returned path, so two
/// solvers that agree on the path agree on the cost bit for bit. Infeasible
/// solutions carry an empty path and infinite cost.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub path: SfcPath,
    pub cost: f64,
    pub feasible: bool,
}

impl OracleSolution {
    fn infeasible() -> OracleSolution {
        OracleSolution {
            path: SfcPath::default(),
            cost: f64::INFINITY,
            feasible: false,
        }
    }

    fn from_path(t: &Topology, r: &Request, path: SfcPath) -> OracleSolution {
        let cost = path_cost(t, &path, &r.chain).expect("solver paths are well formed");
        OracleSolution {
            path,
            cost,
            feasible: true,
        }
    }
}

/// A request labeled under the ledger state it arrived at.
#[derive(Debug, Clone)]
pub struct LabeledRequest {
    pub request: Request,
    pub solution: OracleSolution,
    /// Ledger digest at solve time, before any apply.
    pub snapshot_digest: String,
    /// Requests holding resources at solve time.
    pub active_before: usize,
    /// Arrival sequence number within the stream.
    pub event_index: u64,
}

/// Transition tokens, ordered for tie-breaking: process < move(v) < move(w)
/// for v < w.
const PROC_TOKEN: usize = 0;

fn move_token(v: usize) -> usize {
    v + 1
}

fn tokens_to_path(source: usize, tokens: &[usize]) -> SfcPath {
    let mut steps = vec![PathStep {
        node: source,
        process: false,
    }];
    for &tok in tokens {
        if tok == PROC_TOKEN {
            let last = steps.last_mut().expect("steps never empty");
            debug_assert!(!last.process, "one processing per visit");
            last.process = true;
        } else {
            steps.push(PathStep {
                node: tok - 1,
                process: false,
            });
        }
    }
    SfcPath::new(steps)
}

/// Per-solve feasibility masks: which edges and instances admit the demand
/// under the given ledger snapshot.
struct Masks {
    edge_ok: Vec<bool>,
    inst_ok: Vec<bool>,
}

impl Masks {
    fn new(t: &Topology, ledger: &ResourceLedger, demand: f64) -> Masks {
        Masks {
            edge_ok: (0..t.edges().len())
                .map(|e| ledger.edge_residual(e) >= demand)
                .collect(),
            inst_ok: (0..t.instances().len())
                .map(|i| ledger.instance_residual(i) >= demand)
                .collect(),
        }
    }
}

/// Minimum-cost SFC path for `r` under the residuals in `ledger`.
/// Infeasibility is a value, not an error. The request must be valid for the
/// topology; see [`Request::validate`].
pub fn solve_optimal(t: &Topology, r: &Request, ledger: &ResourceLedger) -> OracleSolution {
    r.validate(t).expect("request must be valid for the topology");
    let masks = Masks::new(t, ledger, r.bandwidth_demand);
    deployable_or_infeasible(t, r, ledger, solve_masked(t, r, &masks))
}

/// Feasible solutions must classify Valid or Overmax and survive an atomic
/// apply; a relaxed optimum that oversubscribes a residual through repeated
/// traversal fails that bar and is downgraded to infeasible.
fn deployable_or_infeasible(
    t: &Topology,
    r: &Request,
    ledger: &ResourceLedger,
    sol: OracleSolution,
) -> OracleSolution {
    use crate::path::{classify_path, PathClass};
    if sol.feasible && classify_path(t, r, &sol.path, ledger) == PathClass::Failure {
        return OracleSolution::infeasible();
    }
    sol
}

/// Minimum possible delay for the request shape, ignoring resource state:
/// shortest source-to-destination walk including the cheapest required
/// processing. Used by the dataset pipeline's max-delay rule; the returned
/// path is a delay witness, not a deployment promise.
pub fn solve_unconstrained(t: &Topology, r: &Request) -> OracleSolution {
    r.validate(t).expect("request must be valid for the topology");
    let masks = Masks {
        edge_ok: vec![true; t.edges().len()],
        inst_ok: vec![true; t.instances().len()],
    };
    solve_masked(t, r, &masks)
}

#[derive(PartialEq)]
struct HeapItem {
    cost: f64,
    state: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want cheapest first.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.state.cmp(&self.state))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn solve_masked(t: &Topology, r: &Request, masks: &Masks) -> OracleSolution {
    let n = t.node_count();
    let k = r.chain.len();
    let idx = |node: usize, stage: usize, jp: bool| (stage * n + node) * 2 + jp as usize;

    // dist[s] = cheapest completion cost from state s to (destination, k).
    // Dijkstra over reversed transitions, seeded at both goal states.
    let mut dist = vec![f64::INFINITY; n * (k + 1) * 2];
    let mut heap = BinaryHeap::new();
    for jp in [false, true] {
        let g = idx(r.destination, k, jp);
        dist[g] = 0.0;
        heap.push(HeapItem { cost: 0.0, state: g });
    }
    while let Some(HeapItem { cost, state }) = heap.pop() {
        if cost > dist[state] {
            continue;
        }
        let jp = state % 2 == 1;
        let node = (state / 2) % n;
        let stage = state / 2 / n;
        let mut relax = |pred: usize, c: f64, heap: &mut BinaryHeap<HeapItem>| {
            let cand = cost + c;
            if cand < dist[pred] {
                dist[pred] = cand;
                heap.push(HeapItem {
                    cost: cand,
                    state: pred,
                });
            }
        };
        if !jp {
            // Forward moves (u, stage, *) -> (node, stage, false).
            for &u in t.neighbors(node).expect("validated topology") {
                let e = t.edge_index(u, node).expect("adjacency implies edge");
                if !masks.edge_ok[e] {
                    continue;
                }
                let d = t.edges()[e].delay_ms;
                relax(idx(u, stage, false), d, &mut heap);
                relax(idx(u, stage, true), d, &mut heap);
            }
        } else if stage >= 1 {
            // Forward processing (node, stage-1, false) -> (node, stage, true).
            if let Some(i) = t.instance_index(node, r.chain[stage - 1]) {
                if masks.inst_ok[i] {
                    relax(idx(node, stage - 1, false), t.instances()[i].proc_delay_ms, &mut heap);
                }
            }
        }
    }

    let start = idx(r.source, 0, false);
    if !dist[start].is_finite() {
        return OracleSolution::infeasible();
    }

    // Greedy forward walk: at each state take the smallest token whose
    // transition preserves optimality. Costs are strictly positive, so the
    // remaining distance strictly decreases and the walk terminates.
    let mut steps = vec![PathStep {
        node: r.source,
        process: false,
    }];
    let (mut node, mut stage, mut jp) = (r.source, 0usize, false);
    while !(node == r.destination && stage == k) {
        let here = dist[idx(node, stage, jp)];
        let mut advanced = false;
        if !jp && stage < k {
            if let Some(i) = t.instance_index(node, r.chain[stage]) {
                if masks.inst_ok[i] {
                    let d = t.instances()[i].proc_delay_ms;
                    if (d + dist[idx(node, stage + 1, true)] - here).abs() <= RECONSTRUCT_SLACK {
                        steps.last_mut().expect("nonempty").process = true;
                        stage += 1;
                        jp = true;
                        advanced = true;
                    }
                }
            }
        }
        if !advanced {
            for &v in t.neighbors(node).expect("validated topology") {
                let e = t.edge_index(node, v).expect("adjacency implies edge");
                if !masks.edge_ok[e] {
                    continue;
                }
                let d = t.edges()[e].delay_ms;
                if (d + dist[idx(v, stage, false)] - here).abs() <= RECONSTRUCT_SLACK {
                    steps.push(PathStep {
                        node: v,
                        process: false,
                    });
                    node = v;
                    jp = false;
                    advanced = true;
                    break;
                }
            }
        }
        assert!(advanced, "finite distance implies a usable transition");
        if steps.len() > MAX_PATH_STEPS {
            // Unreachable for node counts up to 12 and chains up to 3 (a
            // shortest layered path has at most n moves per stage), but an
            // optimum longer than a representable path is not deployable.
            return OracleSolution::infeasible();
        }
    }
    OracleSolution::from_path(t, r, SfcPath::new(steps))
}

/// Exhaustive walk enumeration with processing-choice branching, bounded by
/// `max_len` node visits. Exact minimum with the same tie-breaking as
/// [`solve_optimal`]; sizes are guarded because enumeration is exponential.
pub fn brute_force(t: &Topology, r: &Request, max_len: usize) -> Result<OracleSolution> {
    brute_force_under(t, r, &ResourceLedger::new(t), max_len)
}

/// [`brute_force`] under an arbitrary ledger snapshot.
pub fn brute_force_under(
    t: &Topology,
    r: &Request,
    ledger: &ResourceLedger,
    max_len: usize,
) -> Result<OracleSolution> {
    if t.node_count() > 10 {
        return Err(Error::GuardViolation(format!(
            "brute force limited to 10 nodes, got {}",
            t.node_count()
        )));
    }
    if max_len == 0 || max_len > 12 {
        return Err(Error::GuardViolation(format!(
            "brute force limited to walks of 1..=12 visits, got {max_len}"
        )));
    }
    r.validate(t)?;

    let masks = Masks::new(t, ledger, r.bandwidth_demand);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut tokens = Vec::new();
    explore(
        t,
        r,
        &masks,
        max_len,
        r.source,
        0,
        false,
        1,
        0.0,
        &mut tokens,
        &mut best,
    );
    Ok(match best {
        None => OracleSolution::infeasible(),
        Some((_, toks)) => {
            let sol = OracleSolution::from_path(t, r, tokens_to_path(r.source, &toks));
            deployable_or_infeasible(t, r, ledger, sol)
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn explore(
    t: &Topology,
    r: &Request,
    masks: &Masks,
    max_len: usize,
    node: usize,
    stage: usize,
    jp: bool,
    visits: usize,
    cost: f64,
    tokens: &mut Vec<usize>,
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if node == r.destination && stage == r.chain.len() {
        let better = match best {
            None => true,
            Some((c, toks)) => cost < *c || (cost == *c && tokens.as_slice() < toks.as_slice()),
        };
        if better {
            *best = Some((cost, tokens.clone()));
        }
    }
    // Positive step costs: anything at or above the incumbent stays above it.
    if let Some((c, _)) = best {
        if cost >= *c {
            return;
        }
    }
    if !jp && stage < r.chain.len() {
        if let Some(i) = t.instance_index(node, r.chain[stage]) {
            if masks.inst_ok[i] {
                tokens.push(PROC_TOKEN);
                explore(
                    t,
                    r,
                    masks,
                    max_len,
                    node,
                    stage + 1,
                    true,
                    visits,
                    cost + t.instances()[i].proc_delay_ms,
                    tokens,
                    best,
                );
                tokens.pop();
            }
        }
    }
    if visits < max_len {
        for &v in t.neighbors(node).expect("validated topology") {
            let e = t.edge_index(node, v).expect("adjacency implies edge");
            if !masks.edge_ok[e] {
                continue;
            }
            tokens.push(move_token(v));
            explore(
                t,
                r,
                masks,
                max_len,
                v,
                stage,
                false,
                visits + 1,
                cost + t.edges()[e].delay_ms,
                tokens,
                best,
            );
            tokens.pop();
        }
    }
}

/// Labels a time-ordered request stream under a live ledger: expiries are
/// released before the arrival of each tick, each arrival is solved under
/// the current residuals, and feasible solutions immediately consume
/// resources (Overmax labels are still served; the delay budget only affects
/// classification).
pub fn label_request_sequence(t: &Topology, requests: &[Request]) -> Vec<LabeledRequest> {
    debug_assert!(
        requests.windows(2).all(|w| w[0].arrival_time <= w[1].arrival_time),
        "requests must be sorted by arrival"
    );
    let mut ledger = ResourceLedger::new(t);
    // Min-heap of (expiry_time, request_id).
    let mut expiries: BinaryHeap<std::cmp::Reverse<(u64, u64)>> = BinaryHeap::new();
    let mut out = Vec::with_capacity(requests.len());
    for (event_index, r) in requests.iter().enumerate() {
        while let Some(&std::cmp::Reverse((expiry, id))) = expiries.peek() {
            if expiry > r.arrival_time {
                break;
            }
            expiries.pop();
            ledger.release_id(id).expect("expiring request holds resources");
        }
        let snapshot_digest = ledger.snapshot_digest();
        let active_before = ledger.active_count();
        let solution = solve_optimal(t, r, &ledger);
        if solution.feasible {
            ledger
                .apply_request(t, r, &solution.path)
                .expect("feasible label must apply");
            expiries.push(std::cmp::Reverse((r.expiry_time, r.id)));
        }
        out.push(LabeledRequest {
            request: r.clone(),
            solution,
            snapshot_digest,
            active_before,
            event_index: event_index as u64,
        });
    }
    out
}

/// Solves independent requests against one shared ledger snapshot.
pub fn solve_batch_sequential(
    t: &Topology,
    requests: &[Request],
    ledger: &ResourceLedger,
) -> Vec<OracleSolution> {
    requests.iter().map(|r| solve_optimal(t, r, ledger)).collect()
}

/// Data-parallel variant of [`solve_batch_sequential`]; identical output.
#[cfg(feature = "parallel")]
pub fn solve_batch(t: &Topology, requests: &[Request], ledger: &ResourceLedger) -> Vec<OracleSolution> {
    use rayon::prelude::*;
    requests
        .par_iter()
        .map(|r| solve_optimal(t, r, ledger))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub fn solve_batch(t: &Topology, requests: &[Request], ledger: &ResourceLedger) -> Vec<OracleSolution> {
    solve_batch_sequential(t, requests, ledger)
}
