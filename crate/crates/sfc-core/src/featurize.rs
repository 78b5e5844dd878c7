//! Annotation and normalized adjacency matrices consumed by the encoder.
//!
//! Annotation row u flags the VNF types hosted at u (in the topology
//! document's canonical `vnf_types` order) plus source/destination marks for
//! one request. Adjacency entry (v,u) weights the edge v->u by inverse delay,
//! standardized and softmaxed per column over connected entries only;
//! non-edges stay exactly zero.
//!
//! All column reductions use order-invariant summation, so relabeling nodes
//! permutes both matrices bit-exactly.

use crate::error::Result;
use crate::numeric::ordered_sum;
use crate::topology::{NodeId, Request, Topology};

/// |N| x (|M|+2) binary node-feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationMatrix {
    pub n: usize,
    pub width: usize,
    values: Vec<f64>,
}

impl AnnotationMatrix {
    pub fn get(&self, node: NodeId, feature: usize) -> f64 {
        self.values[node * self.width + feature]
    }

    pub fn row(&self, node: NodeId) -> &[f64] {
        &self.values[node * self.width..(node + 1) * self.width]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for u in 0..self.n {
            let row: Vec<String> = self.row(u).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// |N| x |N| column-normalized adjacency, row-major. `values[v*n + u]` is the
/// weight of neighbor v in node u's column. `connected` carries the exact
/// sparsity pattern for the stochasticity check.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    pub n: usize,
    values: Vec<f64>,
    connected: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn get(&self, row: NodeId, col: NodeId) -> f64 {
        self.values[row * self.n + col]
    }

    pub fn is_connected(&self, row: NodeId, col: NodeId) -> bool {
        self.connected[row * self.n + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Test hook: perturb one entry without touching the sparsity pattern.
    pub fn set_for_test(&mut self, row: NodeId, col: NodeId, value: f64) {
        self.values[row * self.n + col] = value;
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|c| self.get(r, c).to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Row u = [hosts_vnf_0(u), ..., hosts_vnf_{M-1}(u), is_source(u), is_dest(u)].
pub fn build_annotation(t: &Topology, r: &Request) -> AnnotationMatrix {
    let n = t.node_count();
    let width = t.annotation_width();
    let m = t.vnf_types().len();
    let mut values = vec![0.0; n * width];
    for inst in t.instances() {
        values[inst.host * width + inst.vnf_type] = 1.0;
    }
    values[r.source * width + m] = 1.0;
    values[r.destination * width + m + 1] = 1.0;
    AnnotationMatrix { n, width, values }
}

/// Raw weight 1/d_uv per edge; per column, standardize the connected entries
/// (population mean/std; skipped for singleton or zero-variance columns) and
/// softmax over them with max-subtraction. Non-edges remain exactly 0.
pub fn build_adjacency(t: &Topology) -> Result<AdjacencyMatrix> {
    let n = t.node_count();
    let mut values = vec![0.0; n * n];
    let mut connected = vec![false; n * n];
    for u in 0..n {
        let ne = t.neighbors(u)?;
        let mut raw: Vec<f64> = ne
            .iter()
            .map(|&v| 1.0 / t.edge_between(v, u).expect("neighbor edge").delay_ms)
            .collect();
        let k = raw.len();
        if k >= 2 {
            let mean = ordered_sum(raw.clone()) / k as f64;
            let var =
                ordered_sum(raw.iter().map(|x| (x - mean) * (x - mean)).collect()) / k as f64;
            if var > 0.0 {
                let std = var.sqrt();
                for x in &mut raw {
                    *x = (*x - mean) / std;
                }
            }
        }
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = raw.iter().map(|x| (x - max).exp()).collect();
        let denom = ordered_sum(exps.clone());
        for (&v, e) in ne.iter().zip(&exps) {
            values[v * n + u] = e / denom;
            connected[v * n + u] = true;
        }
    }
    Ok(AdjacencyMatrix { n, values, connected })
}

/// True iff every column sums to 1 +- 1e-9 and zero entries coincide exactly
/// with non-edges.
pub fn column_stochastic_check(a: &AdjacencyMatrix) -> bool {
    for col in 0..a.n {
        let mut sum = 0.0;
        for row in 0..a.n {
            let v = a.get(row, col);
            if a.is_connected(row, col) {
                if v == 0.0 {
                    return false;
                }
                sum += v;
            } else if v != 0.0 {
                return false;
            }
        }
        if (sum - 1.0).abs() > 1e-9 {
            return false;
        }
    }
    true
}
