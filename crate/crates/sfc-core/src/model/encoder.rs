//! Gated-graph encoder: embed annotations, then T rounds of adjacency
//! aggregation followed by a shared GRU step.

use std::sync::Arc;

use crate::autodiff::{AggregationPlan, Graph, GruCell, ParameterStore, Tensor, TensorId};
use crate::error::{Error, Result};
use crate::featurize::{AdjacencyMatrix, AnnotationMatrix};

use super::ModelConfig;

/// Column u of the normalized adjacency lists the connected senders v with
/// their weights; entries off the sparsity pattern are exactly zero and
/// never aggregated.
pub(super) fn aggregation_plan(adj: &AdjacencyMatrix) -> Arc<AggregationPlan> {
    let n = adj.n;
    let incoming = (0..n)
        .map(|u| {
            (0..n)
                .filter(|&v| adj.is_connected(v, u))
                .map(|v| (v, adj.get(v, u)))
                .collect()
        })
        .collect();
    Arc::new(AggregationPlan::new(n, incoming))
}

/// h0 rows are embedded annotation rows zero-padded to d_state; each round
/// computes a_u as the adjacency-weighted sum of neighbor states and feeds
/// (a_u, h_u) through one GRU cell shared across nodes and rounds. Returns
/// the |N| x d_state final state matrix.
pub(super) fn encode_graph(
    g: &mut Graph,
    store: &ParameterStore,
    cfg: &ModelConfig,
    ann: &AnnotationMatrix,
    adj: &AdjacencyMatrix,
) -> Result<TensorId> {
    if ann.n != adj.n {
        return Err(Error::ShapeMismatch(format!(
            "annotation rows {} vs adjacency size {}",
            ann.n, adj.n
        )));
    }
    if ann.width != cfg.annotation_width() {
        return Err(Error::ShapeMismatch(format!(
            "annotation width {} vs model width {}",
            ann.width,
            cfg.annotation_width()
        )));
    }
    let n = ann.n;
    let h = &cfg.hyper;
    let ann_id = g.constant(Tensor::from_vec(n, ann.width, ann.values().to_vec()));
    let embed = g.param("enc.embed", store.get("enc.embed")?);
    let mut state = g.matmul(ann_id, embed);
    if h.annotation_embed_dim < h.d_state {
        let pad = g.constant(Tensor::zeros(n, h.d_state - h.annotation_embed_dim));
        state = g.concat_cols(&[state, pad]);
    }
    let gru = GruCell::bind(g, store, "enc.gru", h.d_state, h.d_state)?;
    let plan = aggregation_plan(adj);
    for _ in 0..h.t_steps {
        let a = g.aggregate(state, &plan);
        state = gru.step(g, a, state)?;
    }
    Ok(state)
}
