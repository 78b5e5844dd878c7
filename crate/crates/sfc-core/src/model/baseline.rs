//! Size-bound DNN baseline. The whole topology (flattened annotation and
//! adjacency) plus the step context feeds one MLP that scores all nodes at
//! once; the input layer is sized for a fixed node count, which is exactly
//! why it cannot transfer to a changed topology.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParameterStore, Tensor, TensorId};
use crate::error::{Error, Result};
use crate::featurize::{AdjacencyMatrix, AnnotationMatrix};
use crate::topology::{NodeId, VnfTypeId};

use super::decoder::{context_embedding, finish_step, head_forward, location_code, mlp_forward, StepTensors};
use super::ModelConfig;

/// Annotation row-major, then adjacency row-major, as one constant row.
pub(super) fn flatten_inputs(
    g: &mut Graph,
    cfg: &ModelConfig,
    ann: &AnnotationMatrix,
    adj: &AdjacencyMatrix,
) -> Result<TensorId> {
    let n = cfg
        .baseline_nodes
        .expect("flatten_inputs is baseline-only");
    if ann.n != n || adj.n != n {
        return Err(Error::TopologyIncompatible(format!(
            "baseline built for {n} nodes, topology has {}",
            ann.n
        )));
    }
    if ann.width != cfg.annotation_width() {
        return Err(Error::TopologyIncompatible(format!(
            "baseline built for annotation width {}, topology has {}",
            cfg.annotation_width(),
            ann.width
        )));
    }
    let mut data = Vec::with_capacity(n * ann.width + n * n);
    data.extend_from_slice(ann.values());
    data.extend_from_slice(adj.values());
    Ok(g.constant(Tensor::row_vector(data)))
}

/// One baseline step: concat(flat topology, context, position) -> MLP ->
/// 3|N| head -> per-candidate triples, with the same probability heads as
/// the graph decoder.
#[allow(clippy::too_many_arguments)]
pub(super) fn baseline_step_graph(
    g: &mut Graph,
    store: &ParameterStore,
    cfg: &ModelConfig,
    flat: TensorId,
    candidates: &[NodeId],
    remaining: &[VnfTypeId],
    n_prev: NodeId,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<StepTensors> {
    let n = cfg.baseline_nodes.expect("baseline-only");
    let ctx = context_embedding(g, store, cfg, remaining)?;
    let pe = location_code(g, cfg, n_prev)?;
    let input = g.concat_cols(&[flat, ctx, pe]);
    let features = mlp_forward(g, store, cfg, input, "dec.mlp", training, rng)?;
    let all = head_forward(g, store, features)?;
    let per_node = g.reshape(all, n, 3);
    let out = g.select_rows(per_node, candidates);
    finish_step(g, candidates.to_vec(), out, None)
}
