//! Per-step decoder networks. One step scores the candidate set (the
//! neighbors of the current node, or the source alone at step zero) with
//! three outputs per candidate: next-node score, process score, not-process
//! score.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{positional_encoding, Graph, GruCell, ParameterStore, Tensor, TensorId};
use crate::error::Result;
use crate::topology::{NodeId, VnfTypeId};

use super::{ModelConfig, ModelVariant};

/// Graph nodes produced by one decode step.
pub(super) struct StepTensors {
    pub candidates: Vec<NodeId>,
    /// 1 x K next-node distribution over the candidates.
    pub node_probs: TensorId,
    /// K x 1 processing probability per candidate, sigmoid(proc - not).
    pub proc_probs: TensorId,
    /// K x decoder_hidden candidate recurrent states (GRU variant only).
    pub cand_states: Option<TensorId>,
}

/// Embeds the remaining-chain context: mean-pooled embeddings of the
/// not-yet-processed types (the DONE row when none remain) concatenated with
/// the embedding of the immediate next type or DONE. 1 x (2 d_vnf).
pub(super) fn context_embedding(
    g: &mut Graph,
    store: &ParameterStore,
    cfg: &ModelConfig,
    remaining: &[VnfTypeId],
) -> Result<TensorId> {
    let table = g.param("dec.vnf_embed", store.get("dec.vnf_embed")?);
    let done = cfg.vnf_type_count;
    let v_all = if remaining.is_empty() {
        g.select_rows(table, &[done])
    } else {
        let rows = g.select_rows(table, remaining);
        g.mean_rows(rows)
    };
    let now = remaining.first().copied().unwrap_or(done);
    let v_now = g.select_rows(table, &[now]);
    Ok(g.concat_cols(&[v_all, v_now]))
}

/// Sinusoidal position code of the current node, as a constant input.
pub(super) fn location_code(g: &mut Graph, cfg: &ModelConfig, n_prev: NodeId) -> Result<TensorId> {
    let pe = positional_encoding(n_prev, cfg.hyper.d_node)?;
    Ok(g.constant(Tensor::row_vector(pe)))
}

/// Concatenates per-candidate encoder rows with the shared context, runs the
/// variant network, and derives both probability heads.
#[allow(clippy::too_many_arguments)]
pub(super) fn decode_step_graph(
    g: &mut Graph,
    store: &ParameterStore,
    cfg: &ModelConfig,
    enc: TensorId,
    gru_state: Option<TensorId>,
    candidates: &[NodeId],
    remaining: &[VnfTypeId],
    n_prev: NodeId,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<StepTensors> {
    let k = candidates.len();
    debug_assert!(k > 0, "candidate set never empty on a connected graph");
    let h_rows = g.select_rows(enc, candidates);
    let ctx = context_embedding(g, store, cfg, remaining)?;
    let pe = location_code(g, cfg, n_prev)?;
    let ctx_rep = g.repeat_rows(ctx, k);
    let pe_rep = g.repeat_rows(pe, k);
    let input = g.concat_cols(&[h_rows, ctx_rep, pe_rep]);

    let (features, cand_states) = match cfg.variant {
        ModelVariant::GgDnn => (
            mlp_forward(g, store, cfg, input, "dec.mlp", training, rng)?,
            None,
        ),
        ModelVariant::GgRnn => {
            let h = cfg.hyper.decoder_hidden;
            let gru = GruCell::bind(g, store, "dec.gru", cfg.decoder_input_dim(), h)?;
            let prev = gru_state.expect("gru variant threads a recurrent state");
            let prev_rows = g.repeat_rows(prev, k);
            let states = gru.step(g, input, prev_rows)?;
            (states, Some(states))
        }
        ModelVariant::DnnBaseline => unreachable!("baseline builds its own step"),
    };
    let out = head_forward(g, store, features)?;
    finish_step(g, candidates.to_vec(), out, cand_states)
}

/// Hidden ReLU stack with inverted dropout after each activation.
pub(super) fn mlp_forward(
    g: &mut Graph,
    store: &ParameterStore,
    cfg: &ModelConfig,
    mut x: TensorId,
    prefix: &str,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    for layer in 0..cfg.hyper.decoder_layers {
        let w = g.param(
            &format!("{prefix}.{layer}.w"),
            store.get(&format!("{prefix}.{layer}.w"))?,
        );
        let b = g.param(
            &format!("{prefix}.{layer}.b"),
            store.get(&format!("{prefix}.{layer}.b"))?,
        );
        let lin = g.matmul(x, w);
        let biased = g.add_bias(lin, b);
        let act = g.relu(biased);
        x = g.dropout(act, cfg.hyper.dropout, training, rng)?;
    }
    Ok(x)
}

pub(super) fn head_forward(
    g: &mut Graph,
    store: &ParameterStore,
    features: TensorId,
) -> Result<TensorId> {
    let w = g.param("dec.head.w", store.get("dec.head.w")?);
    let b = g.param("dec.head.b", store.get("dec.head.b")?);
    let lin = g.matmul(features, w);
    Ok(g.add_bias(lin, b))
}

/// Splits K x 3 outputs into the masked-softmax node distribution and the
/// per-candidate binary processing probability.
pub(super) fn finish_step(
    g: &mut Graph,
    candidates: Vec<NodeId>,
    out: TensorId,
    cand_states: Option<TensorId>,
) -> Result<StepTensors> {
    let k = candidates.len();
    let node_col = g.slice_cols(out, 0, 1);
    let node_row = g.reshape(node_col, 1, k);
    let node_probs = g.masked_softmax(node_row, &vec![true; k])?;
    let proc = g.slice_cols(out, 1, 2);
    let not = g.slice_cols(out, 2, 3);
    let neg = g.scale(not, -1.0);
    let diff = g.add(proc, neg);
    let proc_probs = g.sigmoid(diff);
    Ok(StepTensors {
        candidates,
        node_probs,
        proc_probs,
        cand_states,
    })
}
