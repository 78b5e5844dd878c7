//! Path-generating models. A gated graph network encodes the annotated
//! topology into per-node states; a step decoder walks the graph from the
//! request source, each step scoring the neighbors of the current node and a
//! process/skip decision, until the destination is reached with the chain
//! fully applied. Two decoder variants (feedforward and recurrent) share the
//! encoder; a third, size-bound flat DNN skips the encoder entirely and
//! serves as the non-transferable baseline.
//!
//! The same step networks serve three callers: free-running generation
//! ([`SfcModel::generate_path`]), teacher-forced training losses along an
//! oracle path ([`SfcModel::teacher_forced`]), and single-step probes for
//! tests ([`SfcModel::decode_step_once`]).

mod baseline;
mod decoder;
mod encoder;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, GruCell, ParameterStore, Tensor, TensorId};
use crate::digest;
use crate::error::{Error, Result};
use crate::featurize::{build_adjacency, build_annotation};
use crate::fsutil;
use crate::ledger::ResourceLedger;
use crate::path::{classify_path, PathClass, PathStep, SfcPath};
use crate::topology::{NodeId, Request, Topology, VnfTypeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelVariant {
    /// Flat DNN over the whole topology; input layer sized to one node count.
    #[serde(rename = "dnn")]
    DnnBaseline,
    /// Graph encoder + feedforward step decoder.
    #[serde(rename = "gg-dnn")]
    GgDnn,
    /// Graph encoder + recurrent step decoder carrying a walk state.
    #[serde(rename = "gg-rnn")]
    GgRnn,
}

impl ModelVariant {
    pub fn all() -> [ModelVariant; 3] {
        [
            ModelVariant::DnnBaseline,
            ModelVariant::GgDnn,
            ModelVariant::GgRnn,
        ]
    }

    /// Whether the model reads the topology through the graph encoder and
    /// therefore transfers across node counts.
    pub fn is_graph_based(self) -> bool {
        !matches!(self, ModelVariant::DnnBaseline)
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelVariant::DnnBaseline => "dnn",
            ModelVariant::GgDnn => "gg-dnn",
            ModelVariant::GgRnn => "gg-rnn",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelVariant> {
        match s {
            "dnn" => Ok(ModelVariant::DnnBaseline),
            "gg-dnn" => Ok(ModelVariant::GgDnn),
            "gg-rnn" => Ok(ModelVariant::GgRnn),
            other => Err(Error::InvalidArgument(format!(
                "unknown model variant `{other}` (expected dnn, gg-dnn, or gg-rnn)"
            ))),
        }
    }
}

/// Network dimensions and walk limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelHyper {
    /// Propagation rounds of the graph encoder.
    pub t_steps: usize,
    /// Per-node state width.
    pub d_state: usize,
    /// Annotation embedding width; zero-padded up to `d_state`.
    pub annotation_embed_dim: usize,
    /// VNF type embedding width.
    pub d_vnf: usize,
    /// Positional code width for the current node. Must be even.
    pub d_node: usize,
    /// Hidden width of the step decoder (every MLP layer, or the GRU state).
    pub decoder_hidden: usize,
    /// Hidden layer count of the feedforward decoders.
    pub decoder_layers: usize,
    /// Inverted-dropout rate after each decoder MLP activation.
    pub dropout: f64,
    /// Generation stops (as a failure) once a walk reaches this many steps.
    pub max_path_len: usize,
}

impl Default for ModelHyper {
    /// Full-scale dimensions.
    fn default() -> ModelHyper {
        ModelHyper {
            t_steps: 5,
            d_state: 128,
            annotation_embed_dim: 128,
            d_vnf: 32,
            d_node: 4,
            decoder_hidden: 256,
            decoder_layers: 4,
            dropout: 0.1,
            max_path_len: 50,
        }
    }
}

impl ModelHyper {
    /// Reduced dimensions that train in minutes on a single core while
    /// keeping the full-scale architecture.
    pub fn desk() -> ModelHyper {
        ModelHyper {
            t_steps: 5,
            d_state: 64,
            annotation_embed_dim: 64,
            d_vnf: 16,
            d_node: 4,
            decoder_hidden: 128,
            decoder_layers: 2,
            dropout: 0.1,
            max_path_len: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_steps == 0 {
            return Err(Error::InvalidArgument(
                "t_steps must be at least 1; an unpropagated encoder never sees the graph".into(),
            ));
        }
        if self.d_state == 0 || self.annotation_embed_dim == 0 {
            return Err(Error::InvalidArgument("state widths must be positive".into()));
        }
        if self.annotation_embed_dim > self.d_state {
            return Err(Error::InvalidArgument(format!(
                "annotation_embed_dim {} exceeds d_state {}",
                self.annotation_embed_dim, self.d_state
            )));
        }
        if self.d_vnf == 0 || self.decoder_hidden == 0 || self.decoder_layers == 0 {
            return Err(Error::InvalidArgument("decoder widths must be positive".into()));
        }
        if self.d_node == 0 || self.d_node % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_node must be even and positive (sine/cosine pairs), got {}",
                self.d_node
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.max_path_len == 0 {
            return Err(Error::InvalidArgument("max_path_len must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a model's computation graphs: the variant,
/// the dimensions, and the VNF catalog size it was initialized against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub hyper: ModelHyper,
    /// Catalog size the embeddings (and annotation width) are sized for.
    pub vnf_type_count: usize,
    /// Node count the baseline input layer is sized for. `None` for the
    /// graph-based variants, which accept any node count.
    pub baseline_nodes: Option<usize>,
}

impl ModelConfig {
    /// Annotation columns: one per VNF type plus the source and destination
    /// flags.
    pub fn annotation_width(&self) -> usize {
        self.vnf_type_count + 2
    }

    /// Per-candidate decoder input: encoder state ++ chain context ++
    /// position code.
    pub fn decoder_input_dim(&self) -> usize {
        self.hyper.d_state + 2 * self.hyper.d_vnf + self.hyper.d_node
    }

    /// Baseline step input: flattened annotation and adjacency plus the same
    /// chain context and position code the graph decoders see.
    pub fn baseline_input_dim(&self) -> usize {
        let n = self.baseline_nodes.expect("baseline-only");
        n * self.annotation_width() + n * n + 2 * self.hyper.d_vnf + self.hyper.d_node
    }
}

/// What the decoder is conditioned on at one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderContext {
    /// Not-yet-applied suffix of the chain, in order.
    pub remaining: Vec<VnfTypeId>,
    /// Node the walk currently stands on.
    pub n_prev: NodeId,
    /// Step zero scores the source alone (only the process decision is
    /// free); later steps score the neighbors of `n_prev`.
    pub at_source: bool,
}

/// Concrete probabilities read back from one decode step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Scored nodes, ascending. The source alone at step zero, otherwise
    /// the neighbors of the current node.
    pub candidates: Vec<NodeId>,
    /// Next-node distribution over `candidates`; sums to 1.
    pub node_probs: Vec<f64>,
    /// Processing probability per candidate.
    pub proc_probs: Vec<f64>,
}

impl StepOutput {
    /// The distribution spread over all `n` nodes; zero off the candidate
    /// set.
    pub fn dense_node_probs(&self, n: usize) -> Vec<f64> {
        let mut dense = vec![0.0; n];
        for (pos, &node) in self.candidates.iter().enumerate() {
            dense[node] = self.node_probs[pos];
        }
        dense
    }

    /// Position of the most probable candidate; ties go to the lowest node
    /// id since candidates are ascending.
    pub fn argmax_pos(&self) -> usize {
        argmax(&self.node_probs)
    }

    pub fn argmax_node(&self) -> NodeId {
        self.candidates[self.argmax_pos()]
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x.total_cmp(&xs[best]) == std::cmp::Ordering::Greater {
            best = i;
        }
    }
    best
}

/// A teacher-forced loss graph over one labeled request, ready for
/// `backward`.
pub struct TeacherForced {
    pub graph: Graph,
    pub loss_id: TensorId,
    /// Loss value (sum of per-step node and process cross-entropies).
    pub loss: f64,
    /// Next-node argmax hits along the label, source step excluded.
    pub node_correct: usize,
    pub node_total: usize,
}

const CHECKPOINT_FORMAT: &str = "sfc-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    config: ModelConfig,
    vnf_order_hash: String,
    topology_hash: String,
    /// Digest of the app config that produced this checkpoint; empty for
    /// models built outside the run harness.
    #[serde(default)]
    config_digest: String,
    store: ParameterStore,
}

/// A path-generating model: configuration plus parameters. Computation
/// graphs are rebuilt per request; the store is the only mutable state.
#[derive(Debug, Clone)]
pub struct SfcModel {
    pub config: ModelConfig,
    pub store: ParameterStore,
    /// Digest of the VNF catalog (names, in id order) the embeddings were
    /// initialized against. Type ids index embedding rows, so a reordered
    /// catalog silently permutes meanings; this pins it instead.
    vnf_order_hash: String,
    /// App-config digest stamped by the run harness, persisted with the
    /// checkpoint; empty when the model was built directly.
    config_digest: String,
}

impl SfcModel {
    pub fn new(
        variant: ModelVariant,
        hyper: ModelHyper,
        t: &Topology,
        seed: u64,
    ) -> Result<SfcModel> {
        hyper.validate()?;
        let config = ModelConfig {
            variant,
            hyper,
            vnf_type_count: t.vnf_types().len(),
            baseline_nodes: (!variant.is_graph_based()).then(|| t.node_count()),
        };
        let h = config.hyper.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        // One embedding row per VNF type plus the DONE row (index
        // vnf_type_count) standing in for an exhausted chain.
        store.init_uniform("dec.vnf_embed", config.vnf_type_count + 1, h.d_vnf, &mut rng);
        match variant {
            ModelVariant::DnnBaseline => {
                let n = t.node_count();
                init_mlp(
                    &mut store,
                    "dec.mlp",
                    config.baseline_input_dim(),
                    h.decoder_hidden,
                    h.decoder_layers,
                    &mut rng,
                );
                store.init_uniform("dec.head.w", h.decoder_hidden, 3 * n, &mut rng);
                store.init_zeros("dec.head.b", 1, 3 * n);
            }
            ModelVariant::GgDnn | ModelVariant::GgRnn => {
                store.init_uniform(
                    "enc.embed",
                    config.annotation_width(),
                    h.annotation_embed_dim,
                    &mut rng,
                );
                GruCell::init_params(&mut store, "enc.gru", h.d_state, h.d_state, &mut rng);
                if variant == ModelVariant::GgDnn {
                    init_mlp(
                        &mut store,
                        "dec.mlp",
                        config.decoder_input_dim(),
                        h.decoder_hidden,
                        h.decoder_layers,
                        &mut rng,
                    );
                } else {
                    GruCell::init_params(
                        &mut store,
                        "dec.gru",
                        config.decoder_input_dim(),
                        h.decoder_hidden,
                        &mut rng,
                    );
                }
                store.init_uniform("dec.head.w", h.decoder_hidden, 3, &mut rng);
                store.init_zeros("dec.head.b", 1, 3);
            }
        }
        Ok(SfcModel {
            config,
            store,
            vnf_order_hash: vnf_order_digest(t),
            config_digest: String::new(),
        })
    }

    pub fn vnf_order_hash(&self) -> &str {
        &self.vnf_order_hash
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    pub fn set_config_digest(&mut self, digest: impl Into<String>) {
        self.config_digest = digest.into();
    }

    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    /// Checks that `t` is one this model can run on: same VNF catalog (ids
    /// index embedding rows), and for the baseline, the exact node count the
    /// input layer was sized for.
    pub fn ensure_compatible(&self, t: &Topology) -> Result<()> {
        if t.vnf_types().len() != self.config.vnf_type_count {
            return Err(Error::TopologyIncompatible(format!(
                "model embeds {} VNF types, topology defines {}",
                self.config.vnf_type_count,
                t.vnf_types().len()
            )));
        }
        if vnf_order_digest(t) != self.vnf_order_hash {
            return Err(Error::TopologyIncompatible(
                "VNF catalog order differs from the one the model was initialized against".into(),
            ));
        }
        if let Some(n) = self.config.baseline_nodes {
            if t.node_count() != n {
                return Err(Error::TopologyIncompatible(format!(
                    "baseline input layer is sized for {n} nodes, topology has {}",
                    t.node_count()
                )));
            }
        }
        Ok(())
    }

    /// Runs the graph encoder once and returns the |N| x d_state node
    /// states. Errors on the baseline, which has none.
    pub fn encode_values(&self, t: &Topology, r: &Request) -> Result<Tensor> {
        if !self.config.variant.is_graph_based() {
            return Err(Error::InvalidArgument(
                "the size-bound baseline has no graph encoder".into(),
            ));
        }
        self.ensure_compatible(t)?;
        r.validate(t)?;
        let ann = build_annotation(t, r);
        let adj = build_adjacency(t)?;
        let mut g = Graph::new();
        let id = encoder::encode_graph(&mut g, &self.store, &self.config, &ann, &adj)?;
        Ok(g.value(id).clone())
    }

    /// Runs a single decode step on a fresh graph (no dropout, zero
    /// recurrent state) and reads the probabilities back.
    pub fn decode_step_once(
        &self,
        t: &Topology,
        r: &Request,
        ctx: &DecoderContext,
    ) -> Result<StepOutput> {
        if ctx.n_prev >= t.node_count() {
            return Err(Error::UnknownNode(ctx.n_prev));
        }
        if let Some(&ty) = ctx.remaining.iter().find(|&&ty| ty >= self.config.vnf_type_count) {
            return Err(Error::InvalidArgument(format!(
                "remaining chain names VNF type {ty}, model embeds {}",
                self.config.vnf_type_count
            )));
        }
        let mut dec = Decoding::new(self, t, r, false, 0)?;
        let st = dec.step(ctx)?;
        Ok(dec.output(&st))
    }

    /// Free-running generation: walk from the source picking the argmax
    /// neighbor each step, processing when the model says so and the node
    /// actually hosts the next type with residual capacity. Stops at the
    /// destination with the chain done, or at `max_path_len` steps. The
    /// returned class is the path judged against `ledger`.
    pub fn generate_path(
        &self,
        t: &Topology,
        r: &Request,
        ledger: &ResourceLedger,
    ) -> Result<(SfcPath, PathClass)> {
        let mut dec = Decoding::new(self, t, r, false, 0)?;
        let chain_len = r.chain.len();
        let mut stage = 0usize;
        let mut steps = vec![PathStep {
            node: r.source,
            process: false,
        }];

        let ctx = DecoderContext {
            remaining: r.chain.clone(),
            n_prev: r.source,
            at_source: true,
        };
        let st = dec.step(&ctx)?;
        let out = dec.output(&st);
        if gate_process(t, r, ledger, r.source, stage, out.proc_probs[0]) {
            steps[0].process = true;
            stage += 1;
        }
        dec.commit(&st, 0);

        let mut node = r.source;
        while !(node == r.destination && stage == chain_len) {
            if steps.len() >= self.config.hyper.max_path_len {
                break;
            }
            let ctx = DecoderContext {
                remaining: r.chain[stage..].to_vec(),
                n_prev: node,
                at_source: false,
            };
            let st = dec.step(&ctx)?;
            let out = dec.output(&st);
            let pos = out.argmax_pos();
            let next = out.candidates[pos];
            let process = gate_process(t, r, ledger, next, stage, out.proc_probs[pos]);
            steps.push(PathStep {
                node: next,
                process,
            });
            if process {
                stage += 1;
            }
            dec.commit(&st, pos);
            node = next;
        }

        let path = SfcPath::new(steps);
        let class = classify_path(t, r, &path, ledger);
        Ok((path, class))
    }

    /// Builds the teacher-forced loss along `label`: at every step the
    /// decoder is conditioned on the label prefix and penalized with
    /// cross-entropy against the label's next node (over the candidate set)
    /// and its process bit. `dropout_seed` enables training-mode dropout;
    /// `None` evaluates deterministically.
    pub fn teacher_forced(
        &self,
        t: &Topology,
        r: &Request,
        label: &SfcPath,
        dropout_seed: Option<u64>,
    ) -> Result<TeacherForced> {
        if label.steps.is_empty() {
            return Err(Error::InvalidArgument("label path is empty".into()));
        }
        if label.steps[0].node != r.source {
            return Err(Error::InvalidArgument(format!(
                "label path starts at node {}, request source is {}",
                label.steps[0].node, r.source
            )));
        }
        let mut dec = Decoding::new(self, t, r, dropout_seed.is_some(), dropout_seed.unwrap_or(0))?;
        let mut stage = 0usize;
        let mut terms = Vec::with_capacity(2 * label.steps.len());
        let mut node_correct = 0usize;
        let mut node_total = 0usize;

        for (i, step) in label.steps.iter().enumerate() {
            let at_source = i == 0;
            let n_prev = if at_source {
                r.source
            } else {
                label.steps[i - 1].node
            };
            let ctx = DecoderContext {
                remaining: r.chain[stage..].to_vec(),
                n_prev,
                at_source,
            };
            let st = dec.step(&ctx)?;
            let pos = st
                .candidates
                .iter()
                .position(|&c| c == step.node)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "label step {i} moves to node {} which is not reachable from {n_prev}",
                        step.node
                    ))
                })?;
            terms.push(dec.g.cross_entropy(st.node_probs, pos));
            if !at_source {
                node_total += 1;
                if argmax(dec.g.value(st.node_probs).row(0)) == pos {
                    node_correct += 1;
                }
            }

            if step.process && stage >= r.chain.len() {
                return Err(Error::InvalidArgument(format!(
                    "label step {i} processes beyond the {}-stage chain",
                    r.chain.len()
                )));
            }
            let p = dec.g.select_rows(st.proc_probs, &[pos]);
            let q = dec.g.one_minus(p);
            let both = dec.g.concat_cols(&[p, q]);
            let target = if step.process { 0 } else { 1 };
            terms.push(dec.g.cross_entropy(both, target));

            if step.process {
                stage += 1;
            }
            dec.commit(&st, pos);
        }
        if stage != r.chain.len() {
            return Err(Error::InvalidArgument(format!(
                "label applies {stage} of {} chain stages",
                r.chain.len()
            )));
        }

        let loss_id = dec.g.add_n(&terms);
        let loss = dec.g.value(loss_id).scalar_value();
        Ok(TeacherForced {
            graph: dec.g,
            loss_id,
            loss,
            node_correct,
            node_total,
        })
    }

    pub fn save(&self, path: &Path, topology_hash: &str) -> Result<()> {
        let doc = CheckpointDoc {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            vnf_order_hash: self.vnf_order_hash.clone(),
            topology_hash: topology_hash.to_string(),
            config_digest: self.config_digest.clone(),
            store: self.store.clone(),
        };
        fsutil::atomic_write(path, &serde_json::to_vec(&doc)?)
    }

    /// Loads a checkpoint, returning the model and the hash of the topology
    /// it was trained on.
    pub fn load(path: &Path) -> Result<(SfcModel, String)> {
        let bytes = std::fs::read(path)?;
        let doc: CheckpointDoc = serde_json::from_slice(&bytes)
            .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::CheckpointFormat(format!(
                "unknown checkpoint format `{}` (expected {CHECKPOINT_FORMAT})",
                doc.format
            )));
        }
        doc.config.hyper.validate()?;
        Ok((
            SfcModel {
                config: doc.config,
                store: doc.store,
                vnf_order_hash: doc.vnf_order_hash,
                config_digest: doc.config_digest,
            },
            doc.topology_hash,
        ))
    }
}

/// Generates paths for independent requests against one frozen ledger.
pub fn generate_batch_sequential(
    model: &SfcModel,
    t: &Topology,
    requests: &[Request],
    ledger: &ResourceLedger,
) -> Result<Vec<(SfcPath, PathClass)>> {
    requests
        .iter()
        .map(|r| model.generate_path(t, r, ledger))
        .collect()
}

#[cfg(feature = "parallel")]
pub fn generate_batch(
    model: &SfcModel,
    t: &Topology,
    requests: &[Request],
    ledger: &ResourceLedger,
) -> Result<Vec<(SfcPath, PathClass)>> {
    use rayon::prelude::*;
    requests
        .par_iter()
        .map(|r| model.generate_path(t, r, ledger))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub fn generate_batch(
    model: &SfcModel,
    t: &Topology,
    requests: &[Request],
    ledger: &ResourceLedger,
) -> Result<Vec<(SfcPath, PathClass)>> {
    generate_batch_sequential(model, t, requests, ledger)
}

fn vnf_order_digest(t: &Topology) -> String {
    let names: Vec<&str> = t.vnf_types().iter().map(|v| v.name.as_str()).collect();
    digest::json_digest(&names)
}

/// Process only when the model votes for it and it is actually possible:
/// a stage is pending, the node hosts the needed type, and the instance has
/// residual capacity for this request's demand.
fn gate_process(
    t: &Topology,
    r: &Request,
    ledger: &ResourceLedger,
    node: NodeId,
    stage: usize,
    p: f64,
) -> bool {
    if stage >= r.chain.len() || p <= 0.5 {
        return false;
    }
    match t.instance_index(node, r.chain[stage]) {
        Some(idx) => ledger.instance_residual(idx) >= r.bandwidth_demand,
        None => false,
    }
}

fn init_mlp<R: rand::Rng>(
    store: &mut ParameterStore,
    prefix: &str,
    d_in: usize,
    hidden: usize,
    layers: usize,
    rng: &mut R,
) {
    let mut din = d_in;
    for layer in 0..layers {
        store.init_uniform(&format!("{prefix}.{layer}.w"), din, hidden, rng);
        store.init_zeros(&format!("{prefix}.{layer}.b"), 1, hidden);
        din = hidden;
    }
}

/// Per-request decoding session: one computation graph holding the encoded
/// topology (or the baseline's flattened input) and, for the recurrent
/// decoder, the walk state threaded between steps.
struct Decoding<'a> {
    model: &'a SfcModel,
    t: &'a Topology,
    g: Graph,
    training: bool,
    rng: ChaCha8Rng,
    enc: Option<TensorId>,
    flat: Option<TensorId>,
    gru_state: Option<TensorId>,
}

impl<'a> Decoding<'a> {
    fn new(
        model: &'a SfcModel,
        t: &'a Topology,
        r: &Request,
        training: bool,
        dropout_seed: u64,
    ) -> Result<Decoding<'a>> {
        model.ensure_compatible(t)?;
        r.validate(t)?;
        let ann = build_annotation(t, r);
        let adj = build_adjacency(t)?;
        let mut g = Graph::new();
        let mut enc = None;
        let mut flat = None;
        let mut gru_state = None;
        match model.config.variant {
            ModelVariant::DnnBaseline => {
                flat = Some(baseline::flatten_inputs(&mut g, &model.config, &ann, &adj)?);
            }
            ModelVariant::GgDnn | ModelVariant::GgRnn => {
                enc = Some(encoder::encode_graph(
                    &mut g,
                    &model.store,
                    &model.config,
                    &ann,
                    &adj,
                )?);
                if model.config.variant == ModelVariant::GgRnn {
                    gru_state =
                        Some(g.constant(Tensor::zeros(1, model.config.hyper.decoder_hidden)));
                }
            }
        }
        Ok(Decoding {
            model,
            t,
            g,
            training,
            rng: ChaCha8Rng::seed_from_u64(dropout_seed),
            enc,
            flat,
            gru_state,
        })
    }

    fn step(&mut self, ctx: &DecoderContext) -> Result<decoder::StepTensors> {
        let candidates: Vec<NodeId> = if ctx.at_source {
            vec![ctx.n_prev]
        } else {
            self.t.neighbors(ctx.n_prev)?.to_vec()
        };
        match self.model.config.variant {
            ModelVariant::DnnBaseline => baseline::baseline_step_graph(
                &mut self.g,
                &self.model.store,
                &self.model.config,
                self.flat.expect("baseline session holds a flat input"),
                &candidates,
                &ctx.remaining,
                ctx.n_prev,
                self.training,
                &mut self.rng,
            ),
            ModelVariant::GgDnn | ModelVariant::GgRnn => decoder::decode_step_graph(
                &mut self.g,
                &self.model.store,
                &self.model.config,
                self.enc.expect("graph session holds an encoding"),
                self.gru_state,
                &candidates,
                &ctx.remaining,
                ctx.n_prev,
                self.training,
                &mut self.rng,
            ),
        }
    }

    /// After choosing candidate `pos`, carry its recurrent state into the
    /// next step (GRU decoder only).
    fn commit(&mut self, st: &decoder::StepTensors, pos: usize) {
        if let Some(cs) = st.cand_states {
            self.gru_state = Some(self.g.select_rows(cs, &[pos]));
        }
    }

    fn output(&self, st: &decoder::StepTensors) -> StepOutput {
        StepOutput {
            candidates: st.candidates.clone(),
            node_probs: self.g.value(st.node_probs).row(0).to_vec(),
            proc_probs: self.g.value(st.proc_probs).data().to_vec(),
        }
    }
}
