//! The heterogeneous graph attention layer.
//!
//! One forward pass is a sender phase followed by a receiver phase. Each
//! sender projects its feature through the channel weight of every edge
//! type it participates in and drops the result into the receiver's
//! per-edge-type mailbox. Each receiver scores its mailbox with an
//! edge-type-specific attention vector, softmax-normalizes the scores over
//! neighbors of that same edge type, aggregates, sums the per-edge-type
//! aggregates with its own self-projection and applies the activation:
//!
//!   h'_j = act( W_self[i] h_j + sum_e sum_{k in N_e(j)} alpha_jk^e W_e h_k )
//!
//! with  alpha^e = softmax_k( leaky_relu( a_dst^e . (W_self[i] h_j)
//!                                      + a_src^e . (W_e h_k) ) ).
//!
//! `K` independent heads run in parallel; hidden layers concatenate head
//! outputs (activation applied per head), the final layer averages raw
//! head outputs. Self-loops are not edges: the self term lives inside the
//! update. An edge type with an empty mailbox contributes nothing, so an
//! isolated node still updates through its self term.

use rand_chacha::ChaCha8Rng;

use crate::hetgraph::{GraphTopology, HetGraph};
use crate::mat::Mat;
use crate::nn::{Init, ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// How multi-head outputs are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Merge {
    /// Hidden layers: concatenate per-head activated outputs.
    Concat,
    /// Final layer: average raw head outputs.
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Identity,
}

pub const LEAKY_SLOPE: f64 = 0.2;

/// Instrumentation for one forward pass: how many tape operations were
/// spent on the SSN (its self projection, incoming channels, and merge).
/// Execution-mode graphs carry no SSN, so this must stay at zero there.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardStats {
    pub ssn_ops: usize,
}

/// Parameters of one attention head: a self weight per node type plus a
/// channel weight and split attention vector per edge type. The channel
/// weight of edge type (src -> dst) maps the source input width to the
/// destination's output width, so mailbox messages and the receiver's
/// self-projection can be summed.
pub struct HeadParams {
    pub self_w: Vec<ParamId>,
    pub edge_w: Vec<ParamId>,
    pub attn_dst: Vec<ParamId>,
    pub attn_src: Vec<ParamId>,
}

/// One multi-head HetGAT layer over a fixed set of node and edge types.
/// The layer is built for the training-mode type table (agent classes plus
/// SSN); execution graphs simply use the agent-only prefix.
pub struct HetGatLayer {
    pub in_dims: Vec<usize>,
    pub out_dims: Vec<usize>,
    pub edge_types: Vec<(usize, usize)>,
    pub heads: Vec<HeadParams>,
    pub merge: Merge,
    pub activation: Activation,
}

impl HetGatLayer {
    /// Allocate parameters for `k_heads` heads. `type_names` and
    /// `edge_names` only feed parameter naming.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dims: &[usize],
        out_dims: &[usize],
        edge_types: &[(usize, usize)],
        type_names: &[String],
        edge_names: &[String],
        k_heads: usize,
        merge: Merge,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert_eq!(in_dims.len(), out_dims.len());
        assert!(k_heads >= 1);
        let mut heads = Vec::with_capacity(k_heads);
        for h in 0..k_heads {
            let self_w = (0..in_dims.len())
                .map(|t| {
                    store.alloc(
                        &format!("{name}.h{h}.self.{}", type_names[t]),
                        in_dims[t],
                        out_dims[t],
                        Init::UniformFanIn,
                        rng,
                    )
                })
                .collect();
            let mut edge_w = Vec::with_capacity(edge_types.len());
            let mut attn_dst = Vec::with_capacity(edge_types.len());
            let mut attn_src = Vec::with_capacity(edge_types.len());
            for (ei, &(src, dst)) in edge_types.iter().enumerate() {
                edge_w.push(store.alloc(
                    &format!("{name}.h{h}.edge.{}", edge_names[ei]),
                    in_dims[src],
                    out_dims[dst],
                    Init::UniformFanIn,
                    rng,
                ));
                attn_dst.push(store.alloc(
                    &format!("{name}.h{h}.attn_dst.{}", edge_names[ei]),
                    out_dims[dst],
                    1,
                    Init::UniformFanIn,
                    rng,
                ));
                attn_src.push(store.alloc(
                    &format!("{name}.h{h}.attn_src.{}", edge_names[ei]),
                    out_dims[dst],
                    1,
                    Init::UniformFanIn,
                    rng,
                ));
            }
            heads.push(HeadParams {
                self_w,
                edge_w,
                attn_dst,
                attn_src,
            });
        }
        HetGatLayer {
            in_dims: in_dims.to_vec(),
            out_dims: out_dims.to_vec(),
            edge_types: edge_types.to_vec(),
            heads,
            merge,
            activation,
        }
    }

    pub fn k_heads(&self) -> usize {
        self.heads.len()
    }

    /// Output width per node type after head merging.
    pub fn merged_out_dim(&self, node_type: usize) -> usize {
        match self.merge {
            Merge::Concat => self.out_dims[node_type] * self.heads.len(),
            Merge::Average => self.out_dims[node_type],
        }
    }

    fn check_topology(&self, topo: &GraphTopology) {
        assert!(
            topo.n_node_types() <= self.in_dims.len(),
            "topology has more node types than the layer"
        );
        for (ei, &(src, dst)) in topo.edge_types.iter().enumerate() {
            assert_eq!(
                self.edge_types[ei],
                (src, dst),
                "edge type table mismatch at {ei}"
            );
        }
    }

    /// Raw (pre-merge, pre-activation) output of one head for every node
    /// type present in the topology.
    fn head_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        topo: &GraphTopology,
        features: &[Var],
        head: usize,
        stats: &mut ForwardStats,
    ) -> Vec<Var> {
        let hp = &self.heads[head];
        let nt = topo.n_node_types();
        let ssn = topo.ssn_type();
        let self_proj: Vec<Var> = (0..nt)
            .map(|t| {
                let before = tape.len();
                let w = tape.param(store, hp.self_w[t]);
                let p = tape.matmul(features[t], w);
                if Some(t) == ssn {
                    stats.ssn_ops += tape.len() - before;
                }
                p
            })
            .collect();
        let mut agg: Vec<Option<Var>> = vec![None; nt];
        for (ei, &(src, dst)) in topo.edge_types.iter().enumerate() {
            if topo.edges[ei].is_empty() {
                continue; // empty mailbox: contributes nothing
            }
            let before = tape.len();
            let w = tape.param(store, hp.edge_w[ei]);
            let messages = tape.matmul(features[src], w);
            let a_dst = tape.param(store, hp.attn_dst[ei]);
            let a_src = tape.param(store, hp.attn_src[ei]);
            let dst_score = tape.matmul(self_proj[dst], a_dst);
            let src_score = tape.matmul(messages, a_src);
            let logits = tape.outer_add(dst_score, src_score);
            let logits = tape.leaky_relu(logits, LEAKY_SLOPE);
            let alpha = tape.masked_row_softmax(logits, topo.mask(ei));
            let pulled = tape.matmul(alpha, messages);
            agg[dst] = Some(match agg[dst] {
                Some(acc) => tape.add(acc, pulled),
                None => pulled,
            });
            if Some(dst) == ssn {
                stats.ssn_ops += tape.len() - before;
            }
        }
        (0..nt)
            .map(|t| {
                let before = tape.len();
                let out = match agg[t] {
                    Some(a) => tape.add(self_proj[t], a),
                    None => self_proj[t],
                };
                if Some(t) == ssn {
                    stats.ssn_ops += tape.len() - before;
                }
                out
            })
            .collect()
    }

    fn activate(&self, tape: &mut Tape, v: Var) -> Var {
        match self.activation {
            Activation::Elu => tape.elu(v),
            Activation::Identity => v,
        }
    }

    /// Multi-head forward over tape variables; returns one merged output
    /// per node type present in the topology.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        topo: &GraphTopology,
        features: &[Var],
        stats: &mut ForwardStats,
    ) -> Vec<Var> {
        self.check_topology(topo);
        let nt = topo.n_node_types();
        debug_assert_eq!(features.len(), nt);
        let per_head: Vec<Vec<Var>> = (0..self.heads.len())
            .map(|h| self.head_forward(tape, store, topo, features, h, stats))
            .collect();
        let ssn = topo.ssn_type();
        (0..nt)
            .map(|t| {
                let before = tape.len();
                let out = match self.merge {
                    Merge::Concat => {
                        let mut act = self.activate(tape, per_head[0][t]);
                        for head in per_head.iter().skip(1) {
                            let a = self.activate(tape, head[t]);
                            act = tape.concat_cols(act, a);
                        }
                        act
                    }
                    Merge::Average => {
                        let vars: Vec<Var> = per_head.iter().map(|head| head[t]).collect();
                        let mean = tape.mean_of(&vars);
                        self.activate(tape, mean)
                    }
                };
                if Some(t) == ssn {
                    stats.ssn_ops += tape.len() - before;
                }
                out
            })
            .collect()
    }

    /// Sender phase of one head on a plain graph: per edge type, the
    /// channel-projected source features. Row `j` is the message every
    /// edge (j -> k) of that type delivers to its destination mailbox.
    /// Edge types with no edges yield `None`.
    pub fn sender_phase(
        &self,
        graph: &HetGraph,
        store: &ParamStore,
        head: usize,
    ) -> Vec<Option<Mat>> {
        self.check_topology(&graph.topo);
        let hp = &self.heads[head];
        graph
            .topo
            .edge_types
            .iter()
            .enumerate()
            .map(|(ei, &(src, _))| {
                if graph.topo.edges[ei].is_empty() {
                    None
                } else {
                    Some(graph.features[src].matmul(store.value(hp.edge_w[ei])))
                }
            })
            .collect()
    }

    /// Attention coefficients of one head for one edge type, as an
    /// (n_dst x n_src) matrix that is zero wherever no edge exists.
    pub fn attention_coefficients(
        &self,
        graph: &HetGraph,
        store: &ParamStore,
        head: usize,
        edge_type: usize,
    ) -> Mat {
        self.check_topology(&graph.topo);
        let mut tape = Tape::new();
        let features: Vec<Var> = graph
            .features
            .iter()
            .map(|f| tape.constant(f.clone()))
            .collect();
        let hp = &self.heads[head];
        let (src, dst) = graph.topo.edge_types[edge_type];
        let self_w = tape.param(store, hp.self_w[dst]);
        let u = tape.matmul(features[dst], self_w);
        let w = tape.param(store, hp.edge_w[edge_type]);
        let messages = tape.matmul(features[src], w);
        let a_dst = tape.param(store, hp.attn_dst[edge_type]);
        let a_src = tape.param(store, hp.attn_src[edge_type]);
        let dst_score = tape.matmul(u, a_dst);
        let src_score = tape.matmul(messages, a_src);
        let logits = tape.outer_add(dst_score, src_score);
        let logits = tape.leaky_relu(logits, LEAKY_SLOPE);
        let alpha = tape.masked_row_softmax(logits, graph.topo.mask(edge_type));
        tape.value(alpha).clone()
    }

    /// Receiver phase of one head on a plain graph: the updated feature per
    /// node type (activation applied, no head merging).
    pub fn receiver_phase(&self, graph: &HetGraph, store: &ParamStore, head: usize) -> Vec<Mat> {
        let mut tape = Tape::new();
        let features: Vec<Var> = graph
            .features
            .iter()
            .map(|f| tape.constant(f.clone()))
            .collect();
        let mut stats = ForwardStats::default();
        let raw = self.head_forward(&mut tape, store, &graph.topo, &features, head, &mut stats);
        raw.into_iter()
            .map(|v| {
                let a = self.activate(&mut tape, v);
                tape.value(a).clone()
            })
            .collect()
    }

    /// Full multi-head forward on a plain graph.
    pub fn multi_head_forward(&self, graph: &HetGraph, store: &ParamStore) -> Vec<Mat> {
        let mut tape = Tape::new();
        let features: Vec<Var> = graph
            .features
            .iter()
            .map(|f| tape.constant(f.clone()))
            .collect();
        let mut stats = ForwardStats::default();
        let out = self.forward_on_tape(&mut tape, store, &graph.topo, &features, &mut stats);
        out.into_iter().map(|v| tape.value(v).clone()).collect()
    }
}
