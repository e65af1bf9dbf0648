//! Message-passing decoder on the code's Tanner graph.
//!
//! Variable-node embeddings start from a learned projection of the channel
//! LLR (the LLR itself stays attached as the node feature); check-node
//! embeddings start at zero. Each iteration sends learned edge messages from
//! variables to checks, updates the checks with the sum of incoming
//! messages, sends the reverse messages, and updates the variables. All
//! edges share one parameter set per direction and all nodes one per side,
//! so the parameter count is independent of the code.

use std::sync::Arc;

use super::{HnrConfig, HnrError, LinearP, MlpP};
use crate::diffcore::{Array, DiffError, NodeId, Tape};
use crate::fec::ParityCheckMatrix;
use crate::rng::Rng;

/// Bipartite graph view of a parity-check matrix. Edge order is check-major
/// (row by row, ascending column within a row).
#[derive(Clone, Debug, PartialEq)]
pub struct TannerGraph {
    pub num_vn: usize,
    pub num_cn: usize,
    /// Variable node of each edge.
    pub edge_vn: Arc<Vec<usize>>,
    /// Check node of each edge.
    pub edge_cn: Arc<Vec<usize>>,
}

impl TannerGraph {
    pub fn num_edges(&self) -> usize {
        self.edge_vn.len()
    }
}

/// Build the graph from H. Every bit must participate in at least one check
/// and every check must involve at least one bit.
pub fn build_tanner(h: &ParityCheckMatrix) -> Result<TannerGraph, HnrError> {
    for c in 0..h.n {
        if h.col(c).is_empty() {
            return Err(HnrError::Unconnected { kind: "variable", index: c });
        }
    }
    let mut edge_vn = Vec::with_capacity(h.num_edges());
    let mut edge_cn = Vec::with_capacity(h.num_edges());
    for r in 0..h.m {
        if h.row(r).is_empty() {
            return Err(HnrError::Unconnected { kind: "check", index: r });
        }
        for &v in h.row(r) {
            edge_vn.push(v);
            edge_cn.push(r);
        }
    }
    Ok(TannerGraph {
        num_vn: h.n,
        num_cn: h.m,
        edge_vn: Arc::new(edge_vn),
        edge_cn: Arc::new(edge_cn),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnParams {
    pub llr_proj: LinearP,
    /// Shared edge feature vectors, one per message direction.
    pub gamma_vc: Array,
    pub gamma_cv: Array,
    pub edge_vc: MlpP,
    pub edge_cv: MlpP,
    pub node_v: MlpP,
    pub node_c: MlpP,
    pub readout: LinearP,
}

impl GnnParams {
    pub fn init(cfg: &HnrConfig, rng: &mut Rng) -> Self {
        let g = cfg.gnn_embed_dim;
        let msg = cfg.gnn_msg_dim;
        let hid = cfg.gnn_hidden;
        let edge_in = 3 * g;
        let node_in = g + msg + 1;
        let small = |rng: &mut Rng, n: usize| {
            Array::vector((0..n).map(|_| rng.uniform_range(-0.1, 0.1)).collect())
        };
        GnnParams {
            llr_proj: LinearP::xavier(rng, 1, g),
            gamma_vc: small(rng, g),
            gamma_cv: small(rng, g),
            edge_vc: MlpP::xavier(rng, edge_in, hid, msg, 2),
            edge_cv: MlpP::xavier(rng, edge_in, hid, msg, 2),
            node_v: MlpP::xavier(rng, node_in, hid, g, 2),
            node_c: MlpP::xavier(rng, node_in, hid, g, cfg.cn_mlp_layers),
            // zero readout: an untrained decoder outputs probability 1/2
            readout: LinearP::zeros(g, 1),
        }
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, &Array)) {
        f("gnn.llr_proj.w", &self.llr_proj.w);
        f("gnn.llr_proj.b", &self.llr_proj.b);
        f("gnn.gamma_vc", &self.gamma_vc);
        f("gnn.gamma_cv", &self.gamma_cv);
        for (name, mlp) in [
            ("edge_vc", &self.edge_vc),
            ("edge_cv", &self.edge_cv),
            ("node_v", &self.node_v),
            ("node_c", &self.node_c),
        ] {
            for (i, layer) in mlp.layers.iter().enumerate() {
                f(&format!("gnn.{name}.l{i}.w"), &layer.w);
                f(&format!("gnn.{name}.l{i}.b"), &layer.b);
            }
        }
        f("gnn.readout.w", &self.readout.w);
        f("gnn.readout.b", &self.readout.b);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut Array)) {
        f("gnn.llr_proj.w", &mut self.llr_proj.w);
        f("gnn.llr_proj.b", &mut self.llr_proj.b);
        f("gnn.gamma_vc", &mut self.gamma_vc);
        f("gnn.gamma_cv", &mut self.gamma_cv);
        for (name, mlp) in [
            ("edge_vc", &mut self.edge_vc),
            ("edge_cv", &mut self.edge_cv),
            ("node_v", &mut self.node_v),
            ("node_c", &mut self.node_c),
        ] {
            for (i, layer) in mlp.layers.iter_mut().enumerate() {
                f(&format!("gnn.{name}.l{i}.w"), &mut layer.w);
                f(&format!("gnn.{name}.l{i}.b"), &mut layer.b);
            }
        }
        f("gnn.readout.w", &mut self.readout.w);
        f("gnn.readout.b", &mut self.readout.b);
    }

    pub fn param_count(&self) -> usize {
        self.llr_proj.param_count()
            + self.gamma_vc.len()
            + self.gamma_cv.len()
            + self.edge_vc.param_count()
            + self.edge_cv.param_count()
            + self.node_v.param_count()
            + self.node_c.param_count()
            + self.readout.param_count()
    }

    /// Mutable parameter tensors in `visit` order.
    pub fn params_mut(&mut self) -> Vec<&mut Array> {
        let mut v: Vec<&mut Array> = vec![
            &mut self.llr_proj.w,
            &mut self.llr_proj.b,
            &mut self.gamma_vc,
            &mut self.gamma_cv,
        ];
        for mlp in [
            &mut self.edge_vc,
            &mut self.edge_cv,
            &mut self.node_v,
            &mut self.node_c,
        ] {
            for layer in &mut mlp.layers {
                v.push(&mut layer.w);
                v.push(&mut layer.b);
            }
        }
        v.push(&mut self.readout.w);
        v.push(&mut self.readout.b);
        v
    }
}

/// Tape node ids of the pushed parameters, in `visit` order.
pub(crate) struct GnnNodes {
    pub ids: Vec<NodeId>,
}

pub(crate) fn push_gnn(
    tape: &mut Tape,
    params: &GnnParams,
    trainable: bool,
) -> Result<GnnNodes, DiffError> {
    let mut ids = Vec::new();
    let mut err = None;
    params.visit(&mut |_, arr| {
        if err.is_some() {
            return;
        }
        let mut a = arr.clone();
        a.requires_grad = trainable;
        match tape.leaf(&a) {
            Ok(id) => ids.push(id),
            Err(e) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(GnnNodes { ids }),
    }
}

struct GnnIdx {
    llr_proj: (NodeId, NodeId),
    gamma_vc: NodeId,
    gamma_cv: NodeId,
    edge_vc: Vec<(NodeId, NodeId)>,
    edge_cv: Vec<(NodeId, NodeId)>,
    node_v: Vec<(NodeId, NodeId)>,
    node_c: Vec<(NodeId, NodeId)>,
    readout: (NodeId, NodeId),
}

fn index_nodes(params: &GnnParams, nodes: &GnnNodes) -> GnnIdx {
    fn take(ids: &[NodeId], at: &mut usize) -> NodeId {
        let v = ids[*at];
        *at += 1;
        v
    }
    fn take_mlp(m: &MlpP, ids: &[NodeId], at: &mut usize) -> Vec<(NodeId, NodeId)> {
        m.layers.iter().map(|_| (take(ids, at), take(ids, at))).collect()
    }
    let ids = &nodes.ids;
    let mut at = 0usize;
    let llr_proj = (take(ids, &mut at), take(ids, &mut at));
    let gamma_vc = take(ids, &mut at);
    let gamma_cv = take(ids, &mut at);
    let edge_vc = take_mlp(&params.edge_vc, ids, &mut at);
    let edge_cv = take_mlp(&params.edge_cv, ids, &mut at);
    let node_v = take_mlp(&params.node_v, ids, &mut at);
    let node_c = take_mlp(&params.node_c, ids, &mut at);
    let readout = (take(ids, &mut at), take(ids, &mut at));
    GnnIdx { llr_proj, gamma_vc, gamma_cv, edge_vc, edge_cv, node_v, node_c, readout }
}

fn apply_mlp(tape: &mut Tape, layers: &[(NodeId, NodeId)], mut x: NodeId) -> Result<NodeId, DiffError> {
    for (i, &(w, b)) in layers.iter().enumerate() {
        let relu = i + 1 < layers.len();
        x = tape.linear(x, w, b, relu)?;
    }
    Ok(x)
}

/// Run `iters` message-passing rounds on the tape; returns the [n, 1] node
/// of per-bit logits where sigmoid(logit) is the bit-1 probability.
pub(crate) fn gnn_apply(
    tape: &mut Tape,
    params: &GnnParams,
    nodes: &GnnNodes,
    graph: &TannerGraph,
    llrs: NodeId,
    iters: usize,
) -> Result<NodeId, DiffError> {
    let idx = index_nodes(params, nodes);

    // initial embeddings: learned projection of the LLR; zero for checks
    let mut z_v = tape.linear(llrs, idx.llr_proj.0, idx.llr_proj.1, false)?;
    let g_dim = tape.shape(z_v).1;
    let zc0 = Array::zeros(vec![graph.num_cn, g_dim]);
    let mut z_c = tape.leaf(&zc0)?;
    // node features: the raw LLR for variables, zero for checks
    let delta_v = llrs;
    let delta_c = tape.leaf(&Array::zeros(vec![graph.num_cn, 1]))?;

    for _ in 0..iters {
        // variable -> check messages
        let cat = tape.edge_concat(z_v, z_c, idx.gamma_vc, &graph.edge_vn, &graph.edge_cn)?;
        let msg_vc = apply_mlp(tape, &idx.edge_vc, cat)?;

        // check update with sum aggregation
        let agg_c = tape.scatter_sum_rows(msg_vc, &graph.edge_cn, graph.num_cn)?;
        let cat_c = tape.concat_cols(&[z_c, agg_c, delta_c])?;
        z_c = apply_mlp(tape, &idx.node_c, cat_c)?;

        // check -> variable messages
        let cat = tape.edge_concat(z_c, z_v, idx.gamma_cv, &graph.edge_cn, &graph.edge_vn)?;
        let msg_cv = apply_mlp(tape, &idx.edge_cv, cat)?;

        // variable update
        let agg_v = tape.scatter_sum_rows(msg_cv, &graph.edge_vn, graph.num_vn)?;
        let cat_v = tape.concat_cols(&[z_v, agg_v, delta_v])?;
        z_v = apply_mlp(tape, &idx.node_v, cat_v)?;
    }

    apply_mlp(tape, &[idx.readout], z_v)
}

/// Decode one codeword's LLRs to per-bit probabilities of bit = 1.
pub fn gnn_decode(
    llrs: &[f64],
    graph: &TannerGraph,
    params: &GnnParams,
    cfg: &HnrConfig,
    iters: usize,
) -> Result<Vec<f64>, HnrError> {
    cfg.validate()?;
    if llrs.len() != graph.num_vn {
        return Err(HnrError::Shape(format!(
            "{} LLRs for {} variable nodes",
            llrs.len(),
            graph.num_vn
        )));
    }
    let mut tape = Tape::new();
    let nodes = push_gnn(&mut tape, params, false)?;
    let llr_node = tape.leaf_data(graph.num_vn, 1, llrs, false)?;
    let logits = gnn_apply(&mut tape, params, &nodes, graph, llr_node, iters)?;
    let probs = tape.sigmoid(logits)?;
    Ok(tape.value(probs).to_vec())
}
