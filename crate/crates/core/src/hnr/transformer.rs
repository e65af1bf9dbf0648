//! Transformer LLR front end: input projection, pre-norm encoder blocks with
//! multi-head self-attention (scores scaled by 1/sqrt(d_k)) and a relu
//! feed-forward, and a dense head emitting log2(Q) LLRs per data token.
//!
//! Head outputs follow the repo LLR convention (positive means bit 0), and
//! data tokens are gathered in placement order, so flattening the output
//! row-major yields the frame's coded-bit LLR stream directly.

use std::sync::Arc;

use super::featurize::TokenFeatures;
use super::{HnrConfig, HnrError, LinearP};
use crate::diffcore::{DiffError, NodeId, Tape};
use crate::rng::Rng;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub ln1_gamma: crate::diffcore::Array,
    pub ln1_beta: crate::diffcore::Array,
    pub wq: LinearP,
    pub wk: LinearP,
    pub wv: LinearP,
    pub wo: LinearP,
    pub ln2_gamma: crate::diffcore::Array,
    pub ln2_beta: crate::diffcore::Array,
    pub ffn1: LinearP,
    pub ffn2: LinearP,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerParams {
    pub input: LinearP,
    pub blocks: Vec<BlockParams>,
    pub head: LinearP,
}

impl TransformerParams {
    pub fn init(cfg: &HnrConfig, feat_dim: usize, bits_per_symbol: usize, rng: &mut Rng) -> Self {
        let d = cfg.embed_dim;
        let ones = |n: usize| crate::diffcore::Array::vector(vec![1.0; n]);
        let zeros = |n: usize| crate::diffcore::Array::vector(vec![0.0; n]);
        let blocks = (0..cfg.num_blocks)
            .map(|_| BlockParams {
                ln1_gamma: ones(d),
                ln1_beta: zeros(d),
                wq: LinearP::xavier(rng, d, d),
                wk: LinearP::xavier(rng, d, d),
                wv: LinearP::xavier(rng, d, d),
                wo: LinearP::xavier(rng, d, d),
                ln2_gamma: ones(d),
                ln2_beta: zeros(d),
                ffn1: LinearP::xavier(rng, d, cfg.ffn_dim),
                ffn2: LinearP::xavier(rng, cfg.ffn_dim, d),
            })
            .collect();
        TransformerParams {
            input: LinearP::xavier(rng, feat_dim, d),
            blocks,
            // zero head: an untrained model emits zero LLRs
            head: LinearP::zeros(d, bits_per_symbol),
        }
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, &crate::diffcore::Array)) {
        f("tfm.input.w", &self.input.w);
        f("tfm.input.b", &self.input.b);
        for (i, b) in self.blocks.iter().enumerate() {
            let name = |part: &str| format!("tfm.block{i}.{part}");
            f(&name("ln1.gamma"), &b.ln1_gamma);
            f(&name("ln1.beta"), &b.ln1_beta);
            f(&name("wq.w"), &b.wq.w);
            f(&name("wq.b"), &b.wq.b);
            f(&name("wk.w"), &b.wk.w);
            f(&name("wk.b"), &b.wk.b);
            f(&name("wv.w"), &b.wv.w);
            f(&name("wv.b"), &b.wv.b);
            f(&name("wo.w"), &b.wo.w);
            f(&name("wo.b"), &b.wo.b);
            f(&name("ln2.gamma"), &b.ln2_gamma);
            f(&name("ln2.beta"), &b.ln2_beta);
            f(&name("ffn1.w"), &b.ffn1.w);
            f(&name("ffn1.b"), &b.ffn1.b);
            f(&name("ffn2.w"), &b.ffn2.w);
            f(&name("ffn2.b"), &b.ffn2.b);
        }
        f("tfm.head.w", &self.head.w);
        f("tfm.head.b", &self.head.b);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut crate::diffcore::Array)) {
        f("tfm.input.w", &mut self.input.w);
        f("tfm.input.b", &mut self.input.b);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let prefix = format!("tfm.block{i}");
            f(&format!("{prefix}.ln1.gamma"), &mut b.ln1_gamma);
            f(&format!("{prefix}.ln1.beta"), &mut b.ln1_beta);
            f(&format!("{prefix}.wq.w"), &mut b.wq.w);
            f(&format!("{prefix}.wq.b"), &mut b.wq.b);
            f(&format!("{prefix}.wk.w"), &mut b.wk.w);
            f(&format!("{prefix}.wk.b"), &mut b.wk.b);
            f(&format!("{prefix}.wv.w"), &mut b.wv.w);
            f(&format!("{prefix}.wv.b"), &mut b.wv.b);
            f(&format!("{prefix}.wo.w"), &mut b.wo.w);
            f(&format!("{prefix}.wo.b"), &mut b.wo.b);
            f(&format!("{prefix}.ln2.gamma"), &mut b.ln2_gamma);
            f(&format!("{prefix}.ln2.beta"), &mut b.ln2_beta);
            f(&format!("{prefix}.ffn1.w"), &mut b.ffn1.w);
            f(&format!("{prefix}.ffn1.b"), &mut b.ffn1.b);
            f(&format!("{prefix}.ffn2.w"), &mut b.ffn2.w);
            f(&format!("{prefix}.ffn2.b"), &mut b.ffn2.b);
        }
        f("tfm.head.w", &mut self.head.w);
        f("tfm.head.b", &mut self.head.b);
    }

    pub fn param_count(&self) -> usize {
        let mut total = self.input.param_count() + self.head.param_count();
        for b in &self.blocks {
            total += b.ln1_gamma.len()
                + b.ln1_beta.len()
                + b.wq.param_count()
                + b.wk.param_count()
                + b.wv.param_count()
                + b.wo.param_count()
                + b.ln2_gamma.len()
                + b.ln2_beta.len()
                + b.ffn1.param_count()
                + b.ffn2.param_count();
        }
        total
    }

    /// Mutable parameter tensors in `visit` order.
    pub fn params_mut(&mut self) -> Vec<&mut crate::diffcore::Array> {
        let mut v: Vec<&mut crate::diffcore::Array> =
            vec![&mut self.input.w, &mut self.input.b];
        for b in &mut self.blocks {
            v.push(&mut b.ln1_gamma);
            v.push(&mut b.ln1_beta);
            v.push(&mut b.wq.w);
            v.push(&mut b.wq.b);
            v.push(&mut b.wk.w);
            v.push(&mut b.wk.b);
            v.push(&mut b.wv.w);
            v.push(&mut b.wv.b);
            v.push(&mut b.wo.w);
            v.push(&mut b.wo.b);
            v.push(&mut b.ln2_gamma);
            v.push(&mut b.ln2_beta);
            v.push(&mut b.ffn1.w);
            v.push(&mut b.ffn1.b);
            v.push(&mut b.ffn2.w);
            v.push(&mut b.ffn2.b);
        }
        v.push(&mut self.head.w);
        v.push(&mut self.head.b);
        v
    }
}

/// Tape node ids of the pushed parameters, in `visit` order.
pub(crate) struct TfmNodes {
    pub ids: Vec<NodeId>,
}

impl TfmNodes {
    fn linear(&self, at: &mut usize) -> (NodeId, NodeId) {
        let w = self.ids[*at];
        let b = self.ids[*at + 1];
        *at += 2;
        (w, b)
    }

    fn single(&self, at: &mut usize) -> NodeId {
        let v = self.ids[*at];
        *at += 1;
        v
    }
}

pub(crate) fn push_transformer(
    tape: &mut Tape,
    params: &TransformerParams,
    trainable: bool,
) -> Result<TfmNodes, DiffError> {
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
        None => Ok(TfmNodes { ids }),
    }
}

fn ln_affine(
    tape: &mut Tape,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
) -> Result<NodeId, DiffError> {
    let normed = tape.layer_norm(x, LAYER_NORM_EPS)?;
    let scaled = tape.mul(normed, gamma)?;
    tape.add(scaled, beta)
}

/// Apply the transformer to a [T, F] token leaf, returning the [D, B] LLR
/// node over data tokens. `completed_blocks` is updated as encoder blocks
/// finish, so error paths can name the block that failed.
pub(crate) fn transformer_apply(
    tape: &mut Tape,
    nodes: &TfmNodes,
    cfg: &HnrConfig,
    tokens: NodeId,
    data_token_idx: &Arc<Vec<usize>>,
    completed_blocks: &mut usize,
) -> Result<NodeId, DiffError> {
    let heads = cfg.num_heads;
    let dh = cfg.embed_dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut at = 0usize;
    let (in_w, in_b) = nodes.linear(&mut at);
    let mut x = tape.linear(tokens, in_w, in_b, false)?;

    *completed_blocks = 0;
    for _ in 0..cfg.num_blocks {
        let ln1_g = nodes.single(&mut at);
        let ln1_b = nodes.single(&mut at);
        let (qw, qb) = nodes.linear(&mut at);
        let (kw, kb) = nodes.linear(&mut at);
        let (vw, vb) = nodes.linear(&mut at);
        let (ow, ob) = nodes.linear(&mut at);
        let ln2_g = nodes.single(&mut at);
        let ln2_b = nodes.single(&mut at);
        let (f1w, f1b) = nodes.linear(&mut at);
        let (f2w, f2b) = nodes.linear(&mut at);

        let h = ln_affine(tape, x, ln1_g, ln1_b)?;
        let q = tape.linear(h, qw, qb, false)?;
        let k = tape.linear(h, kw, kb, false)?;
        let v = tape.linear(h, vw, vb, false)?;
        let mut head_outs = Vec::with_capacity(heads);
        for hi in 0..heads {
            let qh = tape.slice_cols(q, hi * dh, dh)?;
            let kh = tape.slice_cols(k, hi * dh, dh)?;
            let vh = tape.slice_cols(v, hi * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scaled = tape.scale(scores, scale)?;
            let attn = tape.softmax(scaled)?;
            head_outs.push(tape.matmul(attn, vh)?);
        }
        let cat = tape.concat_cols(&head_outs)?;
        let o = tape.linear(cat, ow, ob, false)?;
        x = tape.add(x, o)?;

        let h2 = ln_affine(tape, x, ln2_g, ln2_b)?;
        let f = tape.linear(h2, f1w, f1b, true)?;
        let f = tape.linear(f, f2w, f2b, false)?;
        x = tape.add(x, f)?;
        *completed_blocks += 1;
    }

    let (hw, hb) = nodes.linear(&mut at);
    let llr_all = tape.linear(x, hw, hb, false)?;
    tape.gather_rows(llr_all, data_token_idx)
}

/// Inference: per-bit LLRs of the frame's coded stream, in frame order.
/// Non-finite activations are rejected with the offending block index.
pub fn transformer_forward(
    tokens: &TokenFeatures,
    params: &TransformerParams,
    cfg: &HnrConfig,
) -> Result<Vec<f64>, HnrError> {
    cfg.validate()?;
    let mut tape = Tape::new();
    let nodes = push_transformer(&mut tape, params, false)?;
    let tok =
        tape.leaf_data(tokens.num_tokens, tokens.feat_dim, &tokens.features, false)?;
    let mut done = 0usize;
    match transformer_apply(&mut tape, &nodes, cfg, tok, &tokens.data_token_idx, &mut done) {
        Ok(out) => Ok(tape.value(out).to_vec()),
        Err(DiffError::NonFinite { .. }) => Err(HnrError::Config(format!(
            "non-finite activation in encoder block {done}"
        ))),
        Err(e) => Err(e.into()),
    }
}
