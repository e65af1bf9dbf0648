//! The hybrid neural receiver: a transformer encoder that maps the raw
//! received resource grid to per-bit LLRs, followed by a message-passing
//! network on the code's Tanner graph that replaces the classical decoder.
//!
//! Training happens in three stages: the transformer front end first (with
//! the classical BP decoder used only to report validation error), then the
//! graph decoder with the transformer frozen, then a joint fine-tune on
//! information-bit cross entropy.

mod featurize;
mod gnn;
mod train;
mod transformer;

pub use featurize::{feat_dim_for, featurize, TokenFeatures};
pub use gnn::{build_tanner, gnn_decode, GnnParams, TannerGraph};
pub use train::{
    finetune_loss, finetune_loss_and_grads, train_stage1, train_stage2, train_stage3, MetricsRow,
    StageReport, TrainEnv, TrainOptions,
};
pub use transformer::{transformer_forward, TransformerParams};

use crate::diffcore::{Array, DiffError};
use crate::fec::Code;
use crate::phy::{FrameLayout, GridSpec, PhyError, PilotMatrix, ResourceGrid};
use crate::rng::Rng;
use std::fmt;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HnrConfig {
    pub num_blocks: usize,
    pub num_heads: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub gnn_embed_dim: usize,
    pub gnn_msg_dim: usize,
    pub gnn_hidden: usize,
    pub cn_mlp_layers: usize,
    pub mp_iters: usize,
}

impl Default for HnrConfig {
    fn default() -> Self {
        HnrConfig {
            num_blocks: 5,
            num_heads: 4,
            embed_dim: 128,
            ffn_dim: 128,
            gnn_embed_dim: 16,
            gnn_msg_dim: 16,
            gnn_hidden: 48,
            cn_mlp_layers: 3,
            mp_iters: 12,
        }
    }
}

impl HnrConfig {
    pub fn validate(&self) -> Result<(), HnrError> {
        if self.embed_dim % self.num_heads != 0 {
            return Err(HnrError::Config(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        let fields = [
            self.num_blocks,
            self.num_heads,
            self.embed_dim,
            self.ffn_dim,
            self.gnn_embed_dim,
            self.gnn_msg_dim,
            self.gnn_hidden,
            self.cn_mlp_layers,
        ];
        if fields.iter().any(|&v| v == 0) {
            return Err(HnrError::Config("all dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// A dense layer's weights and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearP {
    pub w: Array,
    pub b: Array,
}

impl LinearP {
    fn xavier(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        LinearP {
            w: Array::matrix(fan_in, fan_out, data),
            b: Array::vector(vec![0.0; fan_out]),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        LinearP {
            w: Array::zeros(vec![fan_in, fan_out]),
            b: Array::vector(vec![0.0; fan_out]),
        }
    }

    fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// A stack of dense layers; relu on all but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpP {
    pub layers: Vec<LinearP>,
}

impl MlpP {
    /// `num_layers` weight matrices: in -> hidden -> ... -> out.
    fn xavier(rng: &mut Rng, in_dim: usize, hidden: usize, out_dim: usize, num_layers: usize) -> Self {
        assert!(num_layers >= 1);
        let mut layers = Vec::with_capacity(num_layers);
        let mut d = in_dim;
        for i in 0..num_layers {
            let out = if i + 1 == num_layers { out_dim } else { hidden };
            layers.push(LinearP::xavier(rng, d, out));
            d = out;
        }
        MlpP { layers }
    }

    fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }
}

/// Everything trainable, plus the input geometry the shapes depend on.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: HnrConfig,
    /// Token feature dimension (2 per receive antenna + 5).
    pub feat_dim: usize,
    /// Logits per data token = bits per modulation symbol.
    pub bits_per_symbol: usize,
    pub transformer: TransformerParams,
    pub gnn: GnnParams,
}

impl Model {
    /// Fresh model. Output heads start at zero so an untrained model emits
    /// zero LLRs (uninformed bits, BCE = ln 2).
    pub fn init(
        config: &HnrConfig,
        feat_dim: usize,
        bits_per_symbol: usize,
        seed: u64,
    ) -> Result<Self, HnrError> {
        config.validate()?;
        let mut rng = Rng::from_stream(seed, crate::rng::stream::MODEL_INIT, 0);
        let transformer = TransformerParams::init(config, feat_dim, bits_per_symbol, &mut rng);
        let gnn = GnnParams::init(config, &mut rng);
        Ok(Model {
            config: config.clone(),
            feat_dim,
            bits_per_symbol,
            transformer,
            gnn,
        })
    }

    /// Visit every parameter as (name, array), transformer first, in a
    /// stable order shared by the optimizer and the checkpoint format.
    pub fn visit(&self, mut f: impl FnMut(&str, &Array)) {
        self.transformer.visit(&mut f);
        self.gnn.visit(&mut f);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Array)) {
        self.transformer.visit_mut(&mut f);
        self.gnn.visit_mut(&mut f);
    }

    pub fn param_count(&self) -> usize {
        self.transformer.param_count() + self.gnn.param_count()
    }
}

/// Closed-form trainable parameter count. The GNN shares one parameter set
/// per function class across all nodes and edges, so the total depends only
/// on the architecture and token geometry, never on the code size.
pub fn expected_param_count(config: &HnrConfig, feat_dim: usize, bits_per_symbol: usize) -> usize {
    let d = config.embed_dim;
    let h = config.ffn_dim;
    let g = config.gnn_embed_dim;
    let msg = config.gnn_msg_dim;
    let hid = config.gnn_hidden;

    let input = feat_dim * d + d;
    let per_block = 4 * (d * d + d)      // q, k, v, o projections
        + 2 * 2 * d                      // two layer-norm affine pairs
        + (d * h + h) + (h * d + d); // feed-forward
    let head = d * bits_per_symbol + bits_per_symbol;
    let tfm = input + config.num_blocks * per_block + head;

    let edge_in = 2 * g + g;
    let edge_mlp = (edge_in * hid + hid) + (hid * msg + msg);
    let node_in = g + msg + 1;
    let node_v = (node_in * hid + hid) + (hid * g + g);
    let node_c = {
        // cn_mlp_layers weight matrices: node_in -> hid -> ... -> g
        let mut total = 0;
        let mut din = node_in;
        for i in 0..config.cn_mlp_layers {
            let dout = if i + 1 == config.cn_mlp_layers { g } else { hid };
            total += din * dout + dout;
            din = dout;
        }
        total
    };
    let gnn = (g + g)                    // llr projection [1,g] + bias
        + 2 * g                          // two shared edge feature vectors
        + 2 * edge_mlp
        + node_v
        + node_c
        + (g + 1); // readout
    tfm + gnn
}

#[derive(Debug)]
pub enum HnrError {
    Config(String),
    Shape(String),
    /// Tanner graph construction found a disconnected node.
    Unconnected { kind: &'static str, index: usize },
    Diff(DiffError),
    Phy(PhyError),
    /// Training aborted: the loss became non-finite at this step.
    Diverged { step: usize },
}

impl fmt::Display for HnrError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HnrError::Config(s) => write!(f, "invalid model config: {s}"),
            HnrError::Shape(s) => write!(f, "shape mismatch: {s}"),
            HnrError::Unconnected { kind, index } => {
                write!(f, "{kind} node {index} has no edges")
            }
            HnrError::Diff(e) => write!(f, "{e}"),
            HnrError::Phy(e) => write!(f, "{e}"),
            HnrError::Diverged { step } => write!(f, "training diverged at step {step}"),
        }
    }
}

impl std::error::Error for HnrError {}

impl From<DiffError> for HnrError {
    fn from(e: DiffError) -> Self {
        HnrError::Diff(e)
    }
}

impl From<PhyError> for HnrError {
    fn from(e: PhyError) -> Self {
        HnrError::Phy(e)
    }
}

/// Full receive path: featurize -> transformer LLRs -> per-codeword graph
/// decoding -> hard threshold -> systematic info extraction.
pub fn hnr_receive(
    rx: &ResourceGrid,
    noise_var: f64,
    spec: &GridSpec,
    pilots: &PilotMatrix,
    graph: &TannerGraph,
    model: &Model,
    code: &Code,
    layout: &FrameLayout,
) -> Result<crate::rxclassic::RxOutput, HnrError> {
    let tokens = featurize(rx, noise_var, spec, pilots)?;
    let llr_frame = transformer_forward(&tokens, &model.transformer, &model.config)?;
    let n = code.n();
    if graph.num_vn != n {
        return Err(HnrError::Shape(format!(
            "graph has {} variable nodes, code length is {n}",
            graph.num_vn
        )));
    }
    let mut out = crate::rxclassic::RxOutput {
        info_bits: Vec::with_capacity(layout.codewords_per_frame * code.k()),
        coded_bits: Vec::with_capacity(layout.codewords_per_frame * n),
        cw_success: Vec::with_capacity(layout.codewords_per_frame),
        iterations: Vec::with_capacity(layout.codewords_per_frame),
    };
    for cw in 0..layout.codewords_per_frame {
        let llrs = &llr_frame[cw * n..(cw + 1) * n];
        let probs = gnn_decode(llrs, graph, &model.gnn, &model.config, model.config.mp_iters)?;
        let bits: Vec<u8> = probs.iter().map(|&p| if p > 0.5 { 1 } else { 0 }).collect();
        let synd_ok = crate::fec::syndrome(&bits, &code.h)
            .map(|s| s.iter().all(|&x| x == 0))
            .unwrap_or(false);
        out.info_bits.extend(code.gen.extract_info(&bits));
        out.coded_bits.extend(bits);
        out.cw_success.push(synd_ok);
        out.iterations.push(model.config.mp_iters);
    }
    Ok(out)
}
