//! Three-stage training.
//!
//! Stage 1 trains the transformer front end with binary cross entropy
//! against the coded bits; the classical BP decoder only reports validation
//! error. Stage 2 freezes the transformer and trains the graph decoder,
//! also on coded bits, under a three-phase learning-rate schedule. Stage 3
//! jointly fine-tunes everything on information-bit cross entropy and keeps
//! the checkpoint with the best held-out information-bit BCE (the pre-stage
//! state is a candidate, so fine-tuning can never end worse on validation).
//!
//! Data is sampled online: each frame derives its payload, channel and
//! noise streams from the master seed and a global frame index, so runs are
//! reproducible regardless of thread count. Gradients accumulate in a fixed
//! number of batch chunks combined in chunk order, which keeps the update
//! bit-identical however many workers participate.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::featurize::featurize;
use super::gnn::{gnn_apply, push_gnn};
use super::transformer::{push_transformer, transformer_apply};
use super::{HnrError, Model, TannerGraph};
use crate::channel::{apply as channel_apply, realize, ChannelSpec};
use crate::diffcore::{NodeId, OptimKind, Optimizer, Tape};
use crate::fec::{bp_decode, encode, BpMethod, Code};
use crate::phy::{grid_map, Constellation, FrameLayout, GridSpec, PilotMatrix};
use crate::rng::{derive_seed, stream, Rng};

/// Gradients accumulate in this many fixed batch chunks, independent of the
/// worker count, so the reduction order never changes.
const GRAD_CHUNKS: usize = 8;

/// Table-scale data budgets (samples = frames), scaled by `TrainOptions::scale`.
const STAGE1_BUDGET: f64 = 12e6;
const STAGE2_BUDGET: [f64; 3] = [4e6, 40e6, 40e6];
const STAGE3_BUDGET: f64 = 1e6;

/// Everything needed to synthesize training frames.
#[derive(Clone)]
pub struct TrainEnv {
    pub grid: GridSpec,
    pub chan: ChannelSpec,
    pub constellation: Constellation,
    pub code: Code,
    pub layout: FrameLayout,
    pub graph: TannerGraph,
    pub pilots: PilotMatrix,
    /// Training SNR is drawn uniformly from this range (dB).
    pub snr_db_range: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub batch: usize,
    pub scale: f64,
    /// Explicit step overrides; `None` derives from scale and batch.
    pub stage1_steps: Option<usize>,
    pub stage2_steps: Option<[usize; 3]>,
    pub stage3_steps: Option<usize>,
    pub val_frames: usize,
    pub val_every: usize,
    pub threads: usize,
    pub master_seed: u64,
    pub stage1_lr: f64,
    pub stage1_weight_decay: f64,
    pub stage2_lrs: [f64; 3],
    pub stage3_lr: f64,
}

impl TrainOptions {
    pub fn new(master_seed: u64, scale: f64) -> Self {
        TrainOptions {
            batch: 32,
            scale,
            stage1_steps: None,
            stage2_steps: None,
            stage3_steps: None,
            val_frames: 64,
            val_every: 125,
            threads: 0,
            master_seed,
            stage1_lr: 1e-4,
            stage1_weight_decay: 0.01,
            stage2_lrs: [5e-4, 1e-4, 1e-5],
            stage3_lr: 1e-5,
        }
    }

    fn derive_steps(&self, budget: f64) -> usize {
        ((budget * self.scale) / self.batch as f64).ceil().max(1.0) as usize
    }

    pub fn stage1_step_count(&self) -> usize {
        self.stage1_steps.unwrap_or_else(|| self.derive_steps(STAGE1_BUDGET))
    }

    pub fn stage2_phase_steps(&self) -> [usize; 3] {
        self.stage2_steps.unwrap_or_else(|| {
            [
                self.derive_steps(STAGE2_BUDGET[0]),
                self.derive_steps(STAGE2_BUDGET[1]),
                self.derive_steps(STAGE2_BUDGET[2]),
            ]
        })
    }

    pub fn stage3_step_count(&self) -> usize {
        self.stage3_steps.unwrap_or_else(|| self.derive_steps(STAGE3_BUDGET))
    }

    fn worker_count(&self) -> usize {
        let avail = if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        };
        avail.clamp(1, GRAD_CHUNKS)
    }
}

/// One progress row of the training metrics CSV.
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub stage: u8,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub val_bce: Option<f64>,
    pub val_ber: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct StageReport {
    pub stage: u8,
    pub steps: usize,
    pub first_loss: f64,
    pub last_loss: f64,
    pub min_loss: f64,
    /// Held-out BCE of the stage's own objective at exit.
    pub val_bce: f64,
    /// Held-out information-bit BCE (the fine-tune objective) at exit,
    /// comparable across stages 2 and 3.
    pub val_info_bce: f64,
    /// Held-out information-bit error rate at exit.
    pub val_ber: f64,
    pub rows: Vec<MetricsRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    One,
    Two,
    Three,
}

impl Stage {
    fn id(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
            Stage::Three => 3,
        }
    }

    /// Disjoint frame-index spaces per stage.
    fn frame_offset(self) -> u64 {
        (self.id() as u64) << 40
    }
}

struct FrameSample {
    tokens: super::featurize::TokenFeatures,
    coded_bits: Vec<f64>,
    info_bits: Vec<f64>,
}

fn sample_frame(env: &TrainEnv, seed: u64) -> Result<FrameSample, HnrError> {
    let mut rng = Rng::new(seed);
    let snr_db = rng.uniform_range(env.snr_db_range[0], env.snr_db_range[1]);
    let noise_var = 10f64.powf(-snr_db / 10.0);

    let k = env.code.k();
    let mut coded = Vec::with_capacity(env.layout.used_bits());
    let mut info = Vec::with_capacity(env.layout.codewords_per_frame * k);
    for _ in 0..env.layout.codewords_per_frame {
        let bits = rng.bits(k);
        let cw = encode(&bits, &env.code.gen).map_err(|e| HnrError::Shape(e.to_string()))?;
        info.extend(bits.iter().map(|&b| b as f64));
        coded.extend(cw.bits.iter().map(|&b| b as f64));
    }
    let mut stream_bits: Vec<u8> = coded.iter().map(|&b| b as u8).collect();
    stream_bits.resize(env.layout.frame_bits, 0);
    let syms = env
        .constellation
        .map_bits(&stream_bits)
        .map_err(HnrError::Phy)?;
    let tx = grid_map(&syms, &env.pilots, &env.grid).map_err(HnrError::Phy)?;
    let real = realize(&env.chan, &env.grid, noise_var, derive_seed(seed, stream::CHANNEL, 0))
        .map_err(|e| HnrError::Shape(e.to_string()))?;
    let rx = channel_apply(&tx, &real, derive_seed(seed, stream::NOISE, 0))
        .map_err(|e| HnrError::Shape(e.to_string()))?;
    let tokens = featurize(&rx, noise_var, &env.grid, &env.pilots)?;
    Ok(FrameSample { tokens, coded_bits: coded, info_bits: info })
}

/// Build the loss graph for one frame. Returns the loss node and the
/// trainable parameter nodes in optimizer order.
fn frame_loss(
    tape: &mut Tape,
    env: &TrainEnv,
    model: &Model,
    stage: Stage,
    sample: &FrameSample,
    info_idx: &std::sync::Arc<Vec<usize>>,
) -> Result<(NodeId, Vec<NodeId>), HnrError> {
    let n = env.code.n();
    let used = env.layout.used_bits();
    let tfm_trainable = stage != Stage::Two;
    let tfm_nodes = push_transformer(tape, &model.transformer, tfm_trainable)?;
    let tok = tape.leaf_data(
        sample.tokens.num_tokens,
        sample.tokens.feat_dim,
        &sample.tokens.features,
        false,
    )?;
    let mut done = 0usize;
    let llr =
        transformer_apply(tape, &tfm_nodes, &model.config, tok, &sample.tokens.data_token_idx, &mut done)?;
    let llr_flat = tape.reshape(llr, 1, env.layout.frame_bits)?;
    let llr_used = tape.slice_cols(llr_flat, 0, used)?;

    match stage {
        Stage::One => {
            // logits for P(bit = 1) are the negated LLRs
            let logits = tape.scale(llr_used, -1.0)?;
            let targets = tape.leaf_data(1, used, &sample.coded_bits, false)?;
            let loss = tape.bce_with_logits_mean(logits, targets)?;
            Ok((loss, tfm_nodes.ids))
        }
        Stage::Two | Stage::Three => {
            let gnn_nodes = push_gnn(tape, &model.gnn, true)?;
            let mut cw_logits = Vec::with_capacity(env.layout.codewords_per_frame);
            for cw in 0..env.layout.codewords_per_frame {
                let slice = tape.slice_cols(llr_used, cw * n, n)?;
                let col = tape.reshape(slice, n, 1)?;
                let logits =
                    gnn_apply(tape, &model.gnn, &gnn_nodes, &env.graph, col, model.config.mp_iters)?;
                let row = if stage == Stage::Three {
                    let info = tape.gather_rows(logits, info_idx)?;
                    tape.reshape(info, 1, info_idx.len())?
                } else {
                    tape.reshape(logits, 1, n)?
                };
                cw_logits.push(row);
            }
            let all = if cw_logits.len() == 1 {
                cw_logits[0]
            } else {
                tape.concat_cols(&cw_logits)?
            };
            let targets = if stage == Stage::Three {
                tape.leaf_data(1, sample.info_bits.len(), &sample.info_bits, false)?
            } else {
                tape.leaf_data(1, used, &sample.coded_bits, false)?
            };
            let loss = tape.bce_with_logits_mean(all, targets)?;
            let trainable = if stage == Stage::Three {
                let mut ids = tfm_nodes.ids;
                ids.extend(gnn_nodes.ids);
                ids
            } else {
                gnn_nodes.ids
            };
            Ok((loss, trainable))
        }
    }
}

/// Number of parameter tensors the optimizer tracks for a stage.
fn stage_param_lens(model: &Model, stage: Stage) -> Vec<usize> {
    let mut lens = Vec::new();
    match stage {
        Stage::One => model.transformer.visit(&mut |_, a| lens.push(a.len())),
        Stage::Two => model.gnn.visit(&mut |_, a| lens.push(a.len())),
        Stage::Three => model.visit(|_, a| lens.push(a.len())),
    }
    lens
}

/// Mean loss and summed gradients over one batch, evaluated in parallel
/// chunks with a fixed reduction order.
fn batch_pass(
    env: &TrainEnv,
    model: &Model,
    stage: Stage,
    step: usize,
    opts: &TrainOptions,
    param_lens: &[usize],
    info_idx: &std::sync::Arc<Vec<usize>>,
) -> Result<(f64, Vec<Vec<f64>>), HnrError> {
    let batch = opts.batch;
    let base_index = stage.frame_offset() + (step as u64) * (batch as u64);

    // chunk c covers frames [bounds[c], bounds[c+1])
    let chunks = GRAD_CHUNKS.min(batch);
    let mut bounds = Vec::with_capacity(chunks + 1);
    for c in 0..=chunks {
        bounds.push(c * batch / chunks);
    }

    struct ChunkOut {
        loss_sum: f64,
        grads: Vec<Vec<f64>>,
    }

    let results: Vec<Mutex<Option<Result<ChunkOut, HnrError>>>> =
        (0..chunks).map(|_| Mutex::new(None)).collect();
    let next_chunk = AtomicUsize::new(0);
    let workers = opts.worker_count().min(chunks);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut tape = Tape::with_validation(false);
                loop {
                    let c = next_chunk.fetch_add(1, Ordering::Relaxed);
                    if c >= chunks {
                        break;
                    }
                    let mut out = ChunkOut {
                        loss_sum: 0.0,
                        grads: param_lens.iter().map(|&l| vec![0.0; l]).collect(),
                    };
                    let mut failed: Option<HnrError> = None;
                    for j in bounds[c]..bounds[c + 1] {
                        let seed = derive_seed(
                            opts.master_seed,
                            stream::TRAIN_DATA,
                            base_index + j as u64,
                        );
                        let run = (|| -> Result<(), HnrError> {
                            let sample = sample_frame(env, seed)?;
                            tape.clear();
                            let (loss, trainable) =
                                frame_loss(&mut tape, env, model, stage, &sample, info_idx)?;
                            let lv = tape.value(loss)[0];
                            if !lv.is_finite() {
                                return Err(HnrError::Diverged { step });
                            }
                            tape.backward(loss).map_err(HnrError::Diff)?;
                            out.loss_sum += lv;
                            for (slot, id) in out.grads.iter_mut().zip(&trainable) {
                                if let Some(g) = tape.grad(*id) {
                                    for (a, b) in slot.iter_mut().zip(g) {
                                        *a += b;
                                    }
                                }
                            }
                            Ok(())
                        })();
                        if let Err(e) = run {
                            failed = Some(e);
                            break;
                        }
                    }
                    *results[c].lock().unwrap() = Some(match failed {
                        Some(e) => Err(e),
                        None => Ok(out),
                    });
                }
            });
        }
    });

    // combine in chunk order
    let mut loss_sum = 0.0;
    let mut grads: Vec<Vec<f64>> = param_lens.iter().map(|&l| vec![0.0; l]).collect();
    for cell in results {
        let out = cell
            .into_inner()
            .unwrap()
            .expect("worker finished every claimed chunk")?;
        loss_sum += out.loss_sum;
        for (total, part) in grads.iter_mut().zip(&out.grads) {
            for (a, b) in total.iter_mut().zip(part) {
                *a += b;
            }
        }
    }
    let inv = 1.0 / batch as f64;
    for g in &mut grads {
        g.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((loss_sum * inv, grads))
}

fn bce_from_logits(logits: &[f64], targets: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&x, &t) in logits.iter().zip(targets) {
        acc += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
    }
    acc / logits.len() as f64
}

/// Per-frame validation metrics.
struct ValFrame {
    objective_bce: f64,
    info_bce: f64,
    bit_errors: usize,
    bits: usize,
}

fn validate_frame(
    env: &TrainEnv,
    model: &Model,
    stage: Stage,
    seed: u64,
    info_idx: &std::sync::Arc<Vec<usize>>,
) -> Result<ValFrame, HnrError> {
    let n = env.code.n();
    let k = env.code.k();
    let used = env.layout.used_bits();
    let sample = sample_frame(env, seed)?;
    let llr_frame = super::transformer::transformer_forward(
        &sample.tokens,
        &model.transformer,
        &model.config,
    )?;
    match stage {
        Stage::One => {
            // objective: coded-bit BCE of the transformer LLRs
            let logits: Vec<f64> = llr_frame[..used].iter().map(|&l| -l).collect();
            let obj = bce_from_logits(&logits, &sample.coded_bits);
            // BER through the classical BP decoder (report only)
            let mut errors = 0usize;
            for cw in 0..env.layout.codewords_per_frame {
                let r = bp_decode(
                    &llr_frame[cw * n..(cw + 1) * n],
                    &env.code.h,
                    crate::rxclassic::DEFAULT_BP_ITERS,
                    BpMethod::SumProduct,
                )
                .map_err(|e| HnrError::Shape(e.to_string()))?;
                let info = env.code.gen.extract_info(&r.bits);
                for (i, &b) in info.iter().enumerate() {
                    if b as f64 != sample.info_bits[cw * k + i] {
                        errors += 1;
                    }
                }
            }
            Ok(ValFrame {
                objective_bce: obj,
                info_bce: obj,
                bit_errors: errors,
                bits: sample.info_bits.len(),
            })
        }
        Stage::Two | Stage::Three => {
            let mut coded_logits = Vec::with_capacity(used);
            let mut info_logits = Vec::with_capacity(env.layout.codewords_per_frame * k);
            let mut errors = 0usize;
            let logit_of = |p: f64| {
                let p = p.clamp(1e-12, 1.0 - 1e-12);
                (p / (1.0 - p)).ln()
            };
            for cw in 0..env.layout.codewords_per_frame {
                let probs = super::gnn::gnn_decode(
                    &llr_frame[cw * n..(cw + 1) * n],
                    &env.graph,
                    &model.gnn,
                    &model.config,
                    model.config.mp_iters,
                )?;
                coded_logits.extend(probs.iter().map(|&p| logit_of(p)));
                for (i, &pos) in info_idx.iter().enumerate() {
                    let p = probs[pos];
                    let hard = if p > 0.5 { 1.0 } else { 0.0 };
                    if hard != sample.info_bits[cw * k + i] {
                        errors += 1;
                    }
                    info_logits.push(logit_of(p));
                }
            }
            let obj = bce_from_logits(&coded_logits, &sample.coded_bits);
            let info_bce = bce_from_logits(&info_logits, &sample.info_bits);
            Ok(ValFrame {
                objective_bce: if stage == Stage::Three { info_bce } else { obj },
                info_bce,
                bit_errors: errors,
                bits: sample.info_bits.len(),
            })
        }
    }
}

/// Held-out metrics on the validation seed set. Returns (stage-objective
/// BCE, info-bit BCE, info-bit BER).
fn validate(
    env: &TrainEnv,
    model: &Model,
    stage: Stage,
    opts: &TrainOptions,
    info_idx: &std::sync::Arc<Vec<usize>>,
) -> Result<(f64, f64, f64), HnrError> {
    let frames = opts.val_frames.max(1);
    let results: Vec<Mutex<Option<Result<ValFrame, HnrError>>>> =
        (0..frames).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = opts.worker_count();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let f = next.fetch_add(1, Ordering::Relaxed);
                if f >= frames {
                    break;
                }
                let seed = derive_seed(opts.master_seed, stream::VAL_DATA, f as u64);
                let out = validate_frame(env, model, stage, seed, info_idx);
                *results[f].lock().unwrap() = Some(out);
            });
        }
    });

    let (mut obj, mut info, mut errs, mut bits) = (0.0, 0.0, 0usize, 0usize);
    for cell in results {
        let v = cell.into_inner().unwrap().expect("all frames claimed")?;
        obj += v.objective_bce;
        info += v.info_bce;
        errs += v.bit_errors;
        bits += v.bits;
    }
    Ok((obj / frames as f64, info / frames as f64, errs as f64 / bits as f64))
}

fn info_positions(code: &Code) -> std::sync::Arc<Vec<usize>> {
    std::sync::Arc::new(code.gen.info_positions().to_vec())
}

fn run_stage(
    env: &TrainEnv,
    model: &mut Model,
    stage: Stage,
    steps_by_phase: &[(usize, f64)],
    mut opt: Optimizer,
    opts: &TrainOptions,
) -> Result<StageReport, HnrError> {
    let info_idx = info_positions(&env.code);
    let param_lens = stage_param_lens(model, stage);
    let total_steps: usize = steps_by_phase.iter().map(|&(s, _)| s).sum();

    let mut rows = Vec::new();
    let mut first_loss = f64::NAN;
    let mut last_loss = f64::NAN;
    let mut min_loss = f64::INFINITY;

    // Fine-tuning keeps the best held-out info BCE, starting from the
    // incoming state.
    let mut best: Option<(f64, super::TransformerParams, super::GnnParams)> = None;
    if stage == Stage::Three {
        let (_, info_bce, _) = validate(env, model, stage, opts, &info_idx)?;
        best = Some((info_bce, model.transformer.clone(), model.gnn.clone()));
    }

    let mut global_step = 0usize;
    for &(phase_steps, lr) in steps_by_phase {
        opt.lr = lr;
        for _ in 0..phase_steps {
            let (loss, grads) =
                batch_pass(env, model, stage, global_step, opts, &param_lens, &info_idx)?;
            if global_step == 0 {
                first_loss = loss;
            }
            last_loss = loss;
            min_loss = min_loss.min(loss);

            {
                let mut params = match stage {
                    Stage::One => model.transformer.params_mut(),
                    Stage::Two => model.gnn.params_mut(),
                    Stage::Three => {
                        let Model { transformer, gnn, .. } = model;
                        let mut v = transformer.params_mut();
                        v.extend(gnn.params_mut());
                        v
                    }
                };
                let mut slices: Vec<&mut [f64]> =
                    params.iter_mut().map(|a| a.data.as_mut_slice()).collect();
                let grad_refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
                opt.step(&mut slices, &grad_refs).map_err(HnrError::Diff)?;
            }

            global_step += 1;
            let at_val = global_step % opts.val_every == 0 || global_step == total_steps;
            if at_val {
                let (obj, info_bce, ber) = validate(env, model, stage, opts, &info_idx)?;
                if stage == Stage::Three {
                    let better = best.as_ref().map(|(b, _, _)| info_bce < *b).unwrap_or(true);
                    if better {
                        best = Some((info_bce, model.transformer.clone(), model.gnn.clone()));
                    }
                }
                rows.push(MetricsRow {
                    stage: stage.id(),
                    step: global_step,
                    loss,
                    lr,
                    val_bce: Some(obj),
                    val_ber: Some(ber),
                });
            } else {
                rows.push(MetricsRow {
                    stage: stage.id(),
                    step: global_step,
                    loss,
                    lr,
                    val_bce: None,
                    val_ber: None,
                });
            }
        }
    }

    if let Some((_, tfm, gnn)) = best {
        model.transformer = tfm;
        model.gnn = gnn;
    }

    let (obj, info_bce, ber) = validate(env, model, stage, opts, &info_idx)?;
    Ok(StageReport {
        stage: stage.id(),
        steps: total_steps,
        first_loss,
        last_loss,
        min_loss,
        val_bce: obj,
        val_info_bce: info_bce,
        val_ber: ber,
        rows,
    })
}

/// Stage 1: transformer front end, AdamW, coded-bit BCE.
pub fn train_stage1(
    env: &TrainEnv,
    model: &mut Model,
    opts: &TrainOptions,
) -> Result<StageReport, HnrError> {
    let steps = opts.stage1_step_count();
    let lens = stage_param_lens(model, Stage::One);
    let opt = Optimizer::new(
        OptimKind::AdamW { weight_decay: opts.stage1_weight_decay },
        opts.stage1_lr,
        &lens,
    );
    run_stage(env, model, Stage::One, &[(steps, opts.stage1_lr)], opt, opts)
}

/// Stage 2: graph decoder with the transformer frozen, Adam, coded-bit BCE,
/// three-phase learning-rate schedule.
pub fn train_stage2(
    env: &TrainEnv,
    model: &mut Model,
    opts: &TrainOptions,
) -> Result<StageReport, HnrError> {
    let phases = opts.stage2_phase_steps();
    let lens = stage_param_lens(model, Stage::Two);
    let opt = Optimizer::new(OptimKind::Adam, opts.stage2_lrs[0], &lens);
    run_stage(
        env,
        model,
        Stage::Two,
        &[
            (phases[0], opts.stage2_lrs[0]),
            (phases[1], opts.stage2_lrs[1]),
            (phases[2], opts.stage2_lrs[2]),
        ],
        opt,
        opts,
    )
}

/// Stage 3: joint fine-tune of all parameters, Adam, information-bit BCE.
pub fn train_stage3(
    env: &TrainEnv,
    model: &mut Model,
    opts: &TrainOptions,
) -> Result<StageReport, HnrError> {
    let steps = opts.stage3_step_count();
    let lens = stage_param_lens(model, Stage::Three);
    let opt = Optimizer::new(OptimKind::Adam, opts.stage3_lr, &lens);
    run_stage(env, model, Stage::Three, &[(steps, opts.stage3_lr)], opt, opts)
}

/// Information-bit BCE of the full pipeline (transformer -> graph decoder)
/// on one synthetic frame, with gradients for every parameter in model
/// visit order. Drives gradient checks and diagnostics.
pub fn finetune_loss_and_grads(
    env: &TrainEnv,
    model: &Model,
    frame_seed: u64,
) -> Result<(f64, Vec<Vec<f64>>), HnrError> {
    let info_idx = info_positions(&env.code);
    let sample = sample_frame(env, frame_seed)?;
    let mut tape = Tape::with_validation(false);
    let (loss, trainable) =
        frame_loss(&mut tape, env, model, Stage::Three, &sample, &info_idx)?;
    let lv = tape.value(loss)[0];
    if !lv.is_finite() {
        return Err(HnrError::Diverged { step: 0 });
    }
    tape.backward(loss).map_err(HnrError::Diff)?;
    let grads = trainable
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| {
            let (r, c) = tape.shape(id);
            vec![0.0; r * c]
        }))
        .collect();
    Ok((lv, grads))
}

/// The same loss without gradients, for finite-difference probes.
pub fn finetune_loss(env: &TrainEnv, model: &Model, frame_seed: u64) -> Result<f64, HnrError> {
    let info_idx = info_positions(&env.code);
    let sample = sample_frame(env, frame_seed)?;
    let mut tape = Tape::with_validation(false);
    let (loss, _) = frame_loss(&mut tape, env, model, Stage::Three, &sample, &info_idx)?;
    Ok(tape.value(loss)[0])
}
