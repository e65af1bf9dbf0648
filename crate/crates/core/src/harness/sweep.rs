//! Monte Carlo BER/BLER sweeps over an SNR list.
//!
//! Per-frame seeds derive from (master seed, snr index, frame index), so any
//! frame can be re-run in isolation and results do not depend on scheduling.
//! Frames run in parallel; error counts are integers, summed in frame order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::pipeline::{channel_pass, receive, transmit_random, LinkSetup};
use super::{noise_var_from_snr_db, ExperimentConfig, HarnessError};
use crate::hnr::Model;
use crate::rng::{derive_seed, stream};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResultRow {
    pub snr_db: f64,
    pub info_ber: f64,
    pub coded_ber: f64,
    pub bler: f64,
    pub frames: usize,
    pub bit_count: usize,
    pub mc_stderr: f64,
    pub receiver: String,
    pub channel: String,
    pub seed: u64,
}

#[derive(Default)]
struct Counts {
    info_errors: usize,
    info_bits: usize,
    coded_errors: usize,
    coded_bits: usize,
    block_errors: usize,
    blocks: usize,
}

fn run_frame(
    setup: &LinkSetup,
    model: Option<&Model>,
    noise_var: f64,
    frame_seed: u64,
) -> Result<Counts, HarnessError> {
    let tx = transmit_random(setup, frame_seed)?;
    let (rx_grid, real) = channel_pass(setup, &tx, noise_var, frame_seed)?;
    let out = receive(setup, &rx_grid, &real, noise_var, model)?;

    let mut c = Counts::default();
    c.info_bits = tx.info_bits.len();
    c.info_errors = tx
        .info_bits
        .iter()
        .zip(&out.info_bits)
        .filter(|(a, b)| a != b)
        .count();
    c.coded_bits = tx.coded_bits.len();
    c.coded_errors = tx
        .coded_bits
        .iter()
        .zip(&out.coded_bits)
        .filter(|(a, b)| a != b)
        .count();
    // block = codeword (the whole frame in uncoded mode)
    match &setup.code {
        Some(code) => {
            let n = code.n();
            c.blocks = tx.coded_bits.len() / n;
            for cw in 0..c.blocks {
                let errs = tx.coded_bits[cw * n..(cw + 1) * n]
                    .iter()
                    .zip(&out.coded_bits[cw * n..(cw + 1) * n])
                    .filter(|(a, b)| a != b)
                    .count();
                if errs > 0 {
                    c.block_errors += 1;
                }
            }
        }
        None => {
            c.blocks = 1;
            if c.coded_errors > 0 {
                c.block_errors = 1;
            }
        }
    }
    Ok(c)
}

/// Simulate every SNR point of the config. The returned rows are in SNR-list
/// order; serialize with `sweep_csv`.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    model: Option<&Model>,
) -> Result<Vec<SweepResultRow>, HarnessError> {
    let setup = LinkSetup::from_config(cfg)?;
    if setup.receiver == super::ReceiverKind::Hnr && model.is_none() {
        return Err(HarnessError::Config("hnr sweep needs a loaded checkpoint".into()));
    }
    let workers = if cfg.threads > 0 {
        cfg.threads
    } else {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    };

    let mut rows = Vec::with_capacity(cfg.snr_db.len());
    for (si, &snr_db) in cfg.snr_db.iter().enumerate() {
        let noise_var = noise_var_from_snr_db(snr_db);
        let frames = cfg.frames_per_point;
        let next = AtomicUsize::new(0);
        let total = Mutex::new(Counts::default());
        let first_err: Mutex<Option<HarnessError>> = Mutex::new(None);

        std::thread::scope(|scope| {
            for _ in 0..workers.max(1) {
                scope.spawn(|| loop {
                    let f = next.fetch_add(1, Ordering::Relaxed);
                    if f >= frames {
                        break;
                    }
                    let frame_seed = derive_seed(
                        cfg.seed,
                        stream::EVAL_DATA,
                        ((si as u64) << 32) | f as u64,
                    );
                    match run_frame(&setup, model, noise_var, frame_seed) {
                        Ok(c) => {
                            let mut t = total.lock().unwrap();
                            t.info_errors += c.info_errors;
                            t.info_bits += c.info_bits;
                            t.coded_errors += c.coded_errors;
                            t.coded_bits += c.coded_bits;
                            t.block_errors += c.block_errors;
                            t.blocks += c.blocks;
                        }
                        Err(e) => {
                            let mut slot = first_err.lock().unwrap();
                            if slot.is_none() {
                                *slot = Some(e);
                            }
                            break;
                        }
                    }
                });
            }
        });
        if let Some(e) = first_err.into_inner().unwrap() {
            return Err(e);
        }

        let t = total.into_inner().unwrap();
        let info_ber = t.info_errors as f64 / t.info_bits as f64;
        rows.push(SweepResultRow {
            snr_db,
            info_ber,
            coded_ber: t.coded_errors as f64 / t.coded_bits as f64,
            bler: t.block_errors as f64 / t.blocks as f64,
            frames,
            bit_count: t.info_bits,
            mc_stderr: (info_ber * (1.0 - info_ber) / t.info_bits as f64).sqrt(),
            receiver: setup.receiver.name().to_string(),
            channel: setup.chan.model.name().to_string(),
            seed: cfg.seed,
        });
    }
    Ok(rows)
}

/// RFC-4180 CSV with a header row.
pub fn sweep_csv(rows: &[SweepResultRow]) -> String {
    let mut out = String::from(
        "snr_db,info_ber,coded_ber,bler,frames,bit_count,mc_stderr,receiver,channel,seed\r\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\r\n",
            r.snr_db,
            r.info_ber,
            r.coded_ber,
            r.bler,
            r.frames,
            r.bit_count,
            r.mc_stderr,
            r.receiver,
            r.channel,
            r.seed
        ));
    }
    out
}
