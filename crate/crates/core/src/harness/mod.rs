//! Experiment configuration, Monte Carlo sweeps, payload round trips,
//! checkpoint persistence and the command line.
//!
//! The SNR axis is symbol energy over noise power per receive antenna with
//! a unit-energy constellation, so `noise_var = 10^(-snr_db/10)`. Every
//! receiver and every sweep goes through that one conversion.

mod checkpoint;
mod cli;
mod payload;
mod pipeline;
mod sweep;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, compute_fingerprint, load_checkpoint,
    load_for_inference, save_checkpoint, CheckpointError, OptState,
};
pub use cli::run_cli;
pub use payload::{
    bits_from_bytes, bytes_from_bits, pad_bits, psnr_db, run_payload, sample_metrics,
    synth_audio_tone, synth_test_image, write_pgm, ImageMeta, PayloadReport, PSNR_CAP_DB,
};
pub use pipeline::{
    channel_pass, frame_info_capacity, receive, transmit_payload_bits, transmit_random, FrameRx,
    FrameTx, LinkSetup, ReceiverKind,
};
pub use sweep::{run_sweep, sweep_csv, SweepResultRow};

use crate::channel::{ChannelError, ChannelModel, ChannelSpec};
use crate::fec::FecError;
use crate::hnr::HnrError;
use crate::phy::{GridSpec, PhyError};
use crate::rxclassic::RxError;
use std::fmt;

/// The one SNR-to-noise-variance mapping used everywhere.
pub fn noise_var_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// How the code is specified in a config.
#[derive(Clone, Debug, PartialEq)]
pub enum CodeRef {
    /// Uncoded transmission (bypass mode).
    None,
    /// PEG-constructed (dv, dc)-regular code.
    Regular { n: usize, dv: usize, dc: usize, seed: u64 },
    /// External alist file.
    Alist(String),
}

/// Machine-readable experiment description; the defaults reproduce the
/// simulation parameter table (28 GHz, 64-QAM, rate-1/2, 129 subcarriers,
/// guards [12,12], 16 symbols with pilots on 2 and 11, 266 ns delay spread,
/// 2 receive antennas, speeds 0-120 km/h).
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub chan: ChannelSpec,
    pub modulation: String,
    pub code: CodeRef,
    pub pilot_seed: u64,
    pub receiver: String,
    pub snr_db: Vec<f64>,
    pub frames_per_point: usize,
    pub seed: u64,
    pub scale: f64,
    pub checkpoint: Option<String>,
    pub out: String,
    pub metrics_out: String,
    pub train_batch: usize,
    pub train_val_frames: usize,
    pub train_val_every: usize,
    /// Training SNR range; `None` uses the sweep list's min and max.
    pub train_snr_range: Option<[f64; 2]>,
    pub train_stage1_steps: Option<usize>,
    pub train_stage2_steps: Option<[usize; 3]>,
    pub train_stage3_steps: Option<usize>,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid: GridSpec::default(),
            chan: ChannelSpec::default(),
            modulation: "qam64".into(),
            code: CodeRef::Regular { n: 1024, dv: 3, dc: 6, seed: 1 },
            pilot_seed: 1,
            receiver: "baseline".into(),
            snr_db: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
            frames_per_point: 100,
            seed: 1,
            scale: 1e-3,
            checkpoint: None,
            out: "sweep.csv".into(),
            metrics_out: "train_metrics.csv".into(),
            train_batch: 32,
            train_val_frames: 64,
            train_val_every: 125,
            train_snr_range: None,
            train_stage1_steps: None,
            train_stage2_steps: None,
            train_stage3_steps: None,
            threads: 0,
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale configuration: QPSK over a block-fading Rayleigh channel,
    /// one n = 128 rate-1/2 codeword filling a 16-subcarrier grid of four
    /// data symbols plus one pilot symbol.
    pub fn toy() -> Self {
        ExperimentConfig {
            grid: GridSpec {
                fft_size: 20,
                guards: [2, 2],
                num_symbols: 5,
                pilot_symbol_indices: vec![2],
                dc_null: false,
            },
            chan: ChannelSpec {
                model: ChannelModel::FlatRayleigh,
                speed_range_kmh: [0.0, 0.0],
                ..Default::default()
            },
            modulation: "qpsk".into(),
            code: CodeRef::Regular { n: 128, dv: 3, dc: 6, seed: 1 },
            snr_db: vec![6.0],
            frames_per_point: 2000,
            seed: 42,
            out: "toy_sweep.csv".into(),
            ..Default::default()
        }
    }

    pub fn train_snr_range(&self) -> [f64; 2] {
        self.train_snr_range.unwrap_or_else(|| {
            let lo = self.snr_db.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = self.snr_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            [lo, hi]
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.grid.validate().map_err(HarnessError::Phy)?;
        self.chan.validate().map_err(HarnessError::Channel)?;
        if self.snr_db.is_empty() {
            return Err(HarnessError::Config("snr_db list must not be empty".into()));
        }
        if self.frames_per_point == 0 {
            return Err(HarnessError::Config("frames_per_point must be >= 1".into()));
        }
        if !matches!(self.receiver.as_str(), "baseline" | "perfect_csi" | "hnr") {
            return Err(HarnessError::Config(format!(
                "unknown receiver `{}` (baseline | perfect_csi | hnr)",
                self.receiver
            )));
        }
        Ok(())
    }

    /// Parse the flat key-value text format over the Table-II defaults.
    /// `#` starts a comment; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        let mut code_n = None;
        let mut code_dv = None;
        let mut code_dc = None;
        let mut code_seed = None;
        let mut code_kind: Option<String> = None;

        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HarnessError::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    ln + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                HarnessError::Config(format!("line {}: invalid {what}: `{value}`", ln + 1))
            };

            macro_rules! num {
                ($ty:ty, $what:expr) => {
                    value.parse::<$ty>().map_err(|_| bad($what))?
                };
            }

            match key {
                "modulation" => cfg.modulation = value.to_string(),
                "code" => code_kind = Some(value.to_string()),
                "code.n" => code_n = Some(num!(usize, "code.n")),
                "code.dv" => code_dv = Some(num!(usize, "code.dv")),
                "code.dc" => code_dc = Some(num!(usize, "code.dc")),
                "code.seed" => code_seed = Some(num!(u64, "code.seed")),
                "pilot.seed" => cfg.pilot_seed = num!(u64, "pilot.seed"),
                "grid.fft_size" => cfg.grid.fft_size = num!(usize, "grid.fft_size"),
                "grid.guard_left" => cfg.grid.guards[0] = num!(usize, "grid.guard_left"),
                "grid.guard_right" => cfg.grid.guards[1] = num!(usize, "grid.guard_right"),
                "grid.num_symbols" => cfg.grid.num_symbols = num!(usize, "grid.num_symbols"),
                "grid.pilot_symbols" => {
                    cfg.grid.pilot_symbol_indices = parse_list::<usize>(value)
                        .map_err(|_| bad("grid.pilot_symbols"))?;
                }
                "grid.dc_null" => cfg.grid.dc_null = parse_bool(value).ok_or_else(|| bad("grid.dc_null"))?,
                "channel.model" => {
                    cfg.chan.model = ChannelModel::by_name(value).map_err(HarnessError::Channel)?
                }
                "channel.delay_spread_ns" => {
                    cfg.chan.delay_spread = num!(f64, "channel.delay_spread_ns") * 1e-9
                }
                "channel.speed_min_kmh" => cfg.chan.speed_range_kmh[0] = num!(f64, "speed"),
                "channel.speed_max_kmh" => cfg.chan.speed_range_kmh[1] = num!(f64, "speed"),
                "channel.carrier_ghz" => cfg.chan.carrier_freq = num!(f64, "carrier") * 1e9,
                "channel.scs_khz" => cfg.chan.subcarrier_spacing = num!(f64, "scs") * 1e3,
                "channel.num_rx" => cfg.chan.num_rx = num!(usize, "channel.num_rx"),
                "channel.num_taps" => cfg.chan.num_taps = num!(usize, "channel.num_taps"),
                "receiver" => cfg.receiver = value.to_string(),
                "snr_db" => {
                    cfg.snr_db = parse_list::<f64>(value).map_err(|_| bad("snr_db"))?;
                }
                "frames_per_point" => cfg.frames_per_point = num!(usize, "frames_per_point"),
                "seed" => cfg.seed = num!(u64, "seed"),
                "scale" => cfg.scale = num!(f64, "scale"),
                "checkpoint" => {
                    cfg.checkpoint = if value.is_empty() { None } else { Some(value.to_string()) }
                }
                "out" => cfg.out = value.to_string(),
                "metrics_out" => cfg.metrics_out = value.to_string(),
                "threads" => cfg.threads = num!(usize, "threads"),
                "train.batch" => cfg.train_batch = num!(usize, "train.batch"),
                "train.val_frames" => cfg.train_val_frames = num!(usize, "train.val_frames"),
                "train.val_every" => cfg.train_val_every = num!(usize, "train.val_every"),
                "train.snr_min_db" => {
                    let mut r = cfg.train_snr_range.unwrap_or([0.0, 0.0]);
                    r[0] = num!(f64, "train.snr_min_db");
                    cfg.train_snr_range = Some(r);
                }
                "train.snr_max_db" => {
                    let mut r = cfg.train_snr_range.unwrap_or([0.0, 0.0]);
                    r[1] = num!(f64, "train.snr_max_db");
                    cfg.train_snr_range = Some(r);
                }
                "train.stage1_steps" => {
                    let v = num!(usize, "train.stage1_steps");
                    cfg.train_stage1_steps = if v == 0 { None } else { Some(v) };
                }
                "train.stage2_steps" => {
                    let v = parse_list::<usize>(value).map_err(|_| bad("train.stage2_steps"))?;
                    if v.len() != 3 {
                        return Err(bad("train.stage2_steps (need three values)"));
                    }
                    cfg.train_stage2_steps =
                        if v.iter().all(|&x| x == 0) { None } else { Some([v[0], v[1], v[2]]) };
                }
                "train.stage3_steps" => {
                    let v = num!(usize, "train.stage3_steps");
                    cfg.train_stage3_steps = if v == 0 { None } else { Some(v) };
                }
                other => {
                    return Err(HarnessError::Config(format!(
                        "line {}: unknown key `{other}`",
                        ln + 1
                    )));
                }
            }
        }

        match code_kind.as_deref() {
            None | Some("regular") => {
                if let CodeRef::Regular { n, dv, dc, seed } = &mut cfg.code {
                    if let Some(v) = code_n {
                        *n = v;
                    }
                    if let Some(v) = code_dv {
                        *dv = v;
                    }
                    if let Some(v) = code_dc {
                        *dc = v;
                    }
                    if let Some(v) = code_seed {
                        *seed = v;
                    }
                }
            }
            Some("none") => cfg.code = CodeRef::None,
            Some(other) => {
                if let Some(path) = other.strip_prefix("alist:") {
                    cfg.code = CodeRef::Alist(path.to_string());
                } else {
                    return Err(HarnessError::Config(format!(
                        "unknown code kind `{other}` (none | regular | alist:<path>)"
                    )));
                }
            }
        }

        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a named preset or a file path.
    pub fn load(name_or_path: &str) -> Result<Self, HarnessError> {
        match name_or_path {
            "default" => Ok(ExperimentConfig::default()),
            "toy" => Ok(ExperimentConfig::toy()),
            path => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| HarnessError::Io(format!("{path}: {e}")))?;
                ExperimentConfig::parse(&text)
            }
        }
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, ()> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|t| t.trim().parse::<T>().map_err(|_| ()))
        .collect()
}

fn parse_bool(value: &str) -> Option<bool> {
    match value {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

#[derive(Debug)]
pub enum HarnessError {
    Config(String),
    Io(String),
    Phy(PhyError),
    Fec(FecError),
    Channel(ChannelError),
    Rx(RxError),
    Hnr(HnrError),
    Checkpoint(CheckpointError),
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Config(s) => write!(f, "config error: {s}"),
            HarnessError::Io(s) => write!(f, "io error: {s}"),
            HarnessError::Phy(e) => write!(f, "{e}"),
            HarnessError::Fec(e) => write!(f, "{e}"),
            HarnessError::Channel(e) => write!(f, "{e}"),
            HarnessError::Rx(e) => write!(f, "{e}"),
            HarnessError::Hnr(e) => write!(f, "{e}"),
            HarnessError::Checkpoint(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<PhyError> for HarnessError {
    fn from(e: PhyError) -> Self {
        HarnessError::Phy(e)
    }
}
impl From<FecError> for HarnessError {
    fn from(e: FecError) -> Self {
        HarnessError::Fec(e)
    }
}
impl From<ChannelError> for HarnessError {
    fn from(e: ChannelError) -> Self {
        HarnessError::Channel(e)
    }
}
impl From<RxError> for HarnessError {
    fn from(e: RxError) -> Self {
        HarnessError::Rx(e)
    }
}
impl From<HnrError> for HarnessError {
    fn from(e: HnrError) -> Self {
        HarnessError::Hnr(e)
    }
}
impl From<CheckpointError> for HarnessError {
    fn from(e: CheckpointError) -> Self {
        HarnessError::Checkpoint(e)
    }
}

#[cfg(test)]
mod tests;
