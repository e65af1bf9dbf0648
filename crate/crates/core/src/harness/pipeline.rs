//! Frame-level transmit and receive plumbing shared by sweeps, payload
//! round trips and training.

use num_complex::Complex64;

use super::{CodeRef, ExperimentConfig, HarnessError};
use crate::channel::{apply as channel_apply, realize, ChannelRealization, ChannelSpec};
use crate::fec::{build_regular_ldpc, encode, load_alist, Code};
use crate::hnr::{build_tanner, hnr_receive, Model, TannerGraph};
use crate::phy::{
    grid_map, pilot_values, Constellation, FrameLayout, GridSpec, PilotMatrix, ResourceGrid,
};
use crate::rng::{derive_seed, stream, Rng};
use crate::rxclassic::{
    baseline_receive, equalize_and_demap, perfect_csi_receive, Csi,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReceiverKind {
    Baseline,
    PerfectCsi,
    Hnr,
}

impl ReceiverKind {
    pub fn by_name(name: &str) -> Result<Self, HarnessError> {
        match name {
            "baseline" => Ok(ReceiverKind::Baseline),
            "perfect_csi" => Ok(ReceiverKind::PerfectCsi),
            "hnr" => Ok(ReceiverKind::Hnr),
            other => Err(HarnessError::Config(format!("unknown receiver `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReceiverKind::Baseline => "baseline",
            ReceiverKind::PerfectCsi => "perfect_csi",
            ReceiverKind::Hnr => "hnr",
        }
    }
}

/// Concrete link objects resolved from a config.
pub struct LinkSetup {
    pub grid: GridSpec,
    pub chan: ChannelSpec,
    pub constellation: Constellation,
    /// `None` in uncoded bypass mode.
    pub code: Option<Code>,
    pub layout: Option<FrameLayout>,
    pub graph: Option<TannerGraph>,
    pub pilots: PilotMatrix,
    pub receiver: ReceiverKind,
}

impl LinkSetup {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let constellation = Constellation::by_name(&cfg.modulation)?;
        let receiver = ReceiverKind::by_name(&cfg.receiver)?;
        let code = match &cfg.code {
            CodeRef::None => None,
            CodeRef::Regular { n, dv, dc, seed } => {
                Some(Code::new(build_regular_ldpc(*n, *dv, *dc, *seed)?)?)
            }
            CodeRef::Alist(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| HarnessError::Io(format!("{path}: {e}")))?;
                Some(Code::new(load_alist(&text)?)?)
            }
        };
        let layout = match &code {
            Some(c) => Some(FrameLayout::new(&cfg.grid, &constellation, c.n())?),
            None => None,
        };
        let graph = match &code {
            Some(c) => Some(build_tanner(&c.h)?),
            None => None,
        };
        if receiver == ReceiverKind::Hnr && code.is_none() {
            return Err(HarnessError::Config(
                "the hnr receiver requires a code (code = regular | alist:...)".into(),
            ));
        }
        let pilots = pilot_values(&cfg.grid, cfg.pilot_seed);
        Ok(LinkSetup {
            grid: cfg.grid.clone(),
            chan: cfg.chan.clone(),
            constellation,
            code,
            layout,
            graph,
            pilots,
            receiver,
        })
    }

    /// Information bits carried per frame (raw bits in uncoded mode).
    pub fn info_capacity(&self) -> usize {
        frame_info_capacity(self)
    }
}

pub fn frame_info_capacity(setup: &LinkSetup) -> usize {
    match (&setup.code, &setup.layout) {
        (Some(code), Some(layout)) => layout.codewords_per_frame * code.k(),
        _ => setup.grid.data_capacity() * setup.constellation.bits_per_symbol,
    }
}

/// One transmitted frame.
pub struct FrameTx {
    pub info_bits: Vec<u8>,
    /// Coded bits (equals info bits in uncoded mode), without filler.
    pub coded_bits: Vec<u8>,
    pub grid: ResourceGrid,
}

/// Encode and map explicit information bits (length = info capacity).
pub fn transmit_payload_bits(setup: &LinkSetup, info_bits: &[u8]) -> Result<FrameTx, HarnessError> {
    let cap = frame_info_capacity(setup);
    if info_bits.len() != cap {
        return Err(HarnessError::Config(format!(
            "frame takes {cap} info bits, got {}",
            info_bits.len()
        )));
    }
    let (coded, stream_bits) = match (&setup.code, &setup.layout) {
        (Some(code), Some(layout)) => {
            let k = code.k();
            let mut coded = Vec::with_capacity(layout.used_bits());
            for cw in 0..layout.codewords_per_frame {
                let word = encode(&info_bits[cw * k..(cw + 1) * k], &code.gen)?;
                coded.extend(word.bits);
            }
            let mut stream_bits = coded.clone();
            stream_bits.resize(layout.frame_bits, 0);
            (coded, stream_bits)
        }
        _ => (info_bits.to_vec(), info_bits.to_vec()),
    };
    let syms = setup.constellation.map_bits(&stream_bits)?;
    let grid = grid_map(&syms, &setup.pilots, &setup.grid)?;
    Ok(FrameTx { info_bits: info_bits.to_vec(), coded_bits: coded, grid })
}

/// Random-payload frame, deterministic per seed.
pub fn transmit_random(setup: &LinkSetup, seed: u64) -> Result<FrameTx, HarnessError> {
    let mut rng = Rng::from_stream(seed, stream::PAYLOAD_BITS, 0);
    let bits = rng.bits(frame_info_capacity(setup));
    transmit_payload_bits(setup, &bits)
}

/// Channel realization and noisy receive grid for one frame.
pub fn channel_pass(
    setup: &LinkSetup,
    tx: &FrameTx,
    noise_var: f64,
    seed: u64,
) -> Result<(ResourceGrid, ChannelRealization), HarnessError> {
    let real = realize(
        &setup.chan,
        &setup.grid,
        noise_var,
        derive_seed(seed, stream::CHANNEL, 0),
    )?;
    let rx = channel_apply(&tx.grid, &real, derive_seed(seed, stream::NOISE, 0))?;
    Ok((rx, real))
}

/// Receiver output for one frame.
pub struct FrameRx {
    pub info_bits: Vec<u8>,
    pub coded_bits: Vec<u8>,
    /// Per-codeword success flags (parity satisfied); one entry per frame in
    /// uncoded mode, always true there.
    pub cw_success: Vec<bool>,
}

/// Run the configured receiver. Perfect-CSI needs the true realization; the
/// hnr receiver needs a model.
pub fn receive(
    setup: &LinkSetup,
    rx_grid: &ResourceGrid,
    realization: &ChannelRealization,
    noise_var: f64,
    model: Option<&Model>,
) -> Result<FrameRx, HarnessError> {
    match (&setup.code, &setup.layout) {
        (Some(code), Some(layout)) => {
            let out = match setup.receiver {
                ReceiverKind::Baseline => baseline_receive(
                    rx_grid,
                    &setup.pilots,
                    &setup.grid,
                    noise_var,
                    &setup.constellation,
                    code,
                    layout,
                )?,
                ReceiverKind::PerfectCsi => perfect_csi_receive(
                    rx_grid,
                    realization,
                    &setup.grid,
                    noise_var,
                    &setup.constellation,
                    code,
                    layout,
                )?,
                ReceiverKind::Hnr => {
                    let model = model.ok_or_else(|| {
                        HarnessError::Config("hnr receiver needs a checkpoint".into())
                    })?;
                    let graph = setup.graph.as_ref().expect("graph built with code");
                    hnr_receive(
                        rx_grid,
                        noise_var,
                        &setup.grid,
                        &setup.pilots,
                        graph,
                        model,
                        code,
                        layout,
                    )?
                }
            };
            Ok(FrameRx {
                info_bits: out.info_bits,
                coded_bits: out.coded_bits,
                cw_success: out.cw_success,
            })
        }
        _ => {
            // uncoded: equalize, hard-decide the LLR signs
            let csi = match setup.receiver {
                ReceiverKind::Baseline => {
                    let est = crate::rxclassic::ls_estimate(rx_grid, &setup.pilots, &setup.grid)
                        .map_err(HarnessError::Rx)?;
                    let (llrs, _) = equalize_and_demap(
                        rx_grid,
                        Csi::Estimate(&est),
                        noise_var,
                        &setup.grid,
                        &setup.constellation,
                    )
                    .map_err(HarnessError::Rx)?;
                    llrs
                }
                ReceiverKind::PerfectCsi => {
                    let (llrs, _) = equalize_and_demap(
                        rx_grid,
                        Csi::Perfect(realization),
                        noise_var,
                        &setup.grid,
                        &setup.constellation,
                    )
                    .map_err(HarnessError::Rx)?;
                    llrs
                }
                ReceiverKind::Hnr => {
                    return Err(HarnessError::Config("hnr receiver requires a code".into()))
                }
            };
            let bits: Vec<u8> = csi.iter().map(|&l| if l < 0.0 { 1 } else { 0 }).collect();
            Ok(FrameRx { info_bits: bits.clone(), coded_bits: bits, cw_success: vec![true] })
        }
    }
}

/// Symbols for inspection of the transmit path in tests.
#[allow(dead_code)]
pub(crate) fn map_frame_symbols(
    setup: &LinkSetup,
    bits: &[u8],
) -> Result<Vec<Complex64>, HarnessError> {
    Ok(setup.constellation.map_bits(bits)?)
}
