//! Classical receive chains: least-squares channel estimation from pilot
//! symbols, LMMSE equalization across receive antennas, exact soft
//! demapping, and belief-propagation decoding.
//!
//! Two assembled receivers:
//! - `baseline_receive`: LS estimation -> LMMSE -> log-MAP LLRs -> BP;
//! - `perfect_csi_receive`: the same chain with the true channel, the
//!   performance upper bound.

use num_complex::Complex64;
use std::fmt;

use crate::channel::{ChannelError, ChannelRealization};
use crate::fec::{bp_decode, BpMethod, Code, FecError};
use crate::phy::{Constellation, FrameLayout, GridSpec, PhyError, PilotMatrix, ResourceGrid};

/// BP iteration budget of the classical chain.
pub const DEFAULT_BP_ITERS: usize = 10;

/// Post-equalization noise variances are clamped to this floor before
/// demapping so noiseless frames produce saturated LLRs instead of a
/// rejected zero variance.
pub const MIN_NOISE_VAR: f64 = 1e-12;

/// Cap used when the channel estimate vanishes and the symbol carries no
/// information; the demapper then returns LLRs that are numerically zero.
pub const MAX_NOISE_VAR: f64 = 1e30;

/// LS channel estimate with a per-symbol estimation-error coefficient:
/// the estimation error variance at symbol `l` is `err_coeff[l] * noise_var`
/// (1 at pilot symbols for unit pilots, (1-w)^2 + w^2 between them).
#[derive(Clone, Debug)]
pub struct ChannelEstimate {
    pub num_rx: usize,
    pub num_symbols: usize,
    pub fft_size: usize,
    h_hat: Vec<Complex64>,
    pub err_coeff: Vec<f64>,
}

impl ChannelEstimate {
    #[inline]
    pub fn at(&self, antenna: usize, l: usize, k: usize) -> Complex64 {
        self.h_hat[(antenna * self.num_symbols + l) * self.fft_size + k]
    }
}

/// LS estimation at pilot resource elements (H = y * conj(p) / |p|^2 per
/// antenna) with linear interpolation along the symbol axis between pilot
/// symbols and nearest-pilot extrapolation outside them.
pub fn ls_estimate(
    rx: &ResourceGrid,
    pilots: &PilotMatrix,
    spec: &GridSpec,
) -> Result<ChannelEstimate, RxError> {
    spec.validate().map_err(RxError::Phy)?;
    if spec.pilot_symbol_indices.is_empty() {
        return Err(RxError::MissingPilots);
    }
    if rx.num_symbols != spec.num_symbols || rx.fft_size != spec.fft_size {
        return Err(RxError::Shape("received grid does not match the spec".into()));
    }
    let usable = spec.usable_subcarriers();
    if pilots.num_pilot_symbols != spec.pilot_symbol_indices.len()
        || pilots.num_usable != usable.len()
    {
        return Err(RxError::Shape("pilot matrix does not match the spec".into()));
    }

    let mut psyms = spec.pilot_symbol_indices.clone();
    psyms.sort_unstable();
    // pilot position in the (unsorted) spec order for matrix lookup
    let ppos = |l: usize| spec.pilot_symbol_indices.iter().position(|&x| x == l).unwrap();

    let (ns, nf) = (spec.num_symbols, spec.fft_size);
    let mut h_hat = vec![Complex64::new(0.0, 0.0); rx.num_antennas * ns * nf];
    let mut err_coeff = vec![0.0f64; ns];

    // LS at pilot symbols.
    for &lp in &psyms {
        let pp = ppos(lp);
        for (up, &k) in usable.iter().enumerate() {
            let p = pilots.at(pp, up);
            let p2 = p.norm_sqr();
            for a in 0..rx.num_antennas {
                let y = rx.at(a, lp, k);
                h_hat[(a * ns + lp) * nf + k] = y * p.conj() / p2;
            }
        }
        err_coeff[lp] = 1.0;
    }

    // Interpolate / extrapolate the remaining symbols.
    for l in 0..ns {
        if psyms.binary_search(&l).is_ok() {
            continue;
        }
        let next = psyms.iter().find(|&&p| p > l);
        let prev = psyms.iter().rev().find(|&&p| p < l);
        match (prev, next) {
            (Some(&p0), Some(&p1)) => {
                let w = (l - p0) as f64 / (p1 - p0) as f64;
                for a in 0..rx.num_antennas {
                    for &k in &usable {
                        let h0 = h_hat[(a * ns + p0) * nf + k];
                        let h1 = h_hat[(a * ns + p1) * nf + k];
                        h_hat[(a * ns + l) * nf + k] = h0 * (1.0 - w) + h1 * w;
                    }
                }
                err_coeff[l] = (1.0 - w) * (1.0 - w) + w * w;
            }
            (Some(&p0), None) | (None, Some(&p0)) => {
                for a in 0..rx.num_antennas {
                    for &k in &usable {
                        h_hat[(a * ns + l) * nf + k] = h_hat[(a * ns + p0) * nf + k];
                    }
                }
                err_coeff[l] = 1.0;
            }
            (None, None) => unreachable!("pilot presence checked above"),
        }
    }

    Ok(ChannelEstimate {
        num_rx: rx.num_antennas,
        num_symbols: ns,
        fft_size: nf,
        h_hat,
        err_coeff,
    })
}

/// Channel knowledge fed to the equalizer: an LS estimate or the truth.
#[derive(Clone, Copy)]
pub enum Csi<'a> {
    Estimate(&'a ChannelEstimate),
    Perfect(&'a ChannelRealization),
}

impl Csi<'_> {
    #[inline]
    fn at(&self, a: usize, l: usize, k: usize) -> Complex64 {
        match self {
            Csi::Estimate(e) => e.at(a, l, k),
            Csi::Perfect(r) => r.at(a, l, k),
        }
    }

    #[inline]
    fn err_coeff(&self, l: usize) -> f64 {
        match self {
            Csi::Estimate(e) => e.err_coeff[l],
            Csi::Perfect(_) => 0.0,
        }
    }

    fn num_rx(&self) -> usize {
        match self {
            Csi::Estimate(e) => e.num_rx,
            Csi::Perfect(r) => r.num_rx,
        }
    }
}

/// Equalized data symbols with their effective post-equalization noise.
#[derive(Clone, Debug)]
pub struct EqualizedFrame {
    /// One value per data RE in placement order.
    pub x_hat: Vec<Complex64>,
    /// Effective complex noise variance to use when demapping `x_hat`.
    pub post_eq_noise_var: Vec<f64>,
}

/// LMMSE combining across receive antennas for a single transmit stream.
///
/// With h the channel column at one RE and sigma_eff^2 = sigma^2 (perfect
/// CSI) or sigma^2 * (1 + err_coeff) (estimated CSI), the raw LMMSE output
/// is x_raw = h^H y / (|h|^2 + sigma_eff^2), which is biased toward zero by
/// beta = |h|^2 / (|h|^2 + sigma_eff^2). The returned symbol is the
/// bias-compensated x_hat = x_raw / beta = h^H y / |h|^2 with effective
/// noise variance sigma_eff^2 * |g|^2 / beta^2 = sigma_eff^2 / |h|^2, which
/// is exactly what the demapper's AWGN model expects. A vanished channel
/// (|h| = 0, sigma > 0) collapses to the prior mean 0 with a huge variance.
pub fn lmmse_equalize(
    rx: &ResourceGrid,
    csi: Csi<'_>,
    noise_var: f64,
    spec: &GridSpec,
) -> Result<EqualizedFrame, RxError> {
    spec.validate().map_err(RxError::Phy)?;
    if noise_var < 0.0 {
        return Err(RxError::Shape(format!("negative noise variance {noise_var}")));
    }
    let usable = spec.usable_subcarriers();
    let nr = csi.num_rx().min(rx.num_antennas);
    let mut x_hat = Vec::with_capacity(spec.data_capacity());
    let mut post = Vec::with_capacity(spec.data_capacity());
    for &l in &spec.data_symbols() {
        let sigma_eff = noise_var * (1.0 + csi.err_coeff(l));
        for &k in &usable {
            let mut hh = 0.0;
            let mut hy = Complex64::new(0.0, 0.0);
            for a in 0..nr {
                let h = csi.at(a, l, k);
                hh += h.norm_sqr();
                hy += h.conj() * rx.at(a, l, k);
            }
            if hh + sigma_eff == 0.0 {
                return Err(RxError::Degenerate);
            }
            if hh == 0.0 {
                x_hat.push(Complex64::new(0.0, 0.0));
                post.push(MAX_NOISE_VAR);
            } else {
                x_hat.push(hy / hh);
                post.push((sigma_eff / hh).min(MAX_NOISE_VAR));
            }
        }
    }
    Ok(EqualizedFrame { x_hat, post_eq_noise_var: post })
}

/// Equalize and demap one frame to coded-bit LLRs in frame order.
pub fn equalize_and_demap(
    rx: &ResourceGrid,
    csi: Csi<'_>,
    noise_var: f64,
    spec: &GridSpec,
    constellation: &Constellation,
) -> Result<(Vec<f64>, EqualizedFrame), RxError> {
    let eq = lmmse_equalize(rx, csi, noise_var, spec)?;
    let mut llrs = Vec::with_capacity(eq.x_hat.len() * constellation.bits_per_symbol);
    for (x, &nv) in eq.x_hat.iter().zip(&eq.post_eq_noise_var) {
        let v = constellation
            .llrs(*x, nv.max(MIN_NOISE_VAR), false)
            .map_err(RxError::Phy)?;
        llrs.extend(v);
    }
    Ok((llrs, eq))
}

/// Output of an assembled receive chain for one frame.
#[derive(Clone, Debug)]
pub struct RxOutput {
    /// Information bits, codewords concatenated.
    pub info_bits: Vec<u8>,
    /// Decoded codeword bits, concatenated.
    pub coded_bits: Vec<u8>,
    /// Per-codeword decoder convergence flag.
    pub cw_success: Vec<bool>,
    /// Per-codeword BP iterations used.
    pub iterations: Vec<usize>,
}

fn decode_frame(
    frame_llrs: &[f64],
    code: &Code,
    layout: &FrameLayout,
) -> Result<RxOutput, RxError> {
    let n = code.n();
    let mut out = RxOutput {
        info_bits: Vec::with_capacity(layout.codewords_per_frame * code.k()),
        coded_bits: Vec::with_capacity(layout.codewords_per_frame * n),
        cw_success: Vec::with_capacity(layout.codewords_per_frame),
        iterations: Vec::with_capacity(layout.codewords_per_frame),
    };
    for cw in 0..layout.codewords_per_frame {
        let llrs = &frame_llrs[cw * n..(cw + 1) * n];
        let r = bp_decode(llrs, &code.h, DEFAULT_BP_ITERS, BpMethod::SumProduct)
            .map_err(RxError::Fec)?;
        out.info_bits.extend(code.gen.extract_info(&r.bits));
        out.coded_bits.extend(r.bits);
        out.cw_success.push(r.success);
        out.iterations.push(r.iterations);
    }
    Ok(out)
}

/// LS estimation -> LMMSE -> exact LLRs -> BP(10) -> info extraction.
pub fn baseline_receive(
    rx: &ResourceGrid,
    pilots: &PilotMatrix,
    spec: &GridSpec,
    noise_var: f64,
    constellation: &Constellation,
    code: &Code,
    layout: &FrameLayout,
) -> Result<RxOutput, RxError> {
    let est = ls_estimate(rx, pilots, spec)?;
    let (llrs, _) = equalize_and_demap(rx, Csi::Estimate(&est), noise_var, spec, constellation)?;
    decode_frame(&llrs, code, layout)
}

/// The baseline chain with the true channel in place of the LS estimate.
pub fn perfect_csi_receive(
    rx: &ResourceGrid,
    realization: &ChannelRealization,
    spec: &GridSpec,
    noise_var: f64,
    constellation: &Constellation,
    code: &Code,
    layout: &FrameLayout,
) -> Result<RxOutput, RxError> {
    let (llrs, _) =
        equalize_and_demap(rx, Csi::Perfect(realization), noise_var, spec, constellation)?;
    decode_frame(&llrs, code, layout)
}

#[derive(Debug)]
pub enum RxError {
    MissingPilots,
    /// Zero channel at zero noise: the LMMSE denominator vanishes.
    Degenerate,
    Shape(String),
    Phy(PhyError),
    Fec(FecError),
    Channel(ChannelError),
}

impl fmt::Display for RxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RxError::MissingPilots => write!(f, "spec has no pilot symbols to estimate from"),
            RxError::Degenerate => write!(f, "zero channel at zero noise"),
            RxError::Shape(s) => write!(f, "shape mismatch: {s}"),
            RxError::Phy(e) => write!(f, "{e}"),
            RxError::Fec(e) => write!(f, "{e}"),
            RxError::Channel(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RxError {}

impl From<PhyError> for RxError {
    fn from(e: PhyError) -> Self {
        RxError::Phy(e)
    }
}

impl From<FecError> for RxError {
    fn from(e: FecError) -> Self {
        RxError::Fec(e)
    }
}

impl From<ChannelError> for RxError {
    fn from(e: ChannelError) -> Self {
        RxError::Channel(e)
    }
}
