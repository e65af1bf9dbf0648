//! Stochastic channel realization and application.
//!
//! Three models:
//! - `Ideal`: H = 1 on every antenna (pure AWGN once noise is added);
//! - `FlatRayleigh`: one complex Gaussian coefficient per antenna, constant
//!   across frequency, evolving over OFDM symbols with a Jakes Doppler
//!   spectrum;
//! - `Tdl`: a tapped delay line with an exponential power-delay profile whose
//!   RMS delay spread matches the configured value; each tap fades with its
//!   own Jakes process, and the frequency response is the Fourier sum of the
//!   taps, H[k,l] = sum_i c_i(l) * exp(-j 2 pi k df tau_i).
//!
//! Receive antennas fade independently. Time is measured in OFDM symbols of
//! duration 1/subcarrier_spacing (no cyclic prefix is modeled). Average
//! power is normalized so E[|H|^2] = 1; large-scale gain (path loss,
//! shadowing) is absorbed by the SNR axis rather than modeled here.
//!
//! Jakes fading uses a Gaussian-weighted sum of sinusoids (32 oscillators,
//! complex Gaussian amplitudes, random arrival angles and phases), which
//! gives true Rayleigh envelope statistics and the classic Doppler spectrum.

use num_complex::Complex64;
use std::fmt;

use crate::phy::{GridSpec, ResourceGrid};
use crate::rng::Rng;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const NUM_OSCILLATORS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelModel {
    Ideal,
    FlatRayleigh,
    Tdl,
}

impl ChannelModel {
    pub fn by_name(name: &str) -> Result<Self, ChannelError> {
        match name {
            "ideal" => Ok(ChannelModel::Ideal),
            "flat_rayleigh" => Ok(ChannelModel::FlatRayleigh),
            "tdl" => Ok(ChannelModel::Tdl),
            other => Err(ChannelError::UnknownModel(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ChannelModel::Ideal => "ideal",
            ChannelModel::FlatRayleigh => "flat_rayleigh",
            ChannelModel::Tdl => "tdl",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpec {
    pub model: ChannelModel,
    /// RMS delay spread in seconds.
    pub delay_spread: f64,
    /// [min, max] vehicle speed in km/h; drawn uniformly per frame.
    pub speed_range_kmh: [f64; 2],
    pub carrier_freq: f64,
    pub subcarrier_spacing: f64,
    pub num_rx: usize,
    pub num_taps: usize,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec {
            model: ChannelModel::Tdl,
            delay_spread: 266e-9,
            speed_range_kmh: [0.0, 120.0],
            carrier_freq: 28e9,
            subcarrier_spacing: 240e3,
            num_rx: 2,
            num_taps: 8,
        }
    }
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.delay_spread <= 0.0 && self.model == ChannelModel::Tdl && self.num_taps > 1 {
            return Err(ChannelError::BadSpec("delay spread must be positive".into()));
        }
        if self.speed_range_kmh[0] < 0.0 || self.speed_range_kmh[1] < self.speed_range_kmh[0] {
            return Err(ChannelError::BadSpec(format!(
                "bad speed range {:?}",
                self.speed_range_kmh
            )));
        }
        if self.num_rx == 0 {
            return Err(ChannelError::BadSpec("at least one receive antenna".into()));
        }
        if self.model == ChannelModel::Tdl && self.num_taps == 0 {
            return Err(ChannelError::BadSpec("tdl needs at least one tap".into()));
        }
        Ok(())
    }
}

/// Doppler frequency f_d = v * f_c / c for speed in km/h.
pub fn doppler(speed_kmh: f64, carrier_hz: f64) -> f64 {
    (speed_kmh / 3.6) * carrier_hz / SPEED_OF_LIGHT
}

/// Tap delays and average powers of the exponential profile. Delays are
/// uniformly spaced over [0, 4 * delay_spread]; the decay constant is
/// bisected so the discrete RMS delay spread matches `delay_spread`.
#[derive(Clone, Debug, PartialEq)]
pub struct TapSet {
    pub delays: Vec<f64>,
    pub powers: Vec<f64>,
}

pub fn exponential_tap_set(delay_spread: f64, num_taps: usize) -> TapSet {
    if num_taps <= 1 || delay_spread <= 0.0 {
        return TapSet { delays: vec![0.0], powers: vec![1.0] };
    }
    let span = 4.0 * delay_spread;
    let dt = span / (num_taps - 1) as f64;
    let delays: Vec<f64> = (0..num_taps).map(|i| i as f64 * dt).collect();

    let rms = |gamma: f64| -> f64 {
        let w: Vec<f64> = delays.iter().map(|&t| (-t / gamma).exp()).collect();
        let sum: f64 = w.iter().sum();
        let mean: f64 = delays.iter().zip(&w).map(|(t, p)| t * p).sum::<f64>() / sum;
        let m2: f64 = delays.iter().zip(&w).map(|(t, p)| t * t * p).sum::<f64>() / sum;
        (m2 - mean * mean).max(0.0).sqrt()
    };

    let (mut lo, mut hi) = (delay_spread * 1e-3, delay_spread * 1e3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rms(mid) < delay_spread {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gamma = 0.5 * (lo + hi);
    let mut powers: Vec<f64> = delays.iter().map(|&t| (-t / gamma).exp()).collect();
    let total: f64 = powers.iter().sum();
    powers.iter_mut().for_each(|p| *p /= total);
    TapSet { delays, powers }
}

/// One Jakes fading process: unit average power, evaluated at arbitrary time.
#[derive(Clone, Debug)]
struct JakesProcess {
    /// Complex oscillator amplitudes, phase and 1/sqrt(2N) scale folded in.
    amps: Vec<Complex64>,
    /// Angular Doppler of each oscillator: 2 pi f_d cos(alpha_n).
    omegas: Vec<f64>,
}

impl JakesProcess {
    fn new(doppler_hz: f64, rng: &mut Rng) -> Self {
        let scale = 1.0 / (2.0 * NUM_OSCILLATORS as f64).sqrt();
        let mut amps = Vec::with_capacity(NUM_OSCILLATORS);
        let mut omegas = Vec::with_capacity(NUM_OSCILLATORS);
        for _ in 0..NUM_OSCILLATORS {
            let a = rng.gaussian();
            let b = rng.gaussian();
            let alpha = rng.uniform_range(-std::f64::consts::PI, std::f64::consts::PI);
            let phase = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
            let rot = Complex64::new(phase.cos(), phase.sin());
            amps.push(Complex64::new(a, b) * rot * scale);
            omegas.push(2.0 * std::f64::consts::PI * doppler_hz * alpha.cos());
        }
        JakesProcess { amps, omegas }
    }

    fn eval(&self, t: f64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (a, &w) in self.amps.iter().zip(&self.omegas) {
            let ph = w * t;
            acc += a * Complex64::new(ph.cos(), ph.sin());
        }
        acc
    }
}

/// Per-tap fading coefficients of a TDL realization, kept for diagnostics
/// and for checking the frequency response against a direct Fourier sum.
#[derive(Clone, Debug)]
pub struct TdlCoeffs {
    pub delays: Vec<f64>,
    /// c[(antenna * num_symbols + l) * num_taps + i]
    pub coeffs: Vec<Complex64>,
    pub num_taps: usize,
}

/// Frequency response per resource element and receive antenna, plus the
/// noise variance to apply and the speed drawn for this frame.
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    pub num_rx: usize,
    pub num_symbols: usize,
    pub fft_size: usize,
    h: Vec<Complex64>,
    pub noise_var: f64,
    pub speed_kmh: f64,
    pub tdl: Option<TdlCoeffs>,
}

impl ChannelRealization {
    #[inline]
    pub fn at(&self, antenna: usize, l: usize, k: usize) -> Complex64 {
        self.h[(antenna * self.num_symbols + l) * self.fft_size + k]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.h
    }
}

/// Draw a channel realization for one frame. Deterministic per
/// (spec, grid_spec, noise_var, seed).
pub fn realize(
    spec: &ChannelSpec,
    grid_spec: &GridSpec,
    noise_var: f64,
    seed: u64,
) -> Result<ChannelRealization, ChannelError> {
    spec.validate()?;
    let (ns, nf) = (grid_spec.num_symbols, grid_spec.fft_size);
    let mut rng = Rng::new(seed);
    let speed_kmh = rng.uniform_range(spec.speed_range_kmh[0], spec.speed_range_kmh[1]);
    let fd = doppler(speed_kmh, spec.carrier_freq);
    let t_sym = 1.0 / spec.subcarrier_spacing;

    let mut h = vec![Complex64::new(0.0, 0.0); spec.num_rx * ns * nf];
    let mut tdl = None;

    match spec.model {
        ChannelModel::Ideal => {
            h.iter_mut().for_each(|v| *v = Complex64::new(1.0, 0.0));
        }
        ChannelModel::FlatRayleigh => {
            for a in 0..spec.num_rx {
                let proc = JakesProcess::new(fd, &mut rng);
                for l in 0..ns {
                    let g = proc.eval(l as f64 * t_sym);
                    for k in 0..nf {
                        h[(a * ns + l) * nf + k] = g;
                    }
                }
            }
        }
        ChannelModel::Tdl => {
            let taps = exponential_tap_set(spec.delay_spread, spec.num_taps);
            let nt = taps.delays.len();
            let mut coeffs = vec![Complex64::new(0.0, 0.0); spec.num_rx * ns * nt];
            for a in 0..spec.num_rx {
                let procs: Vec<JakesProcess> =
                    (0..nt).map(|_| JakesProcess::new(fd, &mut rng)).collect();
                for l in 0..ns {
                    let t = l as f64 * t_sym;
                    for (i, proc) in procs.iter().enumerate() {
                        coeffs[(a * ns + l) * nt + i] = taps.powers[i].sqrt() * proc.eval(t);
                    }
                }
            }
            // H[k] via phasor recursion along k.
            let steps: Vec<Complex64> = taps
                .delays
                .iter()
                .map(|&tau| {
                    let th = -2.0 * std::f64::consts::PI * spec.subcarrier_spacing * tau;
                    Complex64::new(th.cos(), th.sin())
                })
                .collect();
            for a in 0..spec.num_rx {
                for l in 0..ns {
                    let c = &coeffs[(a * ns + l) * nt..(a * ns + l + 1) * nt];
                    let mut phasor: Vec<Complex64> = vec![Complex64::new(1.0, 0.0); nt];
                    for k in 0..nf {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for i in 0..nt {
                            acc += c[i] * phasor[i];
                        }
                        h[(a * ns + l) * nf + k] = acc;
                        for i in 0..nt {
                            phasor[i] *= steps[i];
                        }
                    }
                }
            }
            tdl = Some(TdlCoeffs { delays: taps.delays, coeffs, num_taps: nt });
        }
    }

    Ok(ChannelRealization {
        num_rx: spec.num_rx,
        num_symbols: ns,
        fft_size: nf,
        h,
        noise_var,
        speed_kmh,
        tdl,
    })
}

/// Pass a single-stream transmit grid through the realization: per-RE
/// multiply plus complex Gaussian noise of variance `noise_var` per receive
/// antenna. Noise is drawn in (antenna, symbol, subcarrier) order.
pub fn apply(
    grid: &ResourceGrid,
    real: &ChannelRealization,
    seed: u64,
) -> Result<ResourceGrid, ChannelError> {
    if grid.num_antennas != 1 {
        return Err(ChannelError::Shape("transmit grid must have one stream".into()));
    }
    if grid.num_symbols != real.num_symbols || grid.fft_size != real.fft_size {
        return Err(ChannelError::Shape(format!(
            "grid {}x{} vs realization {}x{}",
            grid.num_symbols, grid.fft_size, real.num_symbols, real.fft_size
        )));
    }
    let mut rng = Rng::new(seed);
    let sigma_dim = (real.noise_var * 0.5).sqrt();
    let mut out = ResourceGrid::zeros(real.num_rx, real.num_symbols, real.fft_size);
    for a in 0..real.num_rx {
        for l in 0..real.num_symbols {
            for k in 0..real.fft_size {
                let noise = Complex64::new(sigma_dim * rng.gaussian(), sigma_dim * rng.gaussian());
                *out.at_mut(a, l, k) = real.at(a, l, k) * grid.at(0, l, k) + noise;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChannelError {
    UnknownModel(String),
    BadSpec(String),
    Shape(String),
}

impl fmt::Display for ChannelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelError::UnknownModel(m) => write!(f, "unknown channel model `{m}`"),
            ChannelError::BadSpec(s) => write!(f, "invalid channel spec: {s}"),
            ChannelError::Shape(s) => write!(f, "shape mismatch: {s}"),
        }
    }
}

impl std::error::Error for ChannelError {}
