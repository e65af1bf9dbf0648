//! Bit-to-symbol mapping and soft demapping.
//!
//! Conventions, fixed repo-wide:
//! - a point's label is its index: label bits MSB-first, so point `p[i]`
//!   carries the bits of `i`;
//! - square QAM uses independent per-axis Gray coding with the first half of
//!   the label on I and the second half on Q; label bit 0 selects the I sign
//!   with 0 -> positive (QPSK: bits 00 -> (+1+j)/sqrt(2));
//! - all constellations have unit average energy;
//! - LLRs are positive when bit 0 is more likely.

use num_complex::Complex64;

use super::PhyError;

/// 32-cross labeling (quasi-Gray), found by direct search: 50 of the 52
/// lattice-adjacent pairs differ in exactly one bit, which is the best
/// achievable count for this constellation — an exhaustive search shows no
/// labeling makes all 52 adjacent pairs differ in a single bit.
/// Entries are (I amplitude, Q amplitude, label) before normalization.
const CROSS32: [(i32, i32, u8); 32] = [
    (-3, 5, 0b10010),
    (-1, 5, 0b10110),
    (1, 5, 0b10111),
    (3, 5, 0b00111),
    (-5, 3, 0b00000),
    (-3, 3, 0b10000),
    (-1, 3, 0b10100),
    (1, 3, 0b10101),
    (3, 3, 0b00101),
    (5, 3, 0b00001),
    (-5, 1, 0b00100),
    (-3, 1, 0b01100),
    (-1, 1, 0b11100),
    (1, 1, 0b11101),
    (3, 1, 0b01101),
    (5, 1, 0b01001),
    (-5, -1, 0b00110),
    (-3, -1, 0b01110),
    (-1, -1, 0b11110),
    (1, -1, 0b11111),
    (3, -1, 0b01111),
    (5, -1, 0b01011),
    (-5, -3, 0b00010),
    (-3, -3, 0b01010),
    (-1, -3, 0b11010),
    (1, -3, 0b11011),
    (3, -3, 0b10011),
    (5, -3, 0b00011),
    (-3, -5, 0b01000),
    (-1, -5, 0b11000),
    (1, -5, 0b11001),
    (3, -5, 0b10001),
];

/// A unit-energy constellation with its bit labeling.
#[derive(Clone, Debug)]
pub struct Constellation {
    pub name: &'static str,
    /// Modulation order Q.
    pub order: usize,
    /// log2(Q) bits per symbol.
    pub bits_per_symbol: usize,
    /// Points indexed by label.
    points: Vec<Complex64>,
}

fn gray_to_binary(mut g: usize) -> usize {
    let mut b = g;
    while g > 0 {
        g >>= 1;
        b ^= g;
    }
    b
}

impl Constellation {
    /// Look up by name: `qpsk`, `qam16`, `qam32`, `qam64`.
    pub fn by_name(name: &str) -> Result<Self, PhyError> {
        match name {
            "qpsk" => Ok(Self::square("qpsk", 4)),
            "qam16" => Ok(Self::square("qam16", 16)),
            "qam32" => Ok(Self::cross32()),
            "qam64" => Ok(Self::square("qam64", 64)),
            other => Err(PhyError::BadSpec(format!("unknown constellation `{other}`"))),
        }
    }

    /// Square QAM with independent per-axis Gray coding.
    fn square(name: &'static str, order: usize) -> Self {
        let bits = order.trailing_zeros() as usize;
        let half = bits / 2;
        let levels = 1usize << half;
        // mean |p|^2 of the unnormalized grid is 2(L^2-1)/3
        let scale = (3.0 / (2.0 * (levels * levels - 1) as f64)).sqrt();
        let amp = |label_part: usize| -> f64 {
            // Gray label -> level index; index 0 is the most positive level,
            // which puts label 0 on the positive side of each axis.
            let i = gray_to_binary(label_part);
            ((levels - 1) as f64 - 2.0 * i as f64) * scale
        };
        let points = (0..order)
            .map(|label| {
                let i_part = label >> half;
                let q_part = label & (levels - 1);
                Complex64::new(amp(i_part), amp(q_part))
            })
            .collect();
        Constellation { name, order, bits_per_symbol: bits, points }
    }

    /// 32-point cross constellation with the frozen quasi-Gray table.
    fn cross32() -> Self {
        let scale = (1.0 / 20.0f64).sqrt();
        let mut points = vec![Complex64::new(0.0, 0.0); 32];
        for &(i, q, label) in &CROSS32 {
            points[label as usize] = Complex64::new(i as f64 * scale, q as f64 * scale);
        }
        Constellation { name: "qam32", order: 32, bits_per_symbol: 5, points }
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Map a bit sequence (length divisible by bits_per_symbol) to symbols.
    pub fn map_bits(&self, bits: &[u8]) -> Result<Vec<Complex64>, PhyError> {
        let b = self.bits_per_symbol;
        if bits.len() % b != 0 {
            return Err(PhyError::BitCount { len: bits.len(), bits_per_symbol: b });
        }
        Ok(bits
            .chunks_exact(b)
            .map(|chunk| {
                let label = chunk.iter().fold(0usize, |acc, &bit| (acc << 1) | (bit & 1) as usize);
                self.points[label]
            })
            .collect())
    }

    /// Nearest-point hard decision, returning label bits.
    pub fn hard_demap(&self, symbols: &[Complex64]) -> Vec<u8> {
        let b = self.bits_per_symbol;
        let mut out = Vec::with_capacity(symbols.len() * b);
        for &y in symbols {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (label, &p) in self.points.iter().enumerate() {
                let d = (y - p).norm_sqr();
                if d < best_d {
                    best_d = d;
                    best = label;
                }
            }
            for i in (0..b).rev() {
                out.push(((best >> i) & 1) as u8);
            }
        }
        out
    }

    /// Exact log-MAP LLRs for one equalized symbol under complex AWGN with
    /// variance `noise_var`:
    /// `LLR(b_i) = log sum_{p: bit_i=0} exp(-|y-p|^2/nv) - log sum_{bit_i=1} ...`
    /// The max-log variant replaces each log-sum with the dominant term.
    pub fn llrs(&self, y: Complex64, noise_var: f64, max_log: bool) -> Result<Vec<f64>, PhyError> {
        if !(noise_var > 0.0) {
            return Err(PhyError::BadNoiseVar(noise_var));
        }
        let b = self.bits_per_symbol;
        let inv = 1.0 / noise_var;
        // metric per point: -|y-p|^2 / noise_var
        let metrics: Vec<f64> = self.points.iter().map(|&p| -(y - p).norm_sqr() * inv).collect();
        let mut out = Vec::with_capacity(b);
        for i in 0..b {
            let shift = b - 1 - i;
            if max_log {
                let m0 = metrics
                    .iter()
                    .enumerate()
                    .filter(|(l, _)| l >> shift & 1 == 0)
                    .map(|(_, &m)| m)
                    .fold(f64::NEG_INFINITY, f64::max);
                let m1 = metrics
                    .iter()
                    .enumerate()
                    .filter(|(l, _)| l >> shift & 1 == 1)
                    .map(|(_, &m)| m)
                    .fold(f64::NEG_INFINITY, f64::max);
                out.push(m0 - m1);
            } else {
                out.push(logsumexp_subset(&metrics, shift, 0) - logsumexp_subset(&metrics, shift, 1));
            }
        }
        Ok(out)
    }
}

fn logsumexp_subset(metrics: &[f64], shift: usize, bit: usize) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for (label, &m) in metrics.iter().enumerate() {
        if label >> shift & 1 == bit && m > mx {
            mx = m;
        }
    }
    let mut sum = 0.0;
    for (label, &m) in metrics.iter().enumerate() {
        if label >> shift & 1 == bit {
            sum += (m - mx).exp();
        }
    }
    mx + sum.ln()
}
