//! OFDM resource grid: mapping data and pilots onto (symbol, subcarrier)
//! positions and back.
//!
//! The channel acts per resource element in the frequency domain, so no
//! time-domain IFFT/CP is modeled; "FFT size" is the total subcarrier count.
//!
//! Placement order is the repo-wide bit-ordering contract: data resource
//! elements are enumerated symbol-major (ascending data symbol, then
//! ascending usable subcarrier), and bit i of the frame's coded stream lands
//! on data RE i / bits_per_symbol at bit position i % bits_per_symbol. The
//! message-passing decoder's variable-node order relies on this.

use num_complex::Complex64;

use super::{Constellation, PhyError};
use crate::rng::Rng;

/// Grid geometry. Pilots occupy whole OFDM symbols on every usable
/// subcarrier (time mask x all-ones frequency mask).
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub fft_size: usize,
    /// [left, right] guard carrier counts.
    pub guards: [usize; 2],
    pub num_symbols: usize,
    pub pilot_symbol_indices: Vec<usize>,
    pub dc_null: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            fft_size: 129,
            guards: [12, 12],
            num_symbols: 16,
            pilot_symbol_indices: vec![2, 11],
            dc_null: false,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), PhyError> {
        if self.guards[0] + self.guards[1] >= self.fft_size {
            return Err(PhyError::BadSpec(format!(
                "guards {:?} leave no usable subcarriers of {}",
                self.guards, self.fft_size
            )));
        }
        if self.num_symbols == 0 {
            return Err(PhyError::BadSpec("zero OFDM symbols".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &p in &self.pilot_symbol_indices {
            if p >= self.num_symbols {
                return Err(PhyError::BadSpec(format!(
                    "pilot symbol {p} out of {} symbols",
                    self.num_symbols
                )));
            }
            if !seen.insert(p) {
                return Err(PhyError::BadSpec(format!("duplicate pilot symbol {p}")));
            }
        }
        if self.pilot_symbol_indices.len() >= self.num_symbols {
            return Err(PhyError::BadSpec("no data symbols left".into()));
        }
        Ok(())
    }

    /// Absolute indices of usable (non-guard, non-DC) subcarriers, ascending.
    pub fn usable_subcarriers(&self) -> Vec<usize> {
        let dc = self.fft_size / 2;
        (self.guards[0]..self.fft_size - self.guards[1])
            .filter(|&k| !(self.dc_null && k == dc))
            .collect()
    }

    pub fn num_usable(&self) -> usize {
        self.usable_subcarriers().len()
    }

    /// Indices of data-bearing OFDM symbols, ascending.
    pub fn data_symbols(&self) -> Vec<usize> {
        (0..self.num_symbols)
            .filter(|l| !self.pilot_symbol_indices.contains(l))
            .collect()
    }

    pub fn is_pilot_symbol(&self, l: usize) -> bool {
        self.pilot_symbol_indices.contains(&l)
    }

    /// Data resource elements per frame.
    pub fn data_capacity(&self) -> usize {
        self.num_usable() * self.data_symbols().len()
    }
}

/// Complex values indexed by (antenna, OFDM symbol, subcarrier).
#[derive(Clone, Debug, PartialEq)]
pub struct ResourceGrid {
    pub num_antennas: usize,
    pub num_symbols: usize,
    pub fft_size: usize,
    values: Vec<Complex64>,
}

impl ResourceGrid {
    pub fn zeros(num_antennas: usize, num_symbols: usize, fft_size: usize) -> Self {
        ResourceGrid {
            num_antennas,
            num_symbols,
            fft_size,
            values: vec![Complex64::new(0.0, 0.0); num_antennas * num_symbols * fft_size],
        }
    }

    #[inline]
    pub fn at(&self, antenna: usize, l: usize, k: usize) -> Complex64 {
        self.values[(antenna * self.num_symbols + l) * self.fft_size + k]
    }

    #[inline]
    pub fn at_mut(&mut self, antenna: usize, l: usize, k: usize) -> &mut Complex64 {
        &mut self.values[(antenna * self.num_symbols + l) * self.fft_size + k]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
}

/// Known pilot symbols, indexed (pilot symbol position, usable subcarrier
/// position) following the orders in `GridSpec`.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotMatrix {
    pub num_pilot_symbols: usize,
    pub num_usable: usize,
    values: Vec<Complex64>,
}

impl PilotMatrix {
    #[inline]
    pub fn at(&self, pilot_pos: usize, usable_pos: usize) -> Complex64 {
        self.values[pilot_pos * self.num_usable + usable_pos]
    }
}

/// Unit-magnitude QPSK pilots, deterministic per seed and known to both ends.
pub fn pilot_values(spec: &GridSpec, seed: u64) -> PilotMatrix {
    let mut rng = Rng::new(seed);
    let np = spec.pilot_symbol_indices.len();
    let nu = spec.num_usable();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let values = (0..np * nu)
        .map(|_| {
            Complex64::new(
                if rng.bit() == 0 { s } else { -s },
                if rng.bit() == 0 { s } else { -s },
            )
        })
        .collect();
    PilotMatrix { num_pilot_symbols: np, num_usable: nu, values }
}

/// Map data symbols and pilots onto a single-stream transmit grid.
/// Guard (and DC, when nulled) entries stay exactly zero.
pub fn grid_map(
    data_symbols: &[Complex64],
    pilots: &PilotMatrix,
    spec: &GridSpec,
) -> Result<ResourceGrid, PhyError> {
    spec.validate()?;
    let expected = spec.data_capacity();
    if data_symbols.len() != expected {
        return Err(PhyError::CountMismatch { expected, actual: data_symbols.len() });
    }
    if pilots.num_pilot_symbols != spec.pilot_symbol_indices.len()
        || pilots.num_usable != spec.num_usable()
    {
        return Err(PhyError::BadSpec("pilot matrix does not match the grid spec".into()));
    }
    let usable = spec.usable_subcarriers();
    let mut grid = ResourceGrid::zeros(1, spec.num_symbols, spec.fft_size);
    for (pp, &l) in spec.pilot_symbol_indices.iter().enumerate() {
        for (up, &k) in usable.iter().enumerate() {
            *grid.at_mut(0, l, k) = pilots.at(pp, up);
        }
    }
    let mut it = data_symbols.iter();
    for &l in &spec.data_symbols() {
        for &k in &usable {
            *grid.at_mut(0, l, k) = *it.next().expect("count checked");
        }
    }
    Ok(grid)
}

/// Inverse of `grid_map` placement on one antenna plane: data-position values
/// in placement order plus the observations at pilot positions.
pub fn grid_demap(
    grid: &ResourceGrid,
    spec: &GridSpec,
    antenna: usize,
) -> Result<(Vec<Complex64>, Vec<Complex64>), PhyError> {
    spec.validate()?;
    if grid.num_symbols != spec.num_symbols || grid.fft_size != spec.fft_size {
        return Err(PhyError::BadSpec(format!(
            "grid {}x{} does not match spec {}x{}",
            grid.num_symbols, grid.fft_size, spec.num_symbols, spec.fft_size
        )));
    }
    if antenna >= grid.num_antennas {
        return Err(PhyError::BadSpec(format!(
            "antenna {antenna} out of {}",
            grid.num_antennas
        )));
    }
    let usable = spec.usable_subcarriers();
    let mut data = Vec::with_capacity(spec.data_capacity());
    for &l in &spec.data_symbols() {
        for &k in &usable {
            data.push(grid.at(antenna, l, k));
        }
    }
    let mut pilot_obs = Vec::with_capacity(spec.pilot_symbol_indices.len() * usable.len());
    for &l in &spec.pilot_symbol_indices {
        for &k in &usable {
            pilot_obs.push(grid.at(antenna, l, k));
        }
    }
    Ok((data, pilot_obs))
}

/// Frame-level bit layout: how many codewords fit, where the filler starts.
///
/// A frame carries `floor(capacity * bits_per_symbol / n)` whole codewords;
/// the remaining resource elements are filled with zero bits (modulated like
/// data, ignored on receive).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLayout {
    pub bits_per_symbol: usize,
    pub data_res: usize,
    /// Coded bits the grid can carry.
    pub frame_bits: usize,
    pub codeword_len: usize,
    pub codewords_per_frame: usize,
    /// frame_bits - codewords * n, all-zero filler at the tail.
    pub filler_bits: usize,
}

impl FrameLayout {
    pub fn new(spec: &GridSpec, constellation: &Constellation, codeword_len: usize) -> Result<Self, PhyError> {
        spec.validate()?;
        let data_res = spec.data_capacity();
        let frame_bits = data_res * constellation.bits_per_symbol;
        let codewords_per_frame = frame_bits / codeword_len;
        if codewords_per_frame == 0 {
            return Err(PhyError::BadSpec(format!(
                "frame carries {frame_bits} coded bits, codeword needs {codeword_len}"
            )));
        }
        Ok(FrameLayout {
            bits_per_symbol: constellation.bits_per_symbol,
            data_res,
            frame_bits,
            codeword_len,
            codewords_per_frame,
            filler_bits: frame_bits - codewords_per_frame * codeword_len,
        })
    }

    /// Coded-bit capacity used by real codewords.
    pub fn used_bits(&self) -> usize {
        self.codewords_per_frame * self.codeword_len
    }
}
