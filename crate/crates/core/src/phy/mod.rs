//! Modulation, soft demapping, and OFDM resource-grid mapping.

mod constellation;
mod grid;

pub use constellation::Constellation;
pub use grid::{
    grid_demap, grid_map, pilot_values, FrameLayout, GridSpec, PilotMatrix, ResourceGrid,
};

use std::fmt;

#[derive(Clone, Debug, PartialEq)]
pub enum PhyError {
    /// Bit count not divisible by bits per symbol.
    BitCount { len: usize, bits_per_symbol: usize },
    /// Noise variance must be strictly positive.
    BadNoiseVar(f64),
    /// Symbol count does not match the grid capacity.
    CountMismatch { expected: usize, actual: usize },
    BadSpec(String),
}

impl fmt::Display for PhyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhyError::BitCount { len, bits_per_symbol } => {
                write!(f, "{len} bits not divisible by {bits_per_symbol} bits/symbol")
            }
            PhyError::BadNoiseVar(v) => write!(f, "noise variance must be positive, got {v}"),
            PhyError::CountMismatch { expected, actual } => {
                write!(f, "expected {expected} data symbols, got {actual}")
            }
            PhyError::BadSpec(s) => write!(f, "invalid grid/constellation spec: {s}"),
        }
    }
}

impl std::error::Error for PhyError {}

#[cfg(test)]
mod tests;
