//! Binary linear block coding: parity-check matrices, systematic encoding,
//! and sum-product belief propagation decoding.
//!
//! The LLR sign convention is fixed repo-wide: positive LLR means bit 0 is
//! more likely. Every producer (demapper, neural front end) and consumer
//! (BP, message-passing decoder) sticks to it.

mod alist;
mod bp;
mod peg;

pub use alist::{emit_alist, load_alist};
pub use bp::{bp_decode, BpMethod, BpResult};
pub use peg::build_regular_ldpc;

use std::fmt;

/// Sparse binary parity-check matrix H (m checks x n bits).
#[derive(Clone, Debug, PartialEq)]
pub struct ParityCheckMatrix {
    pub n: usize,
    pub m: usize,
    /// For each check row, sorted column indices of its ones.
    rows: Vec<Vec<usize>>,
    /// For each bit column, sorted row indices of its ones.
    cols: Vec<Vec<usize>>,
}

impl ParityCheckMatrix {
    /// Build from per-row column index lists. Indices are validated and
    /// deduplicated; rows are sorted.
    pub fn from_rows(n: usize, rows: Vec<Vec<usize>>) -> Result<Self, FecError> {
        let m = rows.len();
        let mut srows = rows;
        let mut cols = vec![Vec::new(); n];
        for (r, row) in srows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            for &c in row.iter() {
                if c >= n {
                    return Err(FecError::Construction(format!(
                        "row {r} references column {c} >= n={n}"
                    )));
                }
                cols[c].push(r);
            }
        }
        Ok(ParityCheckMatrix { n, m, rows: srows, cols })
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.rows[r]
    }

    pub fn col(&self, c: usize) -> &[usize] {
        &self.cols[c]
    }

    /// Number of ones.
    pub fn num_edges(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    /// Rank over GF(2).
    pub fn rank(&self) -> usize {
        let words = self.n.div_ceil(64);
        let mut mat: Vec<Vec<u64>> = self
            .rows
            .iter()
            .map(|row| {
                let mut w = vec![0u64; words];
                for &c in row {
                    w[c / 64] |= 1 << (c % 64);
                }
                w
            })
            .collect();
        let mut rank = 0;
        for col in 0..self.n {
            let (wi, bi) = (col / 64, col % 64);
            let Some(pivot) = (rank..self.m).find(|&r| mat[r][wi] >> bi & 1 == 1) else {
                continue;
            };
            mat.swap(rank, pivot);
            let prow = mat[rank].clone();
            for (r, row) in mat.iter_mut().enumerate() {
                if r != rank && row[wi] >> bi & 1 == 1 {
                    for (a, b) in row.iter_mut().zip(&prow) {
                        *a ^= b;
                    }
                }
            }
            rank += 1;
            if rank == self.m {
                break;
            }
        }
        rank
    }
}

/// GF(2) product H * c^T. Zero iff `bits` is a valid codeword.
pub fn syndrome(bits: &[u8], h: &ParityCheckMatrix) -> Result<Vec<u8>, FecError> {
    if bits.len() != h.n {
        return Err(FecError::LengthMismatch { expected: h.n, actual: bits.len() });
    }
    Ok(h.rows
        .iter()
        .map(|row| row.iter().fold(0u8, |acc, &c| acc ^ (bits[c] & 1)))
        .collect())
}

/// Systematic encoder derived from H by GF(2) Gaussian elimination.
///
/// Pivot columns of the reduced H carry parity; the remaining `k = n - rank`
/// free columns carry the information bits in ascending column order.
#[derive(Clone, Debug)]
pub struct GeneratorMatrix {
    pub k: usize,
    pub n: usize,
    /// Codeword positions holding information bits (ascending).
    info_cols: Vec<usize>,
    /// Codeword positions holding parity bits, one per reduced row.
    pivot_cols: Vec<usize>,
    /// Dense parity part: for each pivot row, a bitmask over the k info bits.
    parity: Vec<Vec<u64>>,
}

impl GeneratorMatrix {
    /// Reduce H once and cache the systematic form.
    pub fn from_pcm(h: &ParityCheckMatrix) -> Result<Self, FecError> {
        let n = h.n;
        let words = n.div_ceil(64);
        let mut mat: Vec<Vec<u64>> = h
            .rows
            .iter()
            .map(|row| {
                let mut w = vec![0u64; words];
                for &c in row {
                    w[c / 64] |= 1 << (c % 64);
                }
                w
            })
            .collect();

        let mut pivot_cols = Vec::new();
        let mut rank = 0;
        for col in 0..n {
            let (wi, bi) = (col / 64, col % 64);
            let Some(pivot) = (rank..h.m).find(|&r| mat[r][wi] >> bi & 1 == 1) else {
                continue;
            };
            mat.swap(rank, pivot);
            let prow = mat[rank].clone();
            for (r, row) in mat.iter_mut().enumerate() {
                if r != rank && row[wi] >> bi & 1 == 1 {
                    for (a, b) in row.iter_mut().zip(&prow) {
                        *a ^= b;
                    }
                }
            }
            pivot_cols.push(col);
            rank += 1;
            if rank == h.m {
                break;
            }
        }
        if rank == n {
            return Err(FecError::Construction("H has full column rank: k = 0".into()));
        }

        let is_pivot = {
            let mut v = vec![false; n];
            for &c in &pivot_cols {
                v[c] = true;
            }
            v
        };
        let info_cols: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
        let k = info_cols.len();
        let kwords = k.div_ceil(64);

        // Row r of the RREF reads c[pivot_cols[r]] = XOR of c over the free
        // columns present in that row.
        let mut parity = Vec::with_capacity(rank);
        for row in mat.iter().take(rank) {
            let mut mask = vec![0u64; kwords];
            for (j, &c) in info_cols.iter().enumerate() {
                if row[c / 64] >> (c % 64) & 1 == 1 {
                    mask[j / 64] |= 1 << (j % 64);
                }
            }
            parity.push(mask);
        }

        Ok(GeneratorMatrix { k, n, info_cols, pivot_cols, parity })
    }

    /// Codeword positions of the information bits.
    pub fn info_positions(&self) -> &[usize] {
        &self.info_cols
    }

    /// Extract the information bits from a codeword-length bit vector.
    pub fn extract_info(&self, codeword: &[u8]) -> Vec<u8> {
        self.info_cols.iter().map(|&c| codeword[c]).collect()
    }
}

/// Codeword bits produced by `encode`.
#[derive(Clone, Debug, PartialEq)]
pub struct Codeword {
    pub bits: Vec<u8>,
}

/// Systematic encoding: info bits land on the generator's info positions,
/// parity on the pivot positions, giving H * c^T = 0.
pub fn encode(info: &[u8], g: &GeneratorMatrix) -> Result<Codeword, FecError> {
    if info.len() != g.k {
        return Err(FecError::LengthMismatch { expected: g.k, actual: info.len() });
    }
    let kwords = g.k.div_ceil(64);
    let mut info_mask = vec![0u64; kwords];
    for (j, &b) in info.iter().enumerate() {
        if b & 1 == 1 {
            info_mask[j / 64] |= 1 << (j % 64);
        }
    }
    let mut bits = vec![0u8; g.n];
    for (j, &c) in g.info_cols.iter().enumerate() {
        bits[c] = info[j] & 1;
    }
    for (r, mask) in g.parity.iter().enumerate() {
        let mut acc = 0u64;
        for (a, b) in mask.iter().zip(&info_mask) {
            acc ^= a & b;
        }
        bits[g.pivot_cols[r]] = (acc.count_ones() & 1) as u8;
    }
    Ok(Codeword { bits })
}

/// Per-bit log-likelihood ratios in codeword order. Positive means bit 0.
#[derive(Clone, Debug, PartialEq)]
pub struct LlrFrame {
    pub values: Vec<f64>,
}

impl LlrFrame {
    pub fn new(values: Vec<f64>, n: usize) -> Result<Self, FecError> {
        if values.len() != n {
            return Err(FecError::LengthMismatch { expected: n, actual: values.len() });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(FecError::Construction("non-finite LLR".into()));
        }
        Ok(LlrFrame { values })
    }
}

/// A parity-check matrix paired with its cached systematic encoder.
#[derive(Clone, Debug)]
pub struct Code {
    pub h: ParityCheckMatrix,
    pub gen: GeneratorMatrix,
}

impl Code {
    pub fn new(h: ParityCheckMatrix) -> Result<Self, FecError> {
        let gen = GeneratorMatrix::from_pcm(&h)?;
        Ok(Code { h, gen })
    }

    pub fn n(&self) -> usize {
        self.h.n
    }

    pub fn k(&self) -> usize {
        self.gen.k
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FecError {
    /// Malformed alist input, with the 1-based line of the offending token.
    Alist { line: usize, msg: String },
    /// Degree combination or construction constraint cannot be met.
    Infeasible(String),
    LengthMismatch { expected: usize, actual: usize },
    Construction(String),
}

impl fmt::Display for FecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FecError::Alist { line, msg } => write!(f, "alist parse error at line {line}: {msg}"),
            FecError::Infeasible(s) => write!(f, "infeasible code parameters: {s}"),
            FecError::LengthMismatch { expected, actual } => {
                write!(f, "length mismatch: expected {expected}, got {actual}")
            }
            FecError::Construction(s) => write!(f, "code construction failed: {s}"),
        }
    }
}

impl std::error::Error for FecError {}

/// The canonical Hamming(7,4) parity-check matrix, columns 1..7 in binary.
/// Used across tests and small demos.
pub fn hamming_7_4() -> ParityCheckMatrix {
    ParityCheckMatrix::from_rows(
        7,
        vec![vec![0, 2, 4, 6], vec![1, 2, 5, 6], vec![3, 4, 5, 6]],
    )
    .expect("static matrix")
}

/// Redundant Hamming(7,4) parity-check matrix for belief propagation: all
/// seven nonzero dual codewords as rows (weight 4 each, column degree 4).
///
/// Any 3-row basis of the dual leaves three degree-1 columns, and BP cannot
/// override a confident channel LLR through a single check. The redundant
/// representation describes the same code (zero syndrome on a basis implies
/// zero on every combination) and brings BP within a few percent of ML.
pub fn hamming_7_4_bp() -> ParityCheckMatrix {
    let basis = [0b1010101u8, 0b0110011, 0b0001111];
    let mut rows = Vec::with_capacity(7);
    for mask in 1u8..8 {
        let mut word = 0u8;
        for (bit, row) in basis.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                word ^= row;
            }
        }
        rows.push((0..7).filter(|&c| word >> (6 - c) & 1 == 1).collect());
    }
    ParityCheckMatrix::from_rows(7, rows).expect("static matrix")
}
