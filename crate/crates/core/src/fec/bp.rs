//! Iterative belief propagation decoding in the LLR domain.
//!
//! Flooding schedule. Check-node updates use the exact tanh rule by default
//! (sum-product); min-sum is available behind the method flag. Message
//! magnitudes saturate at +/-20 to keep atanh and the products finite.
//! Decoding stops early as soon as the hard decision has zero syndrome.

use super::{syndrome, FecError, ParityCheckMatrix};

/// Cap on message magnitude.
const MSG_CLIP: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BpMethod {
    /// Exact sum-product (tanh rule).
    SumProduct,
    /// Min-sum approximation.
    MinSum,
}

#[derive(Clone, Debug)]
pub struct BpResult {
    /// Hard decision per codeword bit.
    pub bits: Vec<u8>,
    /// True iff the output has zero syndrome.
    pub success: bool,
    /// Message-passing iterations actually performed.
    pub iterations: usize,
    /// A-posteriori LLRs at exit.
    pub app_llrs: Vec<f64>,
}

struct Graph {
    /// Edge ids grouped per check: edges[check_start[c]..check_start[c+1]].
    check_start: Vec<usize>,
    /// Variable of each edge, in check-major order.
    edge_var: Vec<usize>,
    /// Edge ids incident to each variable.
    var_edges: Vec<Vec<usize>>,
}

impl Graph {
    fn new(h: &ParityCheckMatrix) -> Self {
        let mut check_start = Vec::with_capacity(h.m + 1);
        let mut edge_var = Vec::with_capacity(h.num_edges());
        let mut var_edges = vec![Vec::new(); h.n];
        check_start.push(0);
        for c in 0..h.m {
            for &v in h.row(c) {
                var_edges[v].push(edge_var.len());
                edge_var.push(v);
            }
            check_start.push(edge_var.len());
        }
        Graph { check_start, edge_var, var_edges }
    }
}

fn hard_decision(llrs: &[f64]) -> Vec<u8> {
    llrs.iter().map(|&l| if l < 0.0 { 1 } else { 0 }).collect()
}

#[inline]
fn clip(x: f64) -> f64 {
    x.clamp(-MSG_CLIP, MSG_CLIP)
}

/// Decode channel LLRs against H. `max_iters = 0` returns the hard decision
/// of the input. The success flag is true iff the returned bits satisfy every
/// parity check.
pub fn bp_decode(
    llrs: &[f64],
    h: &ParityCheckMatrix,
    max_iters: usize,
    method: BpMethod,
) -> Result<BpResult, FecError> {
    if llrs.len() != h.n {
        return Err(FecError::LengthMismatch { expected: h.n, actual: llrs.len() });
    }

    let bits = hard_decision(llrs);
    if max_iters == 0 || syndrome(&bits, h)?.iter().all(|&s| s == 0) {
        let success = syndrome(&bits, h)?.iter().all(|&s| s == 0);
        return Ok(BpResult { bits, success, iterations: 0, app_llrs: llrs.to_vec() });
    }

    let g = Graph::new(h);
    let ne = g.edge_var.len();
    let mut v2c: Vec<f64> = g.edge_var.iter().map(|&v| clip(llrs[v])).collect();
    let mut c2v = vec![0.0f64; ne];
    let mut app = llrs.to_vec();

    // scratch per check row
    let max_deg = (0..h.m).map(|c| h.row(c).len()).max().unwrap_or(0);
    let mut fwd = vec![0.0f64; max_deg + 1];
    let mut bwd = vec![0.0f64; max_deg + 1];

    let mut iterations = 0;
    for _ in 0..max_iters {
        // Check-node update with prefix/suffix combining (no division).
        for c in 0..h.m {
            let lo = g.check_start[c];
            let hi = g.check_start[c + 1];
            let deg = hi - lo;
            match method {
                BpMethod::SumProduct => {
                    fwd[0] = 1.0;
                    for (i, e) in (lo..hi).enumerate() {
                        fwd[i + 1] = fwd[i] * (v2c[e] * 0.5).tanh();
                    }
                    bwd[deg] = 1.0;
                    for (i, e) in (lo..hi).enumerate().rev() {
                        bwd[i] = bwd[i + 1] * (v2c[e] * 0.5).tanh();
                    }
                    for (i, e) in (lo..hi).enumerate() {
                        let p = (fwd[i] * bwd[i + 1]).clamp(-(1.0 - 1e-12), 1.0 - 1e-12);
                        c2v[e] = clip(2.0 * p.atanh());
                    }
                }
                BpMethod::MinSum => {
                    // prefix/suffix of (sign, min magnitude)
                    fwd[0] = f64::INFINITY;
                    bwd[deg] = f64::INFINITY;
                    let mut fsign = vec![1.0f64; deg + 1];
                    let mut bsign = vec![1.0f64; deg + 1];
                    for (i, e) in (lo..hi).enumerate() {
                        fwd[i + 1] = fwd[i].min(v2c[e].abs());
                        fsign[i + 1] = fsign[i] * if v2c[e] < 0.0 { -1.0 } else { 1.0 };
                    }
                    for (i, e) in (lo..hi).enumerate().rev() {
                        bwd[i] = bwd[i + 1].min(v2c[e].abs());
                        bsign[i] = bsign[i + 1] * if v2c[e] < 0.0 { -1.0 } else { 1.0 };
                    }
                    for (i, e) in (lo..hi).enumerate() {
                        let mag = fwd[i].min(bwd[i + 1]);
                        let sign = fsign[i] * bsign[i + 1];
                        c2v[e] = clip(sign * mag);
                    }
                }
            }
        }

        // Variable-node update and a-posteriori LLRs.
        for v in 0..h.n {
            let total: f64 = g.var_edges[v].iter().map(|&e| c2v[e]).sum();
            app[v] = llrs[v] + total;
            for &e in &g.var_edges[v] {
                v2c[e] = clip(app[v] - c2v[e]);
            }
        }

        iterations += 1;
        let bits = hard_decision(&app);
        if syndrome(&bits, h)?.iter().all(|&s| s == 0) {
            return Ok(BpResult { bits, success: true, iterations, app_llrs: app });
        }
    }

    let bits = hard_decision(&app);
    let success = syndrome(&bits, h)?.iter().all(|&s| s == 0);
    Ok(BpResult { bits, success, iterations, app_llrs: app })
}
