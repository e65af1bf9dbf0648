//! Progressive-edge-growth construction of regular LDPC codes.
//!
//! Variables acquire their `dv` edges one at a time. Each edge goes to a
//! check that still has capacity (degree < dc), is not already adjacent, and
//! is as far as possible from the variable in the current graph: unreachable
//! checks are preferred, otherwise maximal-depth ones, which suppresses
//! short cycles. Ties break on lowest current degree, then by a seeded draw,
//! so the construction is deterministic per seed.

use super::{FecError, ParityCheckMatrix};
use crate::rng::Rng;

pub fn build_regular_ldpc(n: usize, dv: usize, dc: usize, seed: u64) -> Result<ParityCheckMatrix, FecError> {
    if dv < 2 {
        return Err(FecError::Infeasible(format!("dv must be >= 2, got {dv}")));
    }
    if dc == 0 || n == 0 {
        return Err(FecError::Infeasible("n and dc must be positive".into()));
    }
    if (n * dv) % dc != 0 {
        return Err(FecError::Infeasible(format!("n*dv = {} not divisible by dc = {dc}", n * dv)));
    }
    let m = n * dv / dc;
    if m < dv {
        return Err(FecError::Infeasible(format!(
            "only {m} checks for variable degree {dv}: cannot place distinct edges"
        )));
    }
    if dc > n {
        return Err(FecError::Infeasible(format!("dc = {dc} exceeds n = {n}")));
    }

    let mut rng = Rng::new(seed);
    let mut var_adj: Vec<Vec<usize>> = vec![Vec::with_capacity(dv); n];
    let mut check_adj: Vec<Vec<usize>> = vec![Vec::with_capacity(dc); m];

    // Scratch for BFS over the bipartite graph, measured in check-depth.
    let mut depth = vec![usize::MAX; m];
    let mut var_seen = vec![false; n];
    let mut frontier: Vec<usize> = Vec::new();
    let mut next: Vec<usize> = Vec::new();

    for v in 0..n {
        for edge in 0..dv {
            let candidates: Vec<usize> = (0..m)
                .filter(|&c| check_adj[c].len() < dc && !var_adj[v].contains(&c))
                .collect();
            if candidates.is_empty() {
                return Err(FecError::Infeasible(format!(
                    "construction stranded at variable {v} edge {edge}; try another seed"
                )));
            }

            let pool: Vec<usize> = if edge == 0 {
                candidates
            } else {
                // BFS from v: depth of each check node in the current graph.
                depth.iter_mut().for_each(|d| *d = usize::MAX);
                var_seen.iter_mut().for_each(|s| *s = false);
                var_seen[v] = true;
                frontier.clear();
                for &c in &var_adj[v] {
                    depth[c] = 0;
                    frontier.push(c);
                }
                let mut level = 0;
                while !frontier.is_empty() {
                    next.clear();
                    for &c in frontier.iter() {
                        for &v2 in &check_adj[c] {
                            if var_seen[v2] {
                                continue;
                            }
                            var_seen[v2] = true;
                            for &c2 in &var_adj[v2] {
                                if depth[c2] == usize::MAX {
                                    depth[c2] = level + 1;
                                    next.push(c2);
                                }
                            }
                        }
                    }
                    std::mem::swap(&mut frontier, &mut next);
                    level += 1;
                }

                let unreachable: Vec<usize> = candidates
                    .iter()
                    .copied()
                    .filter(|&c| depth[c] == usize::MAX)
                    .collect();
                if !unreachable.is_empty() {
                    unreachable
                } else {
                    let dmax = candidates.iter().map(|&c| depth[c]).max().unwrap();
                    candidates.into_iter().filter(|&c| depth[c] == dmax).collect()
                }
            };

            let min_deg = pool.iter().map(|&c| check_adj[c].len()).min().unwrap();
            let best: Vec<usize> =
                pool.into_iter().filter(|&c| check_adj[c].len() == min_deg).collect();
            let chosen = best[rng.below(best.len())];
            var_adj[v].push(chosen);
            check_adj[chosen].push(v);
        }
    }

    ParityCheckMatrix::from_rows(n, check_adj)
}
