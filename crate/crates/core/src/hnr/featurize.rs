//! Token features: one token per usable resource element (pilot symbols
//! included), carrying everything the classical chain sees.
//!
//! Feature vector per token, in order:
//!   [Re/Im of each antenna's sample] ++ [Re/Im of the known pilot value at
//!   pilot REs, zeros elsewhere] ++ [ln(noise_var)] ++ [k_norm, l_norm]
//! with k_norm the usable-subcarrier position in [0,1] and l_norm the
//! symbol position in [0,1].

use std::sync::Arc;

use super::HnrError;
use crate::phy::{GridSpec, PilotMatrix, ResourceGrid};

/// Floor applied inside ln() so noiseless grids stay finite.
const NOISE_VAR_FLOOR: f64 = 1e-30;

#[derive(Clone, Debug)]
pub struct TokenFeatures {
    pub num_tokens: usize,
    pub feat_dim: usize,
    /// Row-major [num_tokens, feat_dim].
    pub features: Vec<f64>,
    /// Positions of data-RE tokens within the token sequence, in the frame's
    /// data placement order.
    pub data_token_idx: Arc<Vec<usize>>,
}

/// Feature dimension for a given receive antenna count.
pub fn feat_dim_for(num_rx: usize) -> usize {
    2 * num_rx + 5
}

pub fn featurize(
    rx: &ResourceGrid,
    noise_var: f64,
    spec: &GridSpec,
    pilots: &PilotMatrix,
) -> Result<TokenFeatures, HnrError> {
    spec.validate().map_err(HnrError::Phy)?;
    if rx.num_symbols != spec.num_symbols || rx.fft_size != spec.fft_size {
        return Err(HnrError::Shape("received grid does not match the spec".into()));
    }
    let usable = spec.usable_subcarriers();
    if pilots.num_usable != usable.len() || pilots.num_pilot_symbols != spec.pilot_symbol_indices.len() {
        return Err(HnrError::Shape("pilot matrix does not match the spec".into()));
    }

    let nr = rx.num_antennas;
    let feat_dim = feat_dim_for(nr);
    let num_tokens = spec.num_symbols * usable.len();
    let log_nv = noise_var.max(NOISE_VAR_FLOOR).ln();
    let kmax = (usable.len() - 1).max(1) as f64;
    let lmax = (spec.num_symbols - 1).max(1) as f64;

    let mut features = Vec::with_capacity(num_tokens * feat_dim);
    let mut data_token_idx = Vec::with_capacity(spec.data_capacity());
    let mut token = 0usize;
    for l in 0..spec.num_symbols {
        let pilot_pos = spec.pilot_symbol_indices.iter().position(|&p| p == l);
        for (up, &k) in usable.iter().enumerate() {
            for a in 0..nr {
                let y = rx.at(a, l, k);
                features.push(y.re);
                features.push(y.im);
            }
            match pilot_pos {
                Some(pp) => {
                    let p = pilots.at(pp, up);
                    features.push(p.re);
                    features.push(p.im);
                }
                None => {
                    features.push(0.0);
                    features.push(0.0);
                }
            }
            features.push(log_nv);
            features.push(up as f64 / kmax);
            features.push(l as f64 / lmax);
            if pilot_pos.is_none() {
                data_token_idx.push(token);
            }
            token += 1;
        }
    }

    Ok(TokenFeatures {
        num_tokens,
        feat_dim,
        features,
        data_token_idx: Arc::new(data_token_idx),
    })
}
