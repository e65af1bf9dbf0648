//! OFDM link-level simulator with classical and hybrid neural receivers.
//!
//! The crate models a single-stream uplink: LDPC coding, QAM modulation,
//! resource-grid mapping with full-band pilot symbols, a stochastic fading
//! channel, and two receiver families:
//!
//! - a classical chain (LS channel estimation, LMMSE equalization, exact
//!   soft demapping, sum-product belief propagation), and
//! - a hybrid neural receiver: a transformer front end that maps the raw
//!   received grid to per-bit LLRs, followed by a Tanner-graph message
//!   passing network that replaces the classical decoder, trained in three
//!   stages.
//!
//! The `harness` module drives Monte Carlo BER sweeps, payload round trips
//! with distortion metrics, checkpointing and the CLI.

pub mod channel;
pub mod diffcore;
pub mod fec;
pub mod harness;
pub mod hnr;
pub mod phy;
pub mod rng;
pub mod rxclassic;
