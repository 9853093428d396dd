//! Multiuser fluid-antenna downlink port selection.
//!
//! * [`channel`] builds the port correlation model and draws correlated
//!   channel batches.
//! * [`sinr`] solves max-min SINR balancing for a fixed selection.
//! * [`heuristics`] holds the port selectors: exhaustive, random, GA
//!   variants and AutoPort.
//! * [`eoh`] evolves heuristics with a language-model provider in the loop.
//! * [`sandbox`] is the host side of the guest-code worker protocol.
//! * [`bench`] runs experiment sweeps and writes result tables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod channel;
pub mod eoh;
pub mod error;
pub mod eval;
pub mod exec;
pub mod heuristics;
pub mod numfmt;
pub mod rng;
pub mod sandbox;
pub mod sinr;

pub use channel::{ArrayConfig, ChannelBatch, CorrelationKernel, Fading, ScenarioConfig};
pub use error::{Error, Result};
pub use eval::Evaluator;
pub use heuristics::PortSelection;
pub use sinr::{BeamformingSolution, EffectiveChannel};
