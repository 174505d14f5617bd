//! Adaptive multi-modal CAPTCHA engine.
//!
//! The crate is split along the verification pipeline:
//!
//! - [`challenge`]: seeded procedural grid and audio challenges, rendering and
//!   answer checking.
//! - [`rl`]: tabular Q-learning that picks the difficulty of the next challenge.
//! - [`analysis`]: telemetry features, behavioral heuristics and a linear SVM.
//! - [`service`]: the session state machine, pass tokens and the event journal.
//! - [`sim`]: a deterministic agent population that drives the service and
//!   derives evaluation metrics from the journal.

pub mod analysis;
pub mod challenge;
pub mod nonce;
pub mod rl;
pub mod rng;
pub mod service;
pub mod sim;

pub use rng::SplitMix64;
