//! Driver-authentication testbed.
//!
//! A behavior-based driver authenticator (three recurrent/convolutional
//! time-series classifiers voting as an ensemble) sits on a simulated CAN
//! bus. An attacker tap on the same bus can sniff traffic and inject frames
//! for the signals that are safe to overwrite. The attack suite covers
//! smart-replay of a victim's safe signals and an RL-guided generator that
//! learns to forge them against the authenticator used as an oracle.
//!
//! Modules, bottom-up:
//!
//! - [`dataio`]: ingestion, constant-feature filtering, min-max
//!   normalization, windows/batches, splits, the safety taxonomy and a
//!   synthetic dataset generator.
//! - [`netkernels`]: dense, LSTM/GRU cells, 1-D convolution, pooling,
//!   softmax cross-entropy, optimizers and finite-difference checks.
//! - [`authenticator`]: the three classifier architectures, training,
//!   majority-vote ensemble and the runtime decision policy.
//! - [`canbus`]: discrete-event bus with id arbitration, ECU replay,
//!   attacker tap and 1 Hz state sampling.
//! - [`attacks`]: smart-replay merge, sniff-based collection, generator and
//!   RL latent search, campaign orchestration and timing model.
//! - [`harness`]: metrics, experiment runner, report emission and CLI.

pub mod attacks;
pub mod authenticator;
pub mod canbus;
pub mod dataio;
mod error;
pub mod harness;
pub mod netkernels;
pub mod rng;

pub use error::{Error, Result};
