//! Synthesis of weekly occupant schedules as categorical time series.
//!
//! The pipeline has two learned stages plus a classical baseline:
//!
//! 1. [`generator`] — an autoregressive self-attention model that samples
//!    week-long (1008 step, 10-minute resolution) mobility schedules
//!    conditioned on age and occupation class.
//! 2. [`imputer`] — a bidirectional-attention model that replaces the
//!    "at home" periods of a mobility schedule with one of ten in-home
//!    activities, revealed chronologically.
//! 3. [`markov`] — a first-order, time-inhomogeneous Markov chain fitted to
//!    the same corpora, used as a reference model.
//!
//! Generated corpora are scored against a reference corpus with the five
//! metrics in [`metrics`]: aggregated state probabilities, state duration
//! histograms, per-state autocorrelation, weekly episode counts, and the
//! distribution of Hamming distances between working days.
//!
//! Everything is deterministic given explicit seeds: models, sampling and
//! corpus synthesis derive independent ChaCha streams per sample, so results
//! are bit-identical across reruns and across thread counts.

pub mod attention;
pub mod autodiff;
pub mod domain;
pub mod generator;
pub mod imputer;
pub mod io;
pub mod markov;
pub mod metrics;
pub mod sampling;
pub mod synth;
pub mod train;

mod error;
mod util;

pub use error::{Error, Result};
