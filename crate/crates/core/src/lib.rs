//! Target speech separation with ad-hoc microphone arrays.
//!
//! The crate simulates randomized reverberant two-speaker scenes picked up by
//! an ad-hoc array, scores each channel by the utterance-level SNR of the
//! target speaker, selects channels with one of four selection algorithms,
//! and extracts the target with a mask-driven MVDR beamformer. A small
//! experiment harness runs method comparisons and hyperparameter sweeps and
//! reports separation metrics (SI-SDR, SDR, STOI, optional external PESQ).
//!
//! Modules mirror the processing stages:
//!
//! - [`dsp`]: STFT analysis/synthesis, phase-sensitive masks, mask
//!   application, delta features, and the two training objectives as pure
//!   evaluable functions.
//! - [`room`]: scenario sampling, image-source RIR synthesis, and
//!   SNR-controlled mixing.
//! - [`weights`]: per-channel target-quality scores and estimator plumbing.
//! - [`selection`]: the four channel-selection algorithms.
//! - [`beamform`]: spatial covariance estimation, steering vectors, and the
//!   MVDR pipeline.
//! - [`metrics`]: SI-SDR, projection SDR, STOI, and an external PESQ hook.
//! - [`harness`]: experiment configs, the scenario runner, and sweeps.
//!
//! Everything is deterministic given the seeds carried by configs and
//! scenarios. Batch loops go through [`exec`], which runs on rayon when the
//! `parallel` feature (default) is enabled and falls back to plain iterators
//! otherwise.

pub mod beamform;
pub mod dsp;
pub mod error;
pub mod exec;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod room;
pub mod selection;
pub mod synth;
pub mod weights;

pub use error::{Error, Result};
