//! Singing-voice separation pipeline.
//!
//! The crate covers the full offline path from stem audio to separated
//! waveforms and objective scores:
//!
//! - [`dsp`]: resampling, STFT/iSTFT, magnitude/phase handling
//! - [`dataset`]: spectrogram patching, augmentation, normalization,
//!   archive persistence
//! - [`nn`]: a small CPU U-Net with hand-rolled backprop and Adam
//! - [`separate`]: ratio-mask inference and waveform reconstruction
//! - [`eval`]: SDR/SIR/SAR scoring against reference stems
//! - [`config`]: the experiment configuration shared by the CLI and the
//!   weights file format
//!
//! Everything randomized takes an explicit seed; repeated runs with the same
//! inputs and seed produce identical artifacts.

pub mod config;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod nn;
pub mod separate;
pub mod synth;

pub use error::{Error, Result};
