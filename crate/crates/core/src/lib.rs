//! False arrhythmia alarm adjudication for multichannel ICU waveform records.
//!
//! The pipeline follows the usual structure of rule-based alarm review:
//! per-channel signal validity, a regular-activity gate that dismisses alarms
//! when any channel shows a clean regular rhythm, and then one test per
//! arrhythmia class. Ventricular tachycardia can alternatively be adjudicated
//! with dynamic time warping, either on the whole pre-alarm signal or beat by
//! beat against beat banks.

pub mod alarm;
pub mod banks;
pub mod beats;
pub mod dsp;
pub mod dtw;
pub mod error;
pub mod evaluation;
pub mod quality;
pub mod record;
pub mod synth;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;
