//! Signature-based fault identification for grid-connected photovoltaic systems.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`ingest`] loads multi-channel waveform CSVs and drops the time column.
//! 2. [`dsp`] low-pass filters every channel with a zero-phase Butterworth cascade.
//! 3. [`signatures`] cuts each record into 200-sample power cycles and computes
//!    the 52-value statistical signature (mean/std/max/min of 13 signals).
//! 4. [`dataset`] normalizes, splits 70:30 and keeps the 30 most important features.
//! 5. [`forest`] trains and tunes a random-forest classifier.
//! 6. [`shap`] explains predictions with exact path-dependent TreeSHAP.
//! 7. [`eval`] computes confusion matrices, per-class/macro metrics and a KNN baseline.
//!
//! [`synth`] generates labeled look-alike records so the whole chain can run
//! without the laboratory dataset, and [`pipeline`] wires the stages together
//! behind deterministic, file-based artifacts.

pub mod canonical_json;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod forest;
pub mod ingest;
pub mod pipeline;
pub mod rng;
pub mod shap;
pub mod signatures;
pub mod synth;

pub use error::{Error, ErrorKind, Result};

/// Number of operating states: normal operation plus seven fault types.
pub const N_CLASSES: usize = 8;

/// Number of recorded signals per operating-state file.
pub const N_SIGNALS: usize = 13;

/// Canonical signal order. Signature feature names derive from these.
pub const SIGNAL_NAMES: [&str; N_SIGNALS] = [
    "Vpv", "Ipv", "Vdc", "ia", "ib", "ic", "va", "vb", "vc", "Iabc_mag", "Vabc_mag", "f_i", "f_v",
];

/// Short state names used in reports, indexed by label.
pub const STATE_NAMES: [&str; N_CLASSES] = ["F0M", "F1M", "F2M", "F3M", "F4M", "F5M", "F6M", "F7M"];
