//! Spectrum-sensing adversarial workbench.
//!
//! Synthesizes labeled LTE/NR spectrogram datasets, trains a small
//! encoder-decoder segmentation network on them, attacks it with
//! FGSM/BIM/PGD, defends it with defensive distillation and reports
//! confusion-matrix metrics across an epsilon sweep.
//!
//! Modules are layered bottom-up:
//!
//! - [`signalgen`]: OFDM burst synthesis, channel, spectrogram rendering, labels, datasets.
//! - [`autodiff`]: reverse-mode tensor engine, RMSProp, checkpoints.
//! - [`segmodel`]: U-shaped segmentation network and its training loop.
//! - [`attacks`]: gradient-sign attacks against the input spectrogram.
//! - [`distill`]: teacher/student defensive distillation.
//! - [`metrics`]: confusion matrix and the seven per-class metrics.
//! - [`harness`]: experiment orchestration, sweep CSV, tables and SVG plots.

pub mod attacks;
pub mod autodiff;
pub mod distill;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod segmodel;
pub mod signalgen;

pub use error::{Error, Result};

/// Number of segmentation classes: Noise, LTE, NR.
pub const NUM_CLASSES: usize = 3;

/// Per-pixel class of a spectrogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[repr(u8)]
pub enum SignalClass {
    Noise = 0,
    Lte = 1,
    Nr = 2,
}

impl SignalClass {
    pub const ALL: [SignalClass; NUM_CLASSES] = [SignalClass::Noise, SignalClass::Lte, SignalClass::Nr];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Column name used in reports.
    pub fn report_name(self) -> &'static str {
        match self {
            SignalClass::Noise => "Noise",
            SignalClass::Lte => "LTE",
            SignalClass::Nr => "5G",
        }
    }
}
