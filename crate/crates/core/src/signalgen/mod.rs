//! Synthetic LTE/NR spectrogram datasets.
//!
//! A frame is a sum of CP-OFDM bursts, each occupying a rectangle in the
//! time–frequency plane, plus a channel (constant Doppler offset and white
//! Gaussian noise). The frame is rendered to a normalized dB spectrogram
//! image; the label mask marks every pixel whose cell center falls inside
//! a carrier rectangle.
//!
//! Image rows are time (top = frame start), columns are frequency from
//! `-fs/2` (left) to `+fs/2` (right).

mod burst;
mod channel;
mod dataset;
mod labels;
mod placement;
mod spectrogram;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, SignalClass};

pub use burst::{occupied_subcarriers, synthesize_burst, CYCLIC_PREFIX_FRACTION};
pub use channel::{add_noise, apply_channel, noise_power_for};
pub use dataset::{
    class_weights, generate_dataset, load_dataset, read_sample, sample_frame, synthesize_frame, write_sample,
    Dataset, DatasetConfig, DatasetManifest, ManifestEntry, Sample, Split, LTE_BANDWIDTHS_MHZ, NR_BANDWIDTHS_MHZ,
    NR_SCS_KHZ, SAMPLE_MAGIC, SNR_DB, DOPPLER_HZ,
};
pub use labels::generate_labels;
pub use placement::{random_frequency_shift, MAX_PLACEMENT_RETRIES};
pub use spectrogram::{colormap, compute_spectrogram, DYNAMIC_RANGE_DB, POWER_FLOOR};

/// Reference sampling rate of the full-scale profile.
pub const FULL_SCALE_FS_HZ: f64 = 61.44e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CarrierKind {
    #[serde(rename = "LTE")]
    Lte,
    #[serde(rename = "NR")]
    Nr,
}

impl CarrierKind {
    pub fn class(self) -> SignalClass {
        match self {
            CarrierKind::Lte => SignalClass::Lte,
            CarrierKind::Nr => SignalClass::Nr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarrierSpec {
    pub kind: CarrierKind,
    pub bandwidth_hz: f64,
    pub scs_hz: f64,
    pub duration_s: f64,
    /// Carrier center relative to the observed band center.
    pub center_offset_hz: f64,
    pub start_time_s: f64,
}

impl CarrierSpec {
    pub fn band(&self) -> (f64, f64) {
        (self.center_offset_hz - self.bandwidth_hz / 2.0, self.center_offset_hz + self.bandwidth_hz / 2.0)
    }

    pub fn time_span(&self) -> (f64, f64) {
        (self.start_time_s, self.start_time_s + self.duration_s)
    }

    pub fn describe(&self) -> String {
        format!(
            "{:?} {:.3} MHz @ {:+.3} MHz",
            self.kind,
            self.bandwidth_hz / 1e6,
            self.center_offset_hz / 1e6
        )
    }

    pub fn validate(&self, fs_hz: f64) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidCarrier { name: self.describe(), reason });
        if !(self.bandwidth_hz > 0.0) || !self.bandwidth_hz.is_finite() {
            return bad(format!("bandwidth {} Hz must be positive", self.bandwidth_hz));
        }
        let nyquist = fs_hz / 2.0;
        let (lo, hi) = self.band();
        // Relative slack for offsets computed in floating point.
        let slack = fs_hz * 1e-12;
        if lo < -nyquist - slack || hi > nyquist + slack {
            return bad(format!("band [{lo:.0}, {hi:.0}] Hz exceeds Nyquist ±{nyquist:.0} Hz"));
        }
        match self.kind {
            CarrierKind::Nr if self.scs_hz != 15e3 && self.scs_hz != 30e3 => {
                return bad(format!("NR subcarrier spacing {} Hz not in {{15, 30}} kHz", self.scs_hz))
            }
            CarrierKind::Lte if self.scs_hz != 15e3 => {
                return bad(format!("LTE subcarrier spacing must be 15 kHz, got {} Hz", self.scs_hz))
            }
            _ => {}
        }
        if !(self.duration_s >= 0.0) || !(self.start_time_s >= 0.0) {
            return bad("negative start time or duration".into());
        }
        Ok(())
    }

    fn overlaps(&self, other: &CarrierSpec) -> bool {
        let (a0, a1) = self.time_span();
        let (b0, b1) = other.time_span();
        let time = a0 < b1 && b0 < a1;
        let (f0, f1) = self.band();
        let (g0, g1) = other.band();
        time && f0 < g1 && g0 < f1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub snr_db: f64,
    pub doppler_hz: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub fs_hz: f64,
    pub frame_duration_s: f64,
    pub fft_len: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub channels: usize,
    pub carriers: Vec<CarrierSpec>,
    pub channel: ChannelSpec,
}

impl FrameSpec {
    /// 61.44 MHz, 40 ms, FFT 4096, 256×256.
    pub fn full_scale(channel: ChannelSpec) -> Self {
        Self {
            fs_hz: FULL_SCALE_FS_HZ,
            frame_duration_s: 0.040,
            fft_len: 4096,
            img_h: 256,
            img_w: 256,
            channels: 1,
            carriers: Vec::new(),
            channel,
        }
    }

    /// Desk profile: fs and FFT length scaled by 1/8, 64×64 images.
    pub fn desk(channel: ChannelSpec) -> Self {
        Self { fs_hz: 7.68e6, fft_len: 512, img_h: 64, img_w: 64, ..Self::full_scale(channel) }
    }

    pub fn frame_samples(&self) -> usize {
        (self.frame_duration_s * self.fs_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_len < 2 || self.img_h == 0 || self.img_w == 0 {
            return Err(Error::Config("fft_len >= 2 and positive image dims required".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if !self.channel.snr_db.is_finite() || !(self.channel.doppler_hz >= 0.0) {
            return Err(Error::Config("channel SNR must be finite and Doppler non-negative".into()));
        }
        for c in &self.carriers {
            c.validate(self.fs_hz)?;
        }
        for (i, a) in self.carriers.iter().enumerate() {
            for b in &self.carriers[i + 1..] {
                if a.overlaps(b) {
                    return Err(Error::InvalidCarrier {
                        name: a.describe(),
                        reason: format!("overlaps {} in time and frequency", b.describe()),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Normalized spectrogram image, channel-major `(c, h, w)`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<f32>,
}

impl Spectrogram {
    pub fn new(c: usize, h: usize, w: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != c * h * w {
            return Err(Error::Shape(format!("spectrogram {c}x{h}x{w} with {} pixels", pixels.len())));
        }
        Ok(Self { c, h, w, pixels })
    }

    pub fn get(&self, ch: usize, row: usize, col: usize) -> f32 {
        self.pixels[(ch * self.h + row) * self.w + col]
    }
}

/// Per-pixel class labels, row-major `(h, w)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub h: usize,
    pub w: usize,
    pub labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(h: usize, w: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != h * w {
            return Err(Error::Shape(format!("mask {h}x{w} with {} labels", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= crate::NUM_CLASSES) {
            return Err(Error::InvalidInput(format!("label {bad} is not a class index")));
        }
        Ok(Self { h, w, labels })
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.w + col]
    }

    pub fn class_counts(&self) -> [u64; crate::NUM_CLASSES] {
        let mut counts = [0u64; crate::NUM_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}
