use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{par, rng, Error, Result, NUM_CLASSES};

use super::{
    add_noise, compute_spectrogram, generate_labels, noise_power_for, random_frequency_shift, synthesize_burst,
    CarrierKind, CarrierSpec, ChannelSpec, FrameSpec, LabelMask, Spectrogram, FULL_SCALE_FS_HZ,
};

pub const NR_BANDWIDTHS_MHZ: [f64; 7] = [10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0];
pub const LTE_BANDWIDTHS_MHZ: [f64; 4] = [10.0, 5.0, 15.0, 20.0];
pub const NR_SCS_KHZ: [f64; 2] = [15.0, 30.0];
pub const SNR_DB: [f64; 3] = [40.0, 50.0, 100.0];
pub const DOPPLER_HZ: [f64; 3] = [0.0, 10.0, 500.0];

pub const SAMPLE_MAGIC: &[u8; 4] = b"SSRB";
const SAMPLE_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";
const GENERATION_CHUNK: usize = 64;

/// Dataset generation parameters.
///
/// Bandwidths are given at full scale (61.44 MHz) and multiplied by
/// `fs_hz / 61.44 MHz`, so a scaled-down profile keeps the same relative
/// band occupancy. LTE carriers run for the whole frame (FDD); NR carriers
/// are bursts whose duration is drawn from `nr_burst_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub frames: usize,
    pub train_ratio: f64,
    pub fs_hz: f64,
    pub frame_duration_s: f64,
    pub fft_len: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub channels: usize,
    pub nr_bandwidths_mhz: Vec<f64>,
    pub lte_bandwidths_mhz: Vec<f64>,
    pub nr_scs_khz: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub doppler_hz: Vec<f64>,
    pub nr_burst_ms: [f64; 2],
    /// Upper bound on the summed bandwidth of one frame, as a fraction of fs.
    pub max_band_fill: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DatasetConfig {
    pub fn full_scale() -> Self {
        Self {
            frames: 1000,
            train_ratio: 0.8,
            fs_hz: FULL_SCALE_FS_HZ,
            frame_duration_s: 0.040,
            fft_len: 4096,
            img_h: 256,
            img_w: 256,
            channels: 1,
            nr_bandwidths_mhz: NR_BANDWIDTHS_MHZ.to_vec(),
            lte_bandwidths_mhz: LTE_BANDWIDTHS_MHZ.to_vec(),
            nr_scs_khz: NR_SCS_KHZ.to_vec(),
            snr_db: SNR_DB.to_vec(),
            doppler_hz: DOPPLER_HZ.to_vec(),
            nr_burst_ms: [12.0, 28.0],
            max_band_fill: 0.9,
        }
    }

    pub fn desk() -> Self {
        Self { frames: 250, fs_hz: 7.68e6, fft_len: 512, img_h: 64, img_w: 64, ..Self::full_scale() }
    }

    pub fn bandwidth_scale(&self) -> f64 {
        self.fs_hz / FULL_SCALE_FS_HZ
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 5 {
            return Err(Error::Config(format!("need at least 5 frames, got {}", self.frames)));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::Config(format!("train_ratio {} not in (0, 1)", self.train_ratio)));
        }
        for (name, v) in [
            ("nr_bandwidths_mhz", &self.nr_bandwidths_mhz),
            ("lte_bandwidths_mhz", &self.lte_bandwidths_mhz),
            ("nr_scs_khz", &self.nr_scs_khz),
            ("snr_db", &self.snr_db),
            ("doppler_hz", &self.doppler_hz),
        ] {
            if v.is_empty() {
                return Err(Error::Config(format!("{name} must not be empty")));
            }
        }
        let [lo, hi] = self.nr_burst_ms;
        if !(lo > 0.0 && lo <= hi && hi <= self.frame_duration_s * 1e3) {
            return Err(Error::Config(format!("nr_burst_ms [{lo}, {hi}] must lie within the frame")));
        }
        self.template(ChannelSpec { snr_db: 0.0, doppler_hz: 0.0, seed: 0 }).validate()
    }

    pub fn train_count(&self) -> usize {
        (self.frames as f64 * self.train_ratio).round() as usize
    }

    fn template(&self, channel: ChannelSpec) -> FrameSpec {
        FrameSpec {
            fs_hz: self.fs_hz,
            frame_duration_s: self.frame_duration_s,
            fft_len: self.fft_len,
            img_h: self.img_h,
            img_w: self.img_w,
            channels: self.channels,
            carriers: Vec::new(),
            channel,
        }
    }
}

fn pick<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> f64 {
    *values.choose(rng).expect("validated non-empty")
}

/// Draws one frame: an NR carrier, an LTE carrier, or both, with parameters
/// picked from the config lists and random frequency placement.
pub fn sample_frame<R: Rng + ?Sized>(cfg: &DatasetConfig, rng: &mut R) -> Result<FrameSpec> {
    let channel = ChannelSpec { snr_db: pick(&cfg.snr_db, rng), doppler_hz: pick(&cfg.doppler_hz, rng), seed: rng.random() };
    let kinds: &[CarrierKind] = match rng.random_range(0..3) {
        0 => &[CarrierKind::Nr],
        1 => &[CarrierKind::Lte],
        _ => &[CarrierKind::Nr, CarrierKind::Lte],
    };
    let scale = cfg.bandwidth_scale();
    let mut carriers = Vec::new();
    for _ in 0..100 {
        carriers = kinds
            .iter()
            .map(|&kind| {
                let (bw_mhz, scs_hz) = match kind {
                    CarrierKind::Nr => (pick(&cfg.nr_bandwidths_mhz, rng), pick(&cfg.nr_scs_khz, rng) * 1e3),
                    CarrierKind::Lte => (pick(&cfg.lte_bandwidths_mhz, rng), 15e3),
                };
                let (start, dur) = match kind {
                    CarrierKind::Lte => (0.0, cfg.frame_duration_s),
                    CarrierKind::Nr => {
                        let dur = rng.random_range(cfg.nr_burst_ms[0]..=cfg.nr_burst_ms[1]) * 1e-3;
                        (rng.random_range(0.0..=(cfg.frame_duration_s - dur).max(0.0)), dur)
                    }
                };
                CarrierSpec {
                    kind,
                    bandwidth_hz: bw_mhz * 1e6 * scale,
                    scs_hz,
                    duration_s: dur,
                    center_offset_hz: 0.0,
                    start_time_s: start,
                }
            })
            .collect::<Vec<_>>();
        if carriers.iter().map(|c| c.bandwidth_hz).sum::<f64>() <= cfg.max_band_fill * cfg.fs_hz {
            break;
        }
    }
    let mut frame = cfg.template(channel);
    frame.carriers = carriers;
    random_frequency_shift(&frame, rng)
}

/// Complex baseband samples of a frame, carriers plus channel.
pub fn synthesize_frame(frame: &FrameSpec) -> Result<Vec<Complex64>> {
    frame.validate()?;
    let len = frame.frame_samples();
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for (i, c) in frame.carriers.iter().enumerate() {
        let mut rng = rng::rng_for(frame.channel.seed, &[rng::tag("carrier"), i as u64]);
        let burst = synthesize_burst(c, frame.fs_hz, &mut rng)?;
        buf.iter_mut().zip(burst).for_each(|(a, b)| *a += b);
    }
    let noise = noise_power_for(frame.channel.snr_db, !frame.carriers.is_empty());
    Ok(add_noise(&buf, &frame.channel, frame.fs_hz, noise))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub spectrogram: Spectrogram,
    pub labels: LabelMask,
}

fn frame_digest(frame: &FrameSpec) -> String {
    let bytes = serde_json::to_vec(frame).expect("frame spec serializes");
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn render(frame: &FrameSpec) -> Result<Sample> {
    let samples = synthesize_frame(frame)?;
    Ok(Sample { spectrogram: compute_spectrogram(&samples, frame)?, labels: generate_labels(frame) })
}

pub fn write_sample(path: &Path, sample: &Sample) -> Result<()> {
    let s = &sample.spectrogram;
    let mut out = Vec::with_capacity(20 + 4 * s.pixels.len() + sample.labels.labels.len());
    out.extend_from_slice(SAMPLE_MAGIC);
    for v in [SAMPLE_VERSION, s.h as u32, s.w as u32, s.c as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in &s.pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&sample.labels.labels);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_sample(path: &Path) -> Result<Sample> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..4] != SAMPLE_MAGIC {
        return Err(Error::format(path, "missing SSRB header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (version, h, w, c) = (word(0), word(1), word(2), word(3));
    if version != SAMPLE_VERSION as usize {
        return Err(Error::format(path, format!("unsupported sample version {version}")));
    }
    let n = h * w * c;
    if bytes.len() != 20 + 4 * n + h * w {
        return Err(Error::format(path, format!("size {} does not match {h}x{w}x{c}", bytes.len())));
    }
    let pixels = bytes[20..20 + 4 * n].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    let labels = bytes[20 + 4 * n..].to_vec();
    Ok(Sample {
        spectrogram: Spectrogram::new(c, h, w, pixels)?,
        labels: LabelMask::new(h, w, labels).map_err(|e| Error::format(path, e.to_string()))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
    pub class_counts: [u64; NUM_CLASSES],
    /// SHA-256 of the frame's JSON description.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub fs_hz: f64,
    pub fft_len: usize,
    pub img: [usize; 3],
    pub samples: Vec<ManifestEntry>,
    pub class_counts_total: [u64; NUM_CLASSES],
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }
}

/// Renders `cfg.frames` frames into `out_dir` (one `.ssrb` file each) and
/// writes `manifest.json`. Frame `i` uses a seed derived from `(seed, i)`;
/// the first `round(frames · train_ratio)` frames form the training split.
pub fn generate_dataset(cfg: &DatasetConfig, out_dir: &Path, seed: u64) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let n_train = cfg.train_count();
    let mut manifest = DatasetManifest {
        seed,
        fs_hz: cfg.fs_hz,
        fft_len: cfg.fft_len,
        img: [cfg.img_h, cfg.img_w, cfg.channels],
        samples: Vec::with_capacity(cfg.frames),
        class_counts_total: [0; NUM_CLASSES],
    };
    for chunk_start in (0..cfg.frames).step_by(GENERATION_CHUNK) {
        let chunk = GENERATION_CHUNK.min(cfg.frames - chunk_start);
        let rendered = par::map_range(chunk, |j| {
            let i = chunk_start + j;
            let mut rng = rng::rng_for(seed, &[rng::tag("frame"), i as u64]);
            let frame = sample_frame(cfg, &mut rng)?;
            Ok::<_, Error>((frame_digest(&frame), render(&frame)?))
        });
        for (j, r) in rendered.into_iter().enumerate() {
            let i = chunk_start + j;
            let (digest, sample) = r?;
            let file = format!("frame_{i:05}.ssrb");
            write_sample(&out_dir.join(&file), &sample)?;
            let class_counts = sample.labels.class_counts();
            for (t, c) in manifest.class_counts_total.iter_mut().zip(class_counts) {
                *t += c;
            }
            let split = if i < n_train { Split::Train } else { Split::Test };
            manifest.samples.push(ManifestEntry { file, split, class_counts, digest });
        }
    }
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A loaded dataset with its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for entry in &manifest.samples {
        let sample = read_sample(&dir.join(&entry.file))?;
        match entry.split {
            Split::Train => train.push(sample),
            Split::Test => test.push(sample),
        }
    }
    Ok(Dataset { dir: dir.to_path_buf(), manifest, train, test })
}

/// Median-frequency class weights: `median(freq) / freq_k`, where the
/// median runs over classes that occur at all. Absent classes get weight 0.
pub fn class_weights(manifest: &DatasetManifest) -> Result<[f64; NUM_CLASSES]> {
    let counts = manifest.class_counts_total;
    let total: u64 = counts.iter().sum();
    if manifest.samples.is_empty() || total == 0 {
        return Err(Error::InvalidInput("class weights of an empty manifest".into()));
    }
    let freq = counts.map(|c| c as f64 / total as f64);
    let mut present: Vec<f64> = freq.iter().copied().filter(|&f| f > 0.0).collect();
    present.sort_by(f64::total_cmp);
    let m = present.len();
    let median = if m % 2 == 1 { present[m / 2] } else { 0.5 * (present[m / 2 - 1] + present[m / 2]) };
    let mut weights = [0.0; NUM_CLASSES];
    for (k, &f) in freq.iter().enumerate() {
        if f > 0.0 {
            weights[k] = median / f;
        } else {
            log::warn!("class {k} has no pixels in the dataset; its weight is 0");
        }
    }
    Ok(weights)
}
