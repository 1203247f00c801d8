use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::{Error, Result};

use super::{FrameSpec, Spectrogram};

/// Displayed range below the frame's peak power.
pub const DYNAMIC_RANGE_DB: f64 = 80.0;
/// Added to every bin power before taking the logarithm.
pub const POWER_FLOOR: f64 = 1e-20;

const COLORMAP_STOPS: [(f32, [f32; 3]); 5] = [
    (0.0, [0.0, 0.0, 0.5]),
    (0.25, [0.0, 0.5, 1.0]),
    (0.5, [0.0, 1.0, 0.5]),
    (0.75, [1.0, 1.0, 0.0]),
    (1.0, [1.0, 0.0, 0.0]),
];

/// Piecewise-linear RGB map of an intensity in `[0, 1]`.
pub fn colormap(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    for pair in COLORMAP_STOPS.windows(2) {
        let ((a, ca), (b, cb)) = (pair[0], pair[1]);
        if v <= b {
            let t = (v - a) / (b - a);
            return [0, 1, 2].map(|i| ca[i] + t * (cb[i] - ca[i]));
        }
    }
    COLORMAP_STOPS[4].1
}

/// Hann-windowed STFT (50% overlap, fft-shifted), converted to dB, clamped
/// to [peak − 80 dB, peak], normalized to [0, 1] and bilinearly resampled
/// onto the `img_h × img_w` grid (rows = time, columns = frequency).
pub fn compute_spectrogram(samples: &[Complex64], frame: &FrameSpec) -> Result<Spectrogram> {
    let n = frame.fft_len;
    if samples.len() < n {
        return Err(Error::InvalidInput(format!("{} samples, need at least fft_len = {n}", samples.len())));
    }
    let hop = n / 2;
    let frames = (samples.len() - n) / hop + 1;
    let window: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);

    let mut db = vec![0.0f64; frames * n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for m in 0..frames {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = samples[m * hop + i] * window[i];
        }
        fft.process(&mut buf);
        let row = &mut db[m * n..(m + 1) * n];
        for (k, r) in row.iter_mut().enumerate() {
            // fftshift: output column k holds frequency (k - n/2)·fs/n.
            let src = (k + n - n / 2) % n;
            *r = 10.0 * (buf[src].norm_sqr() + POWER_FLOOR).log10();
        }
    }

    let peak = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor_db = 10.0 * POWER_FLOOR.log10();
    let (h, w) = (frame.img_h, frame.img_w);
    if peak <= floor_db + 1e-9 {
        return Spectrogram::new(frame.channels, h, w, vec![0.0; frame.channels * h * w]);
    }
    let lo = peak - DYNAMIC_RANGE_DB;
    let norm: Vec<f64> = db.iter().map(|&v| (v.clamp(lo, peak) - lo) / DYNAMIC_RANGE_DB).collect();

    // Row r is centered at sample (r + 0.5)·L/h; STFT frame m is centered at m·hop + n/2.
    let len = samples.len() as f64;
    let row_src: Vec<f64> = (0..h)
        .map(|r| (((r as f64 + 0.5) * len / h as f64 - n as f64 / 2.0) / hop as f64).clamp(0.0, (frames - 1) as f64))
        .collect();
    let col_src: Vec<f64> =
        (0..w).map(|c| ((c as f64 + 0.5) * n as f64 / w as f64).clamp(0.0, (n - 1) as f64)).collect();

    let mut gray = Vec::with_capacity(h * w);
    for &ry in &row_src {
        let (y0, fy) = (ry.floor() as usize, ry.fract());
        let y1 = (y0 + 1).min(frames - 1);
        for &cx in &col_src {
            let (x0, fx) = (cx.floor() as usize, cx.fract());
            let x1 = (x0 + 1).min(n - 1);
            let top = norm[y0 * n + x0] * (1.0 - fx) + norm[y0 * n + x1] * fx;
            let bottom = norm[y1 * n + x0] * (1.0 - fx) + norm[y1 * n + x1] * fx;
            gray.push(((top * (1.0 - fy) + bottom * fy) as f32).clamp(0.0, 1.0));
        }
    }

    let pixels = if frame.channels == 3 {
        let mut rgb = vec![0.0f32; 3 * h * w];
        for (i, &g) in gray.iter().enumerate() {
            let c = colormap(g);
            for ch in 0..3 {
                rgb[ch * h * w + i] = c[ch];
            }
        }
        rgb
    } else {
        gray
    };
    Spectrogram::new(frame.channels, h, w, pixels)
}
