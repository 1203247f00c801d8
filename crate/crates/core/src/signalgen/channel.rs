use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng;

use super::ChannelSpec;

/// Noise power for a frame: SNR relative to the strongest carrier (unit
/// power); frames without carriers get unit noise power.
pub fn noise_power_for(snr_db: f64, has_signal: bool) -> f64 {
    if has_signal {
        10f64.powf(-snr_db / 10.0)
    } else {
        1.0
    }
}

/// Constant Doppler rotation followed by complex white Gaussian noise of
/// the given power. Randomness comes from `ch.seed` only.
pub fn add_noise(samples: &[Complex64], ch: &ChannelSpec, fs_hz: f64, noise_power: f64) -> Vec<Complex64> {
    let mut rng = rng::rng_for(ch.seed, &[rng::tag("channel")]);
    let fd = if ch.doppler_hz > 0.0 { rng.random_range(-ch.doppler_hz..=ch.doppler_hz) } else { 0.0 };
    let step = 2.0 * PI * fd / fs_hz;
    let sigma = (noise_power / 2.0).sqrt();
    samples
        .iter()
        .enumerate()
        .map(|(n, &x)| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            x * Complex64::from_polar(1.0, step * n as f64) + Complex64::new(re * sigma, im * sigma)
        })
        .collect()
}

/// Doppler plus AWGN at `ch.snr_db`, with signal power measured over the
/// active (non-zero) samples. An all-zero input gets unit-power noise.
pub fn apply_channel(samples: &[Complex64], ch: &ChannelSpec, fs_hz: f64) -> Vec<Complex64> {
    let (sum, active) = samples
        .iter()
        .filter(|v| v.norm_sqr() > 0.0)
        .fold((0.0, 0usize), |(s, n), v| (s + v.norm_sqr(), n + 1));
    let noise = if active == 0 { 1.0 } else { sum / active as f64 * 10f64.powf(-ch.snr_db / 10.0) };
    add_noise(samples, ch, fs_hz, noise)
}
