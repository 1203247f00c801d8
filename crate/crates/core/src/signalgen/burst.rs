use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;

use crate::{Error, Result};

use super::CarrierSpec;

/// Cyclic prefix length as a fraction of the useful symbol length.
pub const CYCLIC_PREFIX_FRACTION: f64 = 0.07;

/// Number of occupied subcarriers, `floor(bandwidth / scs)`.
pub fn occupied_subcarriers(spec: &CarrierSpec) -> usize {
    (spec.bandwidth_hz / spec.scs_hz).floor() as usize
}

/// OFDM burst of random unit-power QPSK subcarriers, mixed to the carrier
/// offset and preceded by `start_time_s` of zeros. RMS power over the
/// active (non-padded) part is 1.
pub fn synthesize_burst<R: Rng + ?Sized>(spec: &CarrierSpec, fs_hz: f64, rng: &mut R) -> Result<Vec<Complex64>> {
    spec.validate(fs_hz)?;
    let active = (spec.duration_s * fs_hz).round() as usize;
    if active == 0 {
        return Ok(Vec::new());
    }
    let ratio = fs_hz / spec.scs_hz;
    let nfft = ratio.round() as usize;
    if (ratio - nfft as f64).abs() > 1e-6 {
        return Err(Error::InvalidCarrier {
            name: spec.describe(),
            reason: format!("sampling rate {fs_hz} Hz is not a multiple of the subcarrier spacing"),
        });
    }
    let n_sub = occupied_subcarriers(spec);
    if n_sub == 0 || n_sub >= nfft {
        return Err(Error::InvalidCarrier {
            name: spec.describe(),
            reason: format!("{n_sub} subcarriers do not fit an FFT of {nfft}"),
        });
    }
    let cp = (CYCLIC_PREFIX_FRACTION * nfft as f64).round() as usize;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(nfft);
    let first = -(n_sub as isize / 2);

    let mut body = Vec::with_capacity(active + nfft + cp);
    let mut sym = vec![Complex64::new(0.0, 0.0); nfft];
    while body.len() < active {
        sym.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for k in 0..n_sub as isize {
            let bin = (first + k).rem_euclid(nfft as isize) as usize;
            let re = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            sym[bin] = Complex64::new(re, im);
        }
        ifft.process(&mut sym);
        body.extend_from_slice(&sym[nfft - cp..]);
        body.extend_from_slice(&sym);
    }
    body.truncate(active);

    let power = body.iter().map(|v| v.norm_sqr()).sum::<f64>() / active as f64;
    let gain = 1.0 / power.sqrt();
    let start = (spec.start_time_s * fs_hz).round() as usize;
    let step = 2.0 * PI * spec.center_offset_hz / fs_hz;
    let mut out = vec![Complex64::new(0.0, 0.0); start];
    out.extend(body.into_iter().enumerate().map(|(n, v)| v * gain * Complex64::from_polar(1.0, step * (start + n) as f64)));
    Ok(out)
}
