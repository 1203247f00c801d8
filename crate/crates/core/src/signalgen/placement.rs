use rand::Rng;

use crate::{Error, Result};

use super::FrameSpec;

pub const MAX_PLACEMENT_RETRIES: usize = 1000;

/// Re-draws every carrier's center offset uniformly within the band, so
/// that no two carriers that coexist in time overlap in frequency.
pub fn random_frequency_shift<R: Rng + ?Sized>(frame: &FrameSpec, rng: &mut R) -> Result<FrameSpec> {
    let mut out = frame.clone();
    if frame.carriers.is_empty() {
        return Ok(out);
    }
    let half = frame.fs_hz / 2.0;
    for c in &frame.carriers {
        if c.bandwidth_hz > frame.fs_hz {
            return Err(Error::Placement { retries: 0, total_bandwidth_hz: c.bandwidth_hz });
        }
    }
    'retry: for _ in 0..MAX_PLACEMENT_RETRIES {
        for i in 0..out.carriers.len() {
            let limit = half - out.carriers[i].bandwidth_hz / 2.0;
            out.carriers[i].center_offset_hz = if limit > 0.0 { rng.random_range(-limit..=limit) } else { 0.0 };
            for j in 0..i {
                if out.carriers[i].overlaps(&out.carriers[j]) {
                    continue 'retry;
                }
            }
        }
        return Ok(out);
    }
    Err(Error::Placement {
        retries: MAX_PLACEMENT_RETRIES,
        total_bandwidth_hz: frame.carriers.iter().map(|c| c.bandwidth_hz).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signalgen::{CarrierKind, CarrierSpec, ChannelSpec};
    use rand::SeedableRng;

    fn frame(bws: &[f64]) -> FrameSpec {
        let mut f = FrameSpec::full_scale(ChannelSpec { snr_db: 40.0, doppler_hz: 0.0, seed: 0 });
        f.carriers = bws
            .iter()
            .map(|&bw| CarrierSpec {
                kind: CarrierKind::Nr,
                bandwidth_hz: bw,
                scs_hz: 30e3,
                duration_s: 0.04,
                center_offset_hz: 0.0,
                start_time_s: 0.0,
            })
            .collect();
        f
    }

    #[test]
    fn single_carrier_offset_bounds() {
        let f = frame(&[10e6]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for _ in 0..5000 {
            let off = random_frequency_shift(&f, &mut rng).unwrap().carriers[0].center_offset_hz;
            assert!(off.abs() <= 25.72e6 + 1.0);
            lo = lo.min(off);
            hi = hi.max(off);
        }
        // Uniform draws reach close to both edges.
        assert!(lo < -25.0e6 && hi > 25.0e6, "{lo} {hi}");
    }

    #[test]
    fn zero_carriers_identity() {
        let f = frame(&[]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert_eq!(random_frequency_shift(&f, &mut rng).unwrap(), f);
    }

    #[test]
    fn oversubscribed_band_fails() {
        let f = frame(&[40e6, 30e6]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        match random_frequency_shift(&f, &mut rng) {
            Err(Error::Placement { total_bandwidth_hz, .. }) => assert_eq!(total_bandwidth_hz, 70e6),
            other => panic!("expected placement error, got {other:?}"),
        }
    }

    #[test]
    fn placements_are_valid() {
        let f = frame(&[20e6, 10e6, 15e6]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            random_frequency_shift(&f, &mut rng).unwrap().validate().unwrap();
        }
    }
}
