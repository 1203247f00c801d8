mod common;

use common::{off_band_mismatches, rectangle_oracle};
use ssense::rng::rng_for;
use ssense::signalgen::{compute_spectrogram, generate_labels, sample_frame, synthesize_frame, DatasetConfig};

#[test]
fn labels_match_rectangles_within_one_pixel() {
    let cfg = DatasetConfig::desk();
    let mut rng = rng_for(8, &[]);
    for i in 0..100 {
        let frame = sample_frame(&cfg, &mut rng).unwrap();
        let mask = generate_labels(&frame);
        let bad = off_band_mismatches(&mask, &rectangle_oracle(&frame));
        assert_eq!(bad, 0, "frame {i}: {bad} pixels disagree away from edges");
    }
}

#[test]
fn signal_stands_out_at_40_db() {
    let cfg = DatasetConfig { snr_db: vec![40.0], ..DatasetConfig::desk() };
    let mut rng = rng_for(9, &[]);
    for i in 0..10 {
        let frame = sample_frame(&cfg, &mut rng).unwrap();
        let img = compute_spectrogram(&synthesize_frame(&frame).unwrap(), &frame).unwrap();
        let mask = generate_labels(&frame);
        let (mut sig, mut ns, mut noise, mut nn) = (0.0, 0, 0.0, 0);
        for (&p, &l) in img.pixels.iter().zip(&mask.labels) {
            if l == 0 {
                noise += p as f64;
                nn += 1;
            } else {
                sig += p as f64;
                ns += 1;
            }
        }
        let gap = sig / ns as f64 - noise / nn.max(1) as f64;
        assert!(gap >= 0.2, "frame {i}: signal − noise = {gap}");
    }
}
