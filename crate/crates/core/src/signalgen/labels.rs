use super::{FrameSpec, LabelMask};

/// Labels each pixel with the kind of the carrier whose occupancy
/// rectangle contains the pixel's time–frequency cell center, or Noise.
pub fn generate_labels(frame: &FrameSpec) -> LabelMask {
    let (h, w) = (frame.img_h, frame.img_w);
    let mut labels = vec![crate::SignalClass::Noise as u8; h * w];
    for r in 0..h {
        let t = (r as f64 + 0.5) / h as f64 * frame.frame_duration_s;
        for c in 0..w {
            let f = -frame.fs_hz / 2.0 + (c as f64 + 0.5) / w as f64 * frame.fs_hz;
            if let Some(carrier) = frame.carriers.iter().find(|cs| {
                let (t0, t1) = cs.time_span();
                let (f0, f1) = cs.band();
                t >= t0 && t < t1 && f >= f0 && f < f1
            }) {
                labels[r * w + c] = carrier.kind.class() as u8;
            }
        }
    }
    LabelMask { h, w, labels }
}
