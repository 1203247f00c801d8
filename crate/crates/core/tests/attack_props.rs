use proptest::prelude::*;

use ssense::attacks::{attack, AttackConfig, AttackKind, LINF_TOLERANCE};
use ssense::autodiff::{ModelParams, Tensor};
use ssense::rng::rng_for;
use ssense::segmodel::{argmax_masks, build_model, ArchitectureConfig};
use ssense::signalgen::{LabelMask, Spectrogram};
use ssense::NUM_CLASSES;

fn model(seed: u64) -> (ModelParams, ArchitectureConfig) {
    let arch = ArchitectureConfig { in_channels: 1, base_width: 2, depth: 1, num_classes: NUM_CLASSES };
    (build_model(&arch, &mut rng_for(seed, &[])).unwrap(), arch)
}

fn image() -> impl Strategy<Value = (Spectrogram, LabelMask)> {
    (prop::collection::vec(0.0f32..=1.0, 64), prop::collection::vec(0u8..3, 64)).prop_map(|(px, y)| {
        // Saturated pixels exercise the [0, 1] clamp.
        let px = px.into_iter().map(|p| if p < 0.1 { 0.0 } else if p > 0.9 { 1.0 } else { p }).collect();
        (Spectrogram::new(1, 8, 8, px).unwrap(), LabelMask::new(8, 8, y).unwrap())
    })
}

fn kind() -> impl Strategy<Value = AttackKind> {
    prop::sample::select(AttackKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stays_in_ball_and_range(
        (x, y) in image(),
        kind in kind(),
        eps in 0u32..=128,
        alpha in 1u32..=8,
        iters in 1usize..=4,
        seed in any::<u64>(),
    ) {
        let (params, arch) = model(seed % 7);
        let cfg = AttackConfig { kind, epsilon_raw: eps, alpha_raw: alpha.min(eps.max(1)), max_iters: iters, seed, ..AttackConfig::default() };
        prop_assume!(cfg.validate().is_ok());
        let r = attack(&params, &arch, &x, &y, &cfg).unwrap();
        let eps_f = eps as f64 / 255.0;
        for (&a, &b) in r.x_adv.pixels.iter().zip(&x.pixels) {
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a as f64 - b as f64).abs() <= eps_f + LINF_TOLERANCE);
        }
        prop_assert!(r.linf <= eps_f + LINF_TOLERANCE);
    }

    #[test]
    fn single_step_attacks_coincide((x, y) in image(), eps in 1u32..=128, seed in any::<u64>()) {
        let (params, arch) = model(seed % 5);
        let base = AttackConfig { epsilon_raw: eps, alpha_raw: eps, max_iters: 1, random_init: false, seed, ..AttackConfig::default() };
        let run = |kind| attack(&params, &arch, &x, &y, &AttackConfig { kind, ..base.clone() }).unwrap().x_adv.pixels;
        let f = run(AttackKind::Fgsm);
        for other in [run(AttackKind::Bim), run(AttackKind::Pgd)] {
            for (a, b) in f.iter().zip(&other) {
                prop_assert!((a - b).abs() <= 1e-7);
            }
        }
    }

    #[test]
    fn pgd_is_reproducible((x, y) in image(), eps in 1u32..=64, seed in any::<u64>()) {
        let (params, arch) = model(1);
        let cfg = AttackConfig { kind: AttackKind::Pgd, epsilon_raw: eps, max_iters: 2, seed, ..AttackConfig::default() };
        let a = attack(&params, &arch, &x, &y, &cfg).unwrap();
        let b = attack(&params, &arch, &x, &y, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn argmax_ignores_positive_scaling(z in prop::collection::vec(-50.0f32..50.0, 2 * NUM_CLASSES * 16), s in 0.01f32..100.0) {
        let t = Tensor::new(vec![2, NUM_CLASSES, 4, 4], z.clone()).unwrap();
        let scaled = Tensor::new(vec![2, NUM_CLASSES, 4, 4], z.iter().map(|v| v * s).collect()).unwrap();
        let a = argmax_masks(&t).unwrap();
        let b = argmax_masks(&scaled).unwrap();
        // Scaling can merge two nearly equal logits into a float tie; only
        // compare pixels whose top two logits are clearly apart.
        for n in 0..2 {
            for p in 0..16 {
                let mut col: Vec<f32> = (0..NUM_CLASSES).map(|k| z[(n * NUM_CLASSES + k) * 16 + p]).collect();
                col.sort_by(|x, y| y.total_cmp(x));
                if col[0] - col[1] > 1e-3 {
                    prop_assert_eq!(a[n].labels[p], b[n].labels[p]);
                }
            }
        }
    }
}
