use proptest::prelude::*;
use sharpgan_core::features::FeatureExtractor;
use sharpgan_core::image::{Image, ValueRange};
use sharpgan_core::losses::LossBundle;
use sharpgan_core::networks::{Critic, DiscriminatorConfig, Generator, GeneratorConfig};
use sharpgan_core::nn::{decode_archive, encode_archive};
use sharpgan_core::train::*;

/// Channel 0 and 1 encode the source column and row exactly.
fn coord_image(w: usize, h: usize, tag: f64) -> Image {
    Image::from_fn(w, h, ValueRange::Unit, |x, y, c| match c {
        0 => x as f64 / (w - 1) as f64,
        1 => y as f64 / (h - 1) as f64,
        _ => tag,
    })
    .unwrap()
}

fn decode(img: &Image, x: usize, y: usize, w: usize, h: usize) -> (usize, usize) {
    (
        (img.get(x, y, 0) * (w - 1) as f64).round() as usize,
        (img.get(x, y, 1) * (h - 1) as f64).round() as usize,
    )
}

#[test]
fn crops_from_large_pair_use_configured_scales() {
    let cfg = TrainConfig::default();
    let (b, s) = (coord_image(1280, 720, 0.25), coord_image(1280, 720, 0.75));
    let mut seen = std::collections::BTreeSet::new();
    for seed in 0..12 {
        let (bc, sc, info) = sample_training_pair(&b, &s, &cfg, seed).unwrap();
        assert!([256, 384, 512, 640].contains(&info.scale));
        assert!(!info.resized);
        assert_eq!((bc.width(), bc.height()), (info.scale, info.scale));
        assert_eq!((sc.width(), sc.height()), (info.scale, info.scale));
        seen.insert(info.scale);
    }
    assert!(seen.len() > 1);
    let a = sample_training_pair(&b, &s, &cfg, 3).unwrap();
    let again = sample_training_pair(&b, &s, &cfg, 3).unwrap();
    assert_eq!(a, again);
}

#[test]
fn scales_never_exceed_the_image() {
    let cfg = TrainConfig::default();
    let img = coord_image(300, 500, 0.0);
    for seed in 0..20 {
        let (_, _, info) = sample_training_pair(&img, &img, &cfg, seed).unwrap();
        assert_eq!(info.scale, 256);
    }
}

#[test]
fn flipped_crop_equals_flipping_the_plain_crop() {
    let cfg = TrainConfig {
        crop_scales: vec![16],
        ..TrainConfig::default()
    };
    let img = coord_image(40, 30, 0.5);
    let mut saw = [false; 2];
    for seed in 0..40 {
        let (out, _, info) = sample_training_pair(&img, &img, &cfg, seed).unwrap();
        let mut want = img.crop(info.x0, info.y0, 16, 16).unwrap();
        if info.hflip {
            want = want.flip_horizontal();
            saw[0] = true;
        }
        if info.vflip {
            want = want.flip_vertical();
            saw[1] = true;
        }
        assert_eq!(out, want);
    }
    assert!(saw[0] && saw[1]);
}

#[test]
fn batches_share_one_scale() {
    let cfg = TrainConfig {
        crop_scales: vec![8, 16],
        batch_size: 3,
        ..TrainConfig::default()
    };
    let imgs: Vec<Image> = (0..3).map(|i| coord_image(20 + i, 24, 0.1)).collect();
    let pairs: Vec<(&Image, &Image)> = imgs.iter().map(|i| (i, i)).collect();
    for step in 0..10 {
        let b = make_batch(&pairs, &cfg, step).unwrap();
        let s = b.crops[0].scale;
        assert!(b.crops.iter().all(|c| c.scale == s));
        assert_eq!(b.blurred.shape(), &[3, 3, s, s]);
        assert_eq!(b.blurred, b.sharp);
    }
}

proptest! {
    #[test]
    fn paired_crops_see_identical_geometry(w in 20usize..60, h in 20usize..60, seed in any::<u64>()) {
        let cfg = TrainConfig { crop_scales: vec![8, 12, 16, 20], ..TrainConfig::default() };
        let (b, s) = (coord_image(w, h, 0.2), coord_image(w, h, 0.9));
        let (bc, sc, info) = sample_training_pair(&b, &s, &cfg, seed).unwrap();
        prop_assert!(info.scale <= w.min(h));
        for y in 0..info.scale {
            for x in 0..info.scale {
                let src = decode(&bc, x, y, w, h);
                prop_assert_eq!(src, decode(&sc, x, y, w, h));
                let ex = if info.hflip { info.x0 + info.scale - 1 - x } else { info.x0 + x };
                let ey = if info.vflip { info.y0 + info.scale - 1 - y } else { info.y0 + y };
                prop_assert_eq!(src, (ex, ey));
            }
        }
    }

    #[test]
    fn schedule_is_constant_then_decreasing(
        epochs in 2usize..600,
        frac in 0.0f64..=1.0,
        lr0 in 1e-6f64..1e-2,
        ratio in 0.01f64..0.99,
    ) {
        let cfg = TrainConfig {
            epochs,
            decay_start_epoch: ((epochs as f64) * frac) as usize,
            lr_initial: lr0,
            lr_final: lr0 * ratio,
            ..TrainConfig::default()
        };
        let lrs: Vec<f64> = (0..epochs).map(|e| lr_schedule(e, &cfg).unwrap()).collect();
        for (e, lr) in lrs.iter().enumerate() {
            prop_assert!(*lr <= cfg.lr_initial && *lr >= cfg.lr_final * (1.0 - 1e-12));
            if e < cfg.decay_start_epoch {
                prop_assert_eq!(*lr, cfg.lr_initial);
            }
            if e > cfg.decay_start_epoch {
                prop_assert!(*lr < lrs[e - 1]);
            }
        }
        prop_assert!(lr_schedule(epochs, &cfg).is_err());
    }
}

fn tiny_models() -> Models {
    Models {
        generator: Generator::new(GeneratorConfig {
            base_channels: 4,
            n_rfbs: 1,
            rfb_channels: 8,
            ..GeneratorConfig::default()
        })
        .unwrap(),
        critic: Critic::new(DiscriminatorConfig { channel_plan: vec![4, 8] }).unwrap(),
        extractor: FeatureExtractor::vgg19_random(&["conv2_2", "conv3_3", "conv4_4", "conv5_4"], 16, 1).unwrap(),
    }
}

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        crop_scales: vec![32],
        critic_steps_per_gen: 2,
        seed: 17,
        ..TrainConfig::default()
    }
}

fn tiny_pair() -> (Image, Image) {
    let sharp = Image::from_fn(40, 36, ValueRange::Unit, |x, y, c| ((x * 7 + y * 3 + c * 5) % 11) as f64 / 10.0).unwrap();
    let blurred = Image::from_fn(40, 36, ValueRange::Unit, |x, y, c| 0.5 * sharp.get(x, y, c) + 0.25).unwrap();
    (blurred, sharp)
}

#[test]
fn train_step_is_deterministic_and_moves_the_generator() {
    let m = tiny_models();
    let cfg = tiny_cfg();
    let (b, s) = tiny_pair();
    let batch = make_batch(&[(&b, &s)], &cfg, 0).unwrap();
    let st = TrainState::new(&m, &cfg).unwrap();
    let (a1, l1) = train_step(&m, st.clone(), &batch, &cfg, 1e-4).unwrap();
    let (a2, l2) = train_step(&m, st.clone(), &batch, &cfg, 1e-4).unwrap();
    assert_eq!(l1, l2);
    assert!(l1.is_finite());
    assert_eq!(a1, a2);
    assert_eq!(a1.step, 1);
    assert_ne!(a1.generator.fingerprint(), st.generator.fingerprint());
}

#[test]
fn phases_only_touch_their_own_network() {
    let m = tiny_models();
    let cfg = tiny_cfg();
    let (b, s) = tiny_pair();
    let batch = make_batch(&[(&b, &s)], &cfg, 0).unwrap();
    let mut st = TrainState::new(&m, &cfg).unwrap();
    let (g0, c0) = (st.generator.fingerprint(), st.critic.fingerprint());
    let mut bundle = LossBundle::default();
    critic_phase(&m, &mut st, &batch, &cfg, 1e-3, &mut bundle).unwrap();
    assert_eq!(st.generator.fingerprint(), g0);
    let c1 = st.critic.fingerprint();
    assert_ne!(c1, c0);
    generator_phase(&m, &mut st, &batch, &cfg, 1e-3, &mut bundle).unwrap();
    assert_eq!(st.critic.fingerprint(), c1);
    assert_ne!(st.generator.fingerprint(), g0);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let m = tiny_models();
    let cfg = tiny_cfg();
    let (b, s) = tiny_pair();
    let batch = make_batch(&[(&b, &s)], &cfg, 0).unwrap();
    let st = TrainState::new(&m, &cfg).unwrap();
    let (after, _) = train_step(&m, st.clone(), &batch, &cfg, 0.0).unwrap();
    assert_eq!(encode_archive(&after.generator).unwrap(), encode_archive(&st.generator).unwrap());
    assert_eq!(encode_archive(&after.critic).unwrap(), encode_archive(&st.critic).unwrap());
}

#[test]
fn resumed_state_continues_bit_exactly() {
    let m = tiny_models();
    let cfg = tiny_cfg();
    let (b, s) = tiny_pair();
    let run = |mut st: TrainState, steps: u64| {
        for _ in 0..steps {
            let batch = make_batch(&[(&b, &s)], &cfg, st.step).unwrap();
            st = train_step(&m, st, &batch, &cfg, 1e-3).unwrap().0;
        }
        st
    };
    let start = TrainState::new(&m, &cfg).unwrap();
    let straight = run(start.clone(), 3);
    let mid = run(start, 1);
    let bytes = encode_archive(&mid.to_archive().unwrap()).unwrap();
    let restored = TrainState::from_archive(&decode_archive(&bytes).unwrap()).unwrap();
    assert_eq!(restored, mid);
    let resumed = run(restored, 2);
    assert_eq!(resumed, straight);
}

#[test]
fn non_finite_input_is_reported() {
    let m = tiny_models();
    let cfg = tiny_cfg();
    let (b, s) = tiny_pair();
    let mut batch = make_batch(&[(&b, &s)], &cfg, 0).unwrap();
    batch.blurred.data_mut()[5] = f64::NAN;
    let st = TrainState::new(&m, &cfg).unwrap();
    let err = train_step(&m, st, &batch, &cfg, 1e-4).unwrap_err();
    assert!(matches!(err, sharpgan_core::Error::NonFinite(_)), "{err}");
}
