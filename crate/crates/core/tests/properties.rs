use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharpgan_core::image::{Image, ValueRange};
use sharpgan_core::losses::{self, CriticFn, LossWeights};
use sharpgan_core::metrics::{psnr, ssim, EvalReport, EvalRow};
use sharpgan_core::rng;
use sharpgan_core::Result;
use sharpgan_core::Tensor;

fn tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| scale * (r.random::<f64>() * 2.0 - 1.0)).collect()).unwrap()
}

/// `D(x) = g·⟨u, x⟩` with `‖u‖ = 1`, so `‖∇D‖ = g` everywhere.
struct ConstantSlope {
    u: Vec<f64>,
    g: f64,
}

impl CriticFn for ConstantSlope {
    fn values(&self, x: &Tensor<f64>) -> Result<Vec<f64>> {
        let per = self.u.len();
        Ok(x.data().chunks(per).map(|c| self.g * c.iter().zip(&self.u).map(|(a, b)| a * b).sum::<f64>()).collect())
    }

    fn values_and_input_grad(&self, x: &Tensor<f64>) -> Result<(Vec<f64>, Tensor<f64>)> {
        let n = x.shape()[0];
        let g: Vec<f64> = (0..n).flat_map(|_| self.u.iter().map(|v| v * self.g)).collect();
        Ok((self.values(x)?, Tensor::from_vec(x.shape(), g)?))
    }
}

fn unit_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..len).map(|_| rng::normal(&mut r)).collect();
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / n).collect()
}

fn noisy(base: &Image, sigma: f64, seed: u64) -> Image {
    let mut r = rng::stream(seed, rng::Purpose::BlurNoise, 0);
    let px = base.pixels().iter().map(|v| (v + sigma * rng::normal(&mut r)).clamp(0.0, 1.0)).collect();
    Image::new(base.width(), base.height(), ValueRange::Unit, px).unwrap()
}

fn smooth_image(w: usize, h: usize, seed: u64) -> Image {
    let f = seed as f64 * 0.37;
    Image::from_fn(w, h, ValueRange::Unit, |x, y, c| {
        0.5 + 0.4 * ((x as f64 * 0.3 + f).sin() * (y as f64 * 0.2 + c as f64).cos())
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn l2_laws(seed in any::<u64>(), k in 0.1f64..4.0) {
        let a = tensor(&[2, 3, 4, 5], seed, 1.0);
        let b = tensor(&[2, 3, 4, 5], seed ^ 1, 1.0);
        let ab = losses::l2_loss(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, losses::l2_loss(&b, &a).unwrap());
        prop_assert_eq!(losses::l2_loss(&a, &a).unwrap(), 0.0);
        let scaled = b.zip_map(&a, |bv, av| av + k * (bv - av)).unwrap();
        let ks = losses::l2_loss(&a, &scaled).unwrap();
        prop_assert!((ks - k * k * ab).abs() <= 1e-9 * ks.max(1.0));
    }

    #[test]
    fn penalty_calibration(g in 0.0f64..5.0, seed in any::<u64>()) {
        let shape = [3, 3, 4, 4];
        let c = ConstantSlope { u: unit_vector(48, seed), g };
        let real = tensor(&shape, seed, 1.0);
        let fake = tensor(&shape, seed.wrapping_add(7), 1.0);
        let gp = losses::gradient_penalty(&c, &real, &fake, seed).unwrap();
        prop_assert!(gp >= 0.0);
        prop_assert!((gp - (g - 1.0) * (g - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn total_loss_is_affine_in_each_weight(
        adv in -5.0f64..5.0, feat in 0.0f64..3.0, l2 in 0.0f64..1.0,
        lx in 0.0f64..10.0, l2w in 0.0f64..1e3, dx in 0.0f64..5.0,
    ) {
        let w = LossWeights { lambda_x: lx, lambda_2: l2w, ..LossWeights::default() };
        let base = losses::total_generator_loss(adv, feat, l2, &w);
        let wx = LossWeights { lambda_x: lx + dx, ..w.clone() };
        let w2 = LossWeights { lambda_2: l2w + dx, ..w.clone() };
        prop_assert!((losses::total_generator_loss(adv, feat, l2, &wx) - base - dx * feat).abs() < 1e-9 * (1.0 + base.abs()));
        prop_assert!((losses::total_generator_loss(adv, feat, l2, &w2) - base - dx * l2).abs() < 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn ssim_bounds_and_symmetry(seed in any::<u64>(), sigma in 0.0f64..0.5) {
        let a = smooth_image(14, 12, seed % 50);
        let b = noisy(&a, sigma, seed);
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, ssim(&b, &a).unwrap());
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        if a != b {
            prop_assert!(ab < 1.0);
        }
    }

    #[test]
    fn report_aggregate_is_row_mean(vals in prop::collection::vec((0.0f64..60.0, -1.0f64..1.0, 1e-4f64..2.0), 1..20)) {
        let rows: Vec<EvalRow> = vals.iter().enumerate().map(|(i, &(p, s, t))| EvalRow { name: format!("{i}"), psnr_db: p, ssim: s, seconds: t }).collect();
        let r = EvalReport::new(rows, "h".into(), "d".into()).unwrap();
        let n = vals.len() as f64;
        prop_assert!((r.aggregate.psnr_db - vals.iter().map(|v| v.0).sum::<f64>() / n).abs() < 1e-9);
        prop_assert!((r.aggregate.ssim - vals.iter().map(|v| v.1).sum::<f64>() / n).abs() < 1e-9);
        prop_assert!((r.aggregate.seconds - vals.iter().map(|v| v.2).sum::<f64>() / n).abs() < 1e-9);
    }
}

#[test]
fn psnr_decreases_with_noise_level() {
    // sign test over 20 trials with nested noise levels
    let mut wins = 0;
    for t in 0..20 {
        let a = smooth_image(24, 24, t);
        let lo = psnr(&a, &noisy(&a, 0.02, 100 + t)).unwrap();
        let hi = psnr(&a, &noisy(&a, 0.08, 200 + t)).unwrap();
        if hi < lo {
            wins += 1;
        }
    }
    // P(≥ 18 of 20 | fair coin) < 2e-4
    assert!(wins >= 18, "{wins}/20");
}

#[test]
fn penalty_shape_mismatch_is_an_error() {
    let c = ConstantSlope { u: unit_vector(48, 1), g: 1.0 };
    assert!(losses::gradient_penalty(&c, &tensor(&[1, 3, 4, 4], 1, 1.0), &tensor(&[1, 3, 4, 5], 1, 1.0), 0).is_err());
    assert!(losses::critic_loss(&c, &tensor(&[1, 3, 4, 4], 1, 1.0), &tensor(&[2, 3, 4, 4], 1, 1.0), 10.0, 0).is_err());
    let a = tensor(&[1, 3, 4, 4], 2, 1.0);
    assert_eq!(losses::critic_loss(&c, &a, &a, 0.0, 0).unwrap(), 0.0);
}
