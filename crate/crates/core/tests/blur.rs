use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharpgan_core::blur::{apply_blur, make_motion_kernel, BlurKernel, BlurParams};
use sharpgan_core::image::{Image, ValueRange};

/// Gather-form rasterizer: every kernel pixel collects the tent weight of
/// each unit-spaced sample on the segment, then the grid is normalized.
fn line_oracle(length: usize, angle_deg: f64) -> (usize, Vec<f64>) {
    let side = if (length + 2) % 2 == 1 { length + 2 } else { length + 3 };
    let phi = angle_deg.rem_euclid(180.0).to_radians();
    let (mut ux, mut uy) = (phi.cos(), -phi.sin());
    if ux.abs() < 1e-12 {
        ux = 0.0;
    }
    if uy.abs() < 1e-12 {
        uy = 0.0;
    }
    let c = (side / 2) as f64;
    let offset = if length % 2 == 0 { 0.5 } else { 0.0 };
    let samples: Vec<(f64, f64)> = (0..length)
        .map(|i| {
            let t = i as f64 - (length as f64 - 1.0) / 2.0 + offset;
            (c + t * ux, c + t * uy)
        })
        .collect();
    let tent = |d: f64| (1.0 - d.abs()).max(0.0);
    let mut grid = vec![0.0; side * side];
    for row in 0..side {
        for col in 0..side {
            grid[row * side + col] = samples.iter().map(|&(x, y)| tent(col as f64 - x) * tent(row as f64 - y)).sum();
        }
    }
    let s: f64 = grid.iter().sum();
    (side, grid.into_iter().map(|v| v / s).collect())
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn diagonal_kernel_matches_gather_oracle() {
    let k = make_motion_kernel(21, 45.0).unwrap();
    let (side, want) = line_oracle(21, 45.0);
    assert_eq!(k.size(), side);
    assert_eq!(side, 23);
    assert!(max_diff(k.weights(), &want) < 1e-6);
}

#[test]
fn kernels_match_oracle_across_lengths_and_angles() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let len = rng.random_range(2..=40);
        let angle = rng.random_range(-360.0..720.0);
        let k = make_motion_kernel(len, angle).unwrap();
        let (side, want) = line_oracle(len, angle);
        assert_eq!(k.size(), side);
        let d = max_diff(k.weights(), &want);
        assert!(d < 1e-6, "L={len} θ={angle}: {d}");
    }
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    j as usize
}

/// Direct nested-loop convolution with mirror padding.
fn conv_oracle(img: &Image, k: &BlurKernel) -> Vec<f64> {
    let (w, h, s) = (img.width(), img.height(), k.size());
    let r = (s / 2) as isize;
    let mut out = vec![0.0; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for i in 0..s {
                    for j in 0..s {
                        // flipped kernel: true convolution
                        let sy = mirror(y as isize - (i as isize - r), h);
                        let sx = mirror(x as isize - (j as isize - r), w);
                        acc += k.at(i, j) * img.get(sx, sy, c);
                    }
                }
                out[(y * w + x) * 3 + c] = acc.clamp(0.0, 1.0);
            }
        }
    }
    out
}

fn random_kernel(side: usize, rng: &mut ChaCha8Rng) -> BlurKernel {
    let raw: Vec<f64> = (0..side * side).map(|_| rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    BlurKernel::from_weights(side, raw.into_iter().map(|v| v / s).collect()).unwrap()
}

fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
    let px = (0..w * h * 3).map(|_| rng.random::<f64>()).collect();
    Image::new(w, h, ValueRange::Unit, px).unwrap()
}

#[test]
fn convolution_matches_nested_loop_oracle_up_to_16x16() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for side in [1, 3, 5] {
        for h in side..=16 {
            for w in side..=16 {
                let k = random_kernel(side, &mut rng);
                let img = random_image(w, h, &mut rng);
                let got = apply_blur(&img, &k, 0.0, 0).unwrap();
                let d = max_diff(got.pixels(), &conv_oracle(&img, &k));
                assert!(d < 1e-6, "{w}×{h} with {side}×{side}: {d}");
            }
        }
    }
}

#[test]
fn asymmetric_kernel_orientation() {
    // A single off-center tap moves content: out(x) = in(x - 1) horizontally.
    let mut wts = vec![0.0; 9];
    wts[5] = 1.0; // row 1, col 2
    let k = BlurKernel::from_weights(3, wts).unwrap();
    let img = Image::from_fn(6, 4, ValueRange::Unit, |x, _, _| x as f64 / 5.0).unwrap();
    let out = apply_blur(&img, &k, 0.0, 0).unwrap();
    for x in 1..6 {
        assert!((out.get(x, 2, 0) - img.get(x - 1, 2, 0)).abs() < 1e-12);
    }
}

#[test]
fn blur_errors() {
    let img = Image::filled(4, 4, ValueRange::Unit, 0.5).unwrap();
    let k = make_motion_kernel(5, 0.0).unwrap();
    assert!(apply_blur(&img, &k, 0.0, 0).is_err());
    assert!(apply_blur(&img, &BlurKernel::identity(), -0.1, 0).is_err());
    assert!(make_motion_kernel(0, 10.0).is_err());
    let bad = BlurParams {
        length_min: 0,
        ..BlurParams::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn draws_cover_the_length_range() {
    let p = BlurParams::default();
    let mut seen = [false; 41];
    for i in 0..2000 {
        let d = p.draw(3, i).unwrap();
        assert!((16..=40).contains(&d.length_px));
        assert!((0.0..360.0).contains(&d.angle_deg));
        seen[d.length_px] = true;
    }
    assert!(seen[16..=40].iter().all(|s| *s));
}

proptest! {
    #[test]
    fn normalization_over_random_samples(len in 1usize..=40, angle in 0.0f64..360.0) {
        let k = make_motion_kernel(len, angle).unwrap();
        let s: f64 = k.weights().iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-6);
        prop_assert!(k.weights().iter().all(|w| *w >= 0.0));
        prop_assert_eq!(k.size() % 2, 1);
        let side_ok = if len == 1 { k.size() == 1 } else { k.size() >= len + 2 };
        prop_assert!(side_ok, "L={} side {}", len, k.size());
    }

    #[test]
    fn blur_is_deterministic(seed in any::<u64>(), sigma in 0.0f64..0.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(9, 7, &mut rng);
        let k = make_motion_kernel(3, 30.0).unwrap();
        let a = apply_blur(&img, &k, sigma, seed).unwrap();
        let b = apply_blur(&img, &k, sigma, seed).unwrap();
        prop_assert_eq!(a.pixels(), b.pixels());
        prop_assert!(a.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
