//! Property checks of the statistics layer against naive oracles.

use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use viewuq_core::autodiff::rng;
use viewuq_core::stats::{pearson, psnr};
use viewuq_core::uq::{compute_bundle, uncertainty_only, SampleSource, SampleStack};
use viewuq_core::RgbImage;

fn image(h: usize, w: usize, data: &[f32]) -> RgbImage {
    RgbImage::from_planar(h, w, data.to_vec()).unwrap()
}

fn src(m: usize) -> SampleSource {
    SampleSource::McDropout { m, eta: 0.1, seed: 0 }
}

/// `m` samples plus a ground truth, each `3·h·w` values in [-1, 1].
fn stacks() -> impl Strategy<Value = (usize, usize, Vec<Vec<f32>>)> {
    (prop_oneof![Just(2usize), Just(3), Just(10)], 1usize..5, 1usize..5).prop_flat_map(|(m, h, w)| {
        let img = prop::collection::vec(-1.0f32..=1.0, 3 * h * w);
        (Just(h), Just(w), prop::collection::vec(img, m + 1))
    })
}

fn naive_mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt())
}

proptest! {
    #[test]
    fn bundle_matches_flat_loop_oracle((h, w, mut imgs) in stacks()) {
        let gt = image(h, w, &imgs.pop().unwrap());
        let samples: Vec<RgbImage> = imgs.iter().map(|d| image(h, w, d)).collect();
        let m = samples.len();
        let b = compute_bundle(&SampleStack::new(samples.clone(), src(m)).unwrap(), &gt).unwrap();
        let n = h * w;
        for c in 0..3 {
            for p in 0..n {
                let xs: Vec<f64> = samples.iter().map(|s| s.get(c, p / w, p % w) as f64).collect();
                let g = gt.get(c, p / w, p % w) as f64;
                let (mean, sd) = naive_mean_std(&xs);
                let errs: Vec<f64> = xs.iter().map(|x| (x - g).abs()).collect();
                let (emean, esd) = naive_mean_std(&errs);
                prop_assert!((b.mean_image.get(c, p / w, p % w) as f64 - mean).abs() <= 1e-6);
                prop_assert!((b.channel_uncertainty[c][p] as f64 - sd).abs() <= 1e-6);
                prop_assert!((b.channel_error[c][p] as f64 - emean).abs() <= 1e-6);
                prop_assert!((b.channel_error_std[c][p] as f64 - esd).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn maps_are_nonnegative_and_combined_is_the_channel_sum((h, w, mut imgs) in stacks()) {
        let gt = image(h, w, &imgs.pop().unwrap());
        let samples: Vec<RgbImage> = imgs.iter().map(|d| image(h, w, d)).collect();
        let m = samples.len();
        let b = compute_bundle(&SampleStack::new(samples, src(m)).unwrap(), &gt).unwrap();
        for (ch, combined) in [
            (&b.channel_uncertainty, &b.combined_uncertainty),
            (&b.channel_error, &b.combined_error),
            (&b.channel_error_std, &b.combined_error_std),
        ] {
            for p in 0..h * w {
                prop_assert!(ch.iter().all(|c| c[p] >= 0.0));
                prop_assert_eq!(combined[p], ch[0][p] + ch[1][p] + ch[2][p]);
            }
        }
    }

    #[test]
    fn sample_order_does_not_matter((h, w, mut imgs) in stacks(), shuffle in any::<u64>()) {
        use rand::seq::SliceRandom;
        let gt = image(h, w, &imgs.pop().unwrap());
        let samples: Vec<RgbImage> = imgs.iter().map(|d| image(h, w, d)).collect();
        let m = samples.len();
        let stack = SampleStack::new(samples, src(m)).unwrap();
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng::stream(shuffle));
        let a = compute_bundle(&stack, &gt).unwrap();
        let b = compute_bundle(&stack.permuted(&perm).unwrap(), &gt).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn uncertainty_only_agrees_with_the_bundle((h, w, mut imgs) in stacks()) {
        let gt = image(h, w, &imgs.pop().unwrap());
        let samples: Vec<RgbImage> = imgs.iter().map(|d| image(h, w, d)).collect();
        let stack = SampleStack::new(samples, src(imgs.len())).unwrap();
        let b = compute_bundle(&stack, &gt).unwrap();
        let u = uncertainty_only(&stack).unwrap();
        prop_assert_eq!(u.mean_image, b.mean_image);
        prop_assert_eq!(u.channel_uncertainty, b.channel_uncertainty);
        prop_assert_eq!(u.combined_uncertainty, b.combined_uncertainty);
    }

    #[test]
    fn pearson_is_affine_invariant(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
        a in 0.01f64..50.0,
        b in -100.0f64..100.0,
    ) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assume!(xs.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max) > 1e-3);
        let Ok(r) = pearson(&xs, &ys) else { return Ok(()) };
        let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        prop_assert!((pearson(&scaled, &ys).unwrap() - r).abs() <= 1e-12);
    }
}

#[test]
fn pearson_hand_example() {
    // x̄ = 2, ȳ = 13/3; Σdxdy = 5, Σdx² = 2, Σdy² = 38/3.
    let expected = 5.0 / (2.0f64.sqrt() * (38.0f64 / 3.0).sqrt());
    let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap();
    assert!((r - expected).abs() < 1e-12, "{r} vs {expected}");
}

#[test]
fn two_sample_bundle_hand_example() {
    let samples = vec![image(1, 1, &[0.0, 0.0, 0.0]), image(1, 1, &[1.0, 0.0, 0.0])];
    let gt = image(1, 1, &[0.0, 0.0, 0.0]);
    let b = compute_bundle(&SampleStack::new(samples, src(2)).unwrap(), &gt).unwrap();
    assert_eq!(b.mean_image.get(0, 0, 0), 0.5);
    assert_eq!(b.channel_uncertainty[0], vec![0.5]);
    assert_eq!(b.channel_error[0], vec![0.5]);
    assert_eq!(b.channel_error_std[0], vec![0.5]);
}

#[test]
fn psnr_falls_as_noise_grows() {
    let (h, w) = (24, 24);
    let mut r = rng::stream(5);
    let base: Vec<f32> = (0..3 * h * w).map(|_| r.random_range(-0.5f32..0.5)).collect();
    let gt = image(h, w, &base);
    let unit: Vec<f64> = {
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..base.len()).map(|_| normal.sample(&mut r)).collect()
    };
    let mut last = f32::INFINITY;
    for sigma in [0.01, 0.02, 0.05, 0.1, 0.2, 0.4] {
        let noisy: Vec<f32> = base.iter().zip(&unit).map(|(&b, &n)| (b as f64 + sigma * n).clamp(-1.0, 1.0) as f32).collect();
        let p = psnr(&image(h, w, &noisy), &gt).unwrap().average;
        assert!(p < last, "σ {sigma}: {p} dB not below {last} dB");
        last = p;
    }
}
