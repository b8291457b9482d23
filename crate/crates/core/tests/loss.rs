mod common;

use mvskit_core::grid::{BinaryMask, DepthMap, ImageGrid};
use mvskit_core::loss::*;
use mvskit_core::pipeline::{build_objective, random_instance, Frame};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gt_depth() -> DepthMap {
    DepthMap::filled(64, 48, 1, common::PLANE_Z)
}

fn random_image(seed: u64, w: usize, h: usize) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageGrid::from_vec(w, h, 3, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
}

/// Single-window SSIM of two constant patches, written out from the definition.
fn constant_ssim(a: f64, b: f64) -> f64 {
    let (c1, c2) = (1e-4, 9e-4);
    ((2.0 * a * b + c1) * c2) / ((a * a + b * b + c1) * c2)
}

#[test]
fn constant_patch_ssim_matches_closed_form() {
    let a = ImageGrid::filled(9, 7, 1, 0.25);
    let b = ImageGrid::filled(9, 7, 1, 0.75);
    let m = ssim_loss(&a, &b, &BinaryMask::new(9, 7, true)).unwrap();
    let expected = (1.0 - constant_ssim(0.25, 0.75)) / 2.0;
    assert!((m.value - expected).abs() < 1e-12);
    assert!((m.value - 0.19993).abs() < 1e-4, "{}", m.value);
    assert_eq!(m.count, 63);
}

#[test]
fn weighted_sums_with_published_weights() {
    let w = LossWeights::default();
    assert!((combine_pixel(0.1, 0.2, 0.3, &w) - 0.1401).abs() < 1e-15);
    assert!((combine_feature([1.0, 1.0, 1.0], &w) - 1.4).abs() < 1e-15);
    let zero_beta = LossWeights {
        beta1: 0.0,
        beta2: 0.0,
        beta3: 0.0,
        ..w
    };
    assert_eq!(combine_feature([0.3, 2.0, 7.0], &zero_beta), 0.0);
}

fn recombined(b: &LossBreakdown, w: &LossWeights) -> f64 {
    b.views
        .iter()
        .map(|v| {
            let pixel = w.lambda1 * v.photo + w.lambda2 * v.ssim + w.lambda3 * v.smooth;
            let feature = w.beta1 * v.feature_per_scale[0] + w.beta2 * v.feature_per_scale[1] + w.beta3 * v.feature_per_scale[2];
            w.gamma1 * pixel + w.gamma2 * feature
        })
        .sum()
}

#[test]
fn breakdowns_recombine_with_published_weights() {
    let cfg = common::oracle_config();
    let w = LossWeights::default();
    assert_eq!(cfg.loss, w);
    for seed in 0..5 {
        let (frames, depth) = random_instance(seed, 16, &cfg).unwrap();
        let b = build_objective(&frames, &cfg).unwrap().evaluate(&depth).unwrap();
        assert!(b.total > 0.0);
        assert!((b.total - recombined(&b, &w)).abs() <= 1e-10);
        for v in &b.views {
            let pixel = w.lambda1 * v.photo + w.lambda2 * v.ssim + w.lambda3 * v.smooth;
            assert!((v.pixel - pixel).abs() <= 1e-10);
        }
    }
    let (spec, views) = common::plane_oracle(3);
    let obj = build_objective(&common::frames(&spec, &views), &cfg).unwrap();
    let mut d = gt_depth();
    d.data_mut().iter_mut().enumerate().for_each(|(i, z)| *z += (i % 7) as f64 - 3.0);
    let b = obj.evaluate(&d).unwrap();
    assert!((b.total - recombined(&b, &w)).abs() <= 1e-10);
}

#[test]
fn ground_truth_on_the_noiseless_oracle_is_nearly_free() {
    let cfg = common::oracle_config();
    for seed in 1..=3 {
        let (spec, views) = common::plane_oracle(seed);
        let b = build_objective(&common::frames(&spec, &views), &cfg)
            .unwrap()
            .evaluate(&gt_depth())
            .unwrap();
        assert!(b.total < 1e-3, "seed {seed}: {}", b.total);
        assert!(b.valid_pixel_count > 2000);
        for f in b.feature_per_scale {
            assert!(f < 1e-3);
        }
    }
}

#[test]
fn truth_is_a_local_minimum() {
    let cfg = common::oracle_config();
    for seed in 1..=10 {
        let (spec, views) = common::plane_oracle(seed);
        let obj = build_objective(&common::frames(&spec, &views), &cfg).unwrap();
        let at = |z: f64| obj.evaluate(&DepthMap::filled(64, 48, 1, z)).unwrap().total;
        let l0 = at(common::PLANE_Z);
        assert!(l0 < at(common::PLANE_Z + 2.0), "seed {seed}");
        assert!(l0 < at(common::PLANE_Z - 2.0), "seed {seed}");
    }
}

#[test]
fn duplicated_source_doubles_the_total() {
    let cfg = common::oracle_config();
    let (frames, depth) = random_instance(4, 16, &cfg).unwrap();
    let single = build_objective(&frames, &cfg).unwrap().evaluate(&depth).unwrap().total;
    let twice: Vec<Frame> = vec![frames[0].clone(), frames[1].clone(), frames[1].clone()];
    let double = build_objective(&twice, &cfg).unwrap().evaluate(&depth).unwrap().total;
    assert!((double - 2.0 * single).abs() <= 1e-12 * double);
}

#[test]
fn zero_gammas_give_zero_total() {
    let mut cfg = common::oracle_config();
    cfg.loss.gamma1 = 0.0;
    cfg.loss.gamma2 = 0.0;
    let (frames, depth) = random_instance(5, 16, &cfg).unwrap();
    assert_eq!(build_objective(&frames, &cfg).unwrap().evaluate(&depth).unwrap().total, 0.0);
}

proptest! {
    #[test]
    fn identical_images_cost_nothing(seed in 0u64..1000) {
        let a = random_image(seed, 12, 9);
        let full = BinaryMask::new(12, 9, true);
        prop_assert_eq!(photometric_loss(&a, &a, &full).unwrap().value, 0.0);
        prop_assert_eq!(ssim_loss(&a, &a, &full).unwrap().value, 0.0);
    }

    #[test]
    fn components_are_nonnegative_and_bounded(seed in 0u64..1000) {
        let a = random_image(seed, 12, 9);
        let b = random_image(seed + 7919, 12, 9);
        let full = BinaryMask::new(12, 9, true);
        let s = ssim_loss(&a, &b, &full).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(photometric_loss(&a, &b, &full).unwrap().value >= 0.0);
        let cfg = common::oracle_config();
        let (frames, depth) = random_instance(seed, 12, &cfg).unwrap();
        let r = build_objective(&frames, &cfg).unwrap().evaluate(&depth).unwrap();
        for v in [r.photo, r.ssim, r.smooth, r.pixel, r.feature, r.total] {
            prop_assert!(v >= 0.0);
        }
    }

    #[test]
    fn masked_out_content_is_ignored(seed in 0u64..1000) {
        let a = random_image(seed, 12, 9);
        let b = random_image(seed + 1, 12, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = BinaryMask::from_vec(12, 9, (0..108).map(|_| rng.gen_bool(0.7)).collect()).unwrap();
        let mut c = b.clone();
        for y in 0..9 {
            for x in 0..12 {
                if !mask.get(x, y) {
                    c.pixel_mut(x, y).iter_mut().for_each(|v| *v = rng.gen());
                }
            }
        }
        prop_assert_eq!(photometric_loss(&a, &b, &mask).unwrap(), photometric_loss(&a, &c, &mask).unwrap());
        prop_assert_eq!(ssim_loss(&a, &b, &mask).unwrap(), ssim_loss(&a, &c, &mask).unwrap());
    }
}
