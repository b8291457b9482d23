mod common;

use mvskit_core::features::extract_pyramid;
use mvskit_core::grid::ImageGrid;
use mvskit_core::pipeline::{estimate_depth, hypotheses};
use mvskit_core::scene::render_scene;
use mvskit_core::sweep::*;
use nalgebra::Vector3;
use proptest::prelude::*;

#[test]
fn plane_oracle_soft_argmin_within_one_spacing() {
    let cfg = common::oracle_config();
    for seed in 1..=4 {
        let (spec, views) = common::plane_oracle(seed);
        let est = estimate_depth(&common::frames(&spec, &views), &cfg).unwrap();
        let spacing = est.hypotheses.spacing();
        let mut n = 0;
        let mut good = 0;
        for y in 0..48 {
            for x in 0..64 {
                if est.coverage.get(x, y) {
                    n += 1;
                    assert!(est.depth.get(x, y, 0) > 0.0);
                    if (est.depth.get(x, y, 0) - common::PLANE_Z).abs() <= spacing {
                        good += 1;
                    }
                }
            }
        }
        let share = good as f64 / n as f64;
        assert!(n > 1500, "seed {seed}: {n} interior pixels");
        assert!(share >= 0.95, "seed {seed}: {share}");
    }
}

/// Cost volume of the oracle at the sweep level, without regularisation.
fn raw_cost(seed: u64, views: usize) -> (CostVolume, DepthHypotheses, Vec<mvskit_core::camera::CameraModel>) {
    let cfg = common::oracle_config();
    let s = common::scene(common::fronto(common::PLANE_Z), common::noise(seed), views, 0.0, 0);
    let r = render_scene(&s).unwrap();
    let level = cfg.depth.level;
    let feats: Vec<ImageGrid> = r
        .iter()
        .map(|v| extract_pyramid(&v.image, &cfg.features).unwrap().level(level).unwrap().clone())
        .collect();
    let cams: Vec<_> = s.views.iter().map(|c| c.at_level(level)).collect();
    let hyp = hypotheses(&cfg).unwrap();
    let cost = build_cost_volume(&feats[0], &feats[1..], &cams, &hyp, cfg.depth.invalid_cost).unwrap();
    (cost, hyp, cams)
}

/// Exhaustive per-pixel scan of the raw cost. The half-resolution features
/// alias on this small image, so a minority of pixels pick a neighbour of
/// the nearest hypothesis.
#[test]
fn cost_argmin_is_nearest_hypothesis_on_the_plane() {
    for seed in 1..=5 {
        argmin_scan(seed);
    }
}

fn argmin_scan(seed: u64) {
    let (cost, hyp, cams) = raw_cost(seed, 2);
    let nearest = hyp
        .values()
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - common::PLANE_Z).abs().total_cmp(&(b.1 - common::PLANE_Z).abs()))
        .unwrap()
        .0;
    let cover = mvskit_core::pipeline::hypothesis_coverage(&cams[0], &cams[1..], &hyp, 1.0);
    let mut n = 0;
    let mut hit = 0;
    let mut close = 0;
    for y in 0..cost.height() {
        for x in 0..cost.width() {
            if !cover.get(x, y) {
                continue;
            }
            let col = cost.column(x, y);
            let arg = (0..col.len()).min_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            n += 1;
            if arg == nearest {
                hit += 1;
            }
            if arg.abs_diff(nearest) <= 1 {
                close += 1;
            }
        }
    }
    assert!(n > 300);
    assert!(hit as f64 >= 0.8 * n as f64, "seed {seed}: {hit} of {n}");
    assert!(close as f64 >= 0.95 * n as f64, "seed {seed}: {close} of {n}");
}

#[test]
fn permuting_sources_leaves_the_cost_unchanged() {
    let cfg = common::oracle_config();
    let s = common::scene(
        mvskit_core::scene::Geometry::Plane {
            normal: Vector3::new(0.0, 0.2, 1.0),
            offset: 512.0,
        },
        common::noise(4),
        3,
        0.02,
        9,
    );
    let r = render_scene(&s).unwrap();
    let level = 1;
    let f: Vec<ImageGrid> = r
        .iter()
        .map(|v| extract_pyramid(&v.image, &cfg.features).unwrap().level(level).unwrap().clone())
        .collect();
    let c: Vec<_> = s.views.iter().map(|c| c.at_level(level)).collect();
    let hyp = hypotheses(&cfg).unwrap();
    let a = build_cost_volume(&f[0], &[f[1].clone(), f[2].clone()], &[c[0], c[1], c[2]], &hyp, 4.0).unwrap();
    let b = build_cost_volume(&f[0], &[f[2].clone(), f[1].clone()], &[c[0], c[2], c[1]], &hyp, 4.0).unwrap();
    let worst = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-15, "{worst}");
}

fn volume(d: usize, w: usize, h: usize, vals: Vec<f64>) -> CostVolume {
    Volume::from_vec(d, w, h, vals).unwrap()
}

proptest! {
    #[test]
    fn soft_argmin_stays_inside_the_range(vals in prop::collection::vec(0.0..10.0f64, 8 * 4 * 3), t in 0.001..5.0f64) {
        let hyp = DepthHypotheses::new(425.0, 935.0, 8).unwrap();
        let p = softmax_probability(&volume(8, 4, 3, vals), t).unwrap();
        let z = soft_argmin(&p, &hyp).unwrap();
        for &v in z.data() {
            prop_assert!((425.0..=935.0).contains(&v));
        }
    }

    #[test]
    fn tiny_temperature_selects_the_argmin(vals in prop::collection::vec(0.0..1.0f64, 6 * 4 * 4)) {
        let hyp = DepthHypotheses::new(425.0, 935.0, 6).unwrap();
        let cost = volume(6, 4, 4, vals);
        let z = soft_argmin(&softmax_probability(&cost, 1e-6).unwrap(), &hyp).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let col = cost.column(x, y);
                let mut sorted = col.clone();
                sorted.sort_by(f64::total_cmp);
                prop_assume!(sorted[1] - sorted[0] > 1e-4);
                let arg = (0..6).min_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
                prop_assert!((z.get(x, y, 0) - hyp.values()[arg]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn regularizer_preserves_constants(v in -5.0..5.0f64, radius in 0usize..3, passes in 0usize..3) {
        let c = Volume::filled(5, 6, 4, v);
        let r = regularize_volume(&c, radius, passes);
        for &x in r.data() {
            prop_assert!((x - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }
}
