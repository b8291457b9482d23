//! End-to-end stages shared by the command-line tool and the tests.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{CameraIntrinsics, CameraModel, PixelTransfer, RigidTransform, BOUNDS_EPS};
use crate::config::PipelineConfig;
use crate::error::{MvsError, Result};
use crate::features::extract_pyramid;
use crate::fusion::{filter_by_probability, fuse, geometric_consistency_filter, PointCloud};
use crate::grid::{upsample_depth, BinaryMask, DepthMap, ImageGrid, ProbabilityMap};
use crate::loss::{MultiViewLoss, View};
use crate::normals::refine_depth_nd;
use crate::refine::{finite_difference_gradient, refine_depth_gd, GradientReport, RefineConfig, RefineResult};
use crate::sweep::{
    build_cost_volume, probability_map, regularize_volume, soft_argmin, softmax_probability, DepthHypotheses,
};

/// An image with its camera.
#[derive(Debug, Clone)]
pub struct Frame {
    pub image: ImageGrid,
    pub camera: CameraModel,
}

#[derive(Debug, Clone)]
pub struct DepthEstimate {
    /// Full-resolution depth, 0 where the hypotheses are not covered.
    pub depth: DepthMap,
    pub probability: ProbabilityMap,
    /// Pixels whose hypothesis range is observed by the sources.
    pub coverage: BinaryMask,
    pub hypotheses: DepthHypotheses,
}

pub fn hypotheses(cfg: &PipelineConfig) -> Result<DepthHypotheses> {
    DepthHypotheses::new(cfg.depth.d_min, cfg.depth.d_max, cfg.depth.count)
}

/// Marks reference pixels for which at least `min_coverage` of the
/// hypotheses land inside some source image.
pub fn hypothesis_coverage(
    reference: &CameraModel,
    sources: &[CameraModel],
    hyp: &DepthHypotheses,
    min_coverage: f64,
) -> BinaryMask {
    let k = &reference.intrinsics;
    let xfers: Vec<PixelTransfer> = sources.iter().map(|s| PixelTransfer::between(reference, s)).collect();
    let grid = ImageGrid::from_fn(k.width, k.height, 1, |x, y, o| {
        let seen = hyp
            .values()
            .iter()
            .filter(|&&d| {
                xfers.iter().zip(sources).any(|(t, s)| {
                    t.apply(x as f64, y as f64, d).is_some_and(|tr| {
                        let ks = &s.intrinsics;
                        tr.pixel.x >= -BOUNDS_EPS
                            && tr.pixel.y >= -BOUNDS_EPS
                            && tr.pixel.x <= ks.width as f64 - 1.0 + BOUNDS_EPS
                            && tr.pixel.y <= ks.height as f64 - 1.0 + BOUNDS_EPS
                    })
                })
            })
            .count();
        o[0] = if seen as f64 >= min_coverage * hyp.len() as f64 { 1.0 } else { 0.0 };
    });
    BinaryMask::from_vec(k.width, k.height, grid.data().iter().map(|&v| v > 0.0).collect()).expect("mask shape")
}

/// Plane sweep on pyramid features, then soft-argmin and confidence,
/// upsampled to the reference resolution.
pub fn estimate_depth(frames: &[Frame], cfg: &PipelineConfig) -> Result<DepthEstimate> {
    if frames.len() < 2 {
        return Err(MvsError::arg("depth estimation needs a reference and at least one source"));
    }
    let hyp = hypotheses(cfg)?;
    let level = cfg.depth.level;
    let pyramids = frames
        .iter()
        .map(|f| extract_pyramid(&f.image, &cfg.features))
        .collect::<Result<Vec<_>>>()?;
    let feats: Vec<ImageGrid> = pyramids
        .iter()
        .map(|p| p.level(level).expect("configured level").clone())
        .collect();
    let cams: Vec<CameraModel> = frames.iter().map(|f| f.camera.at_level(level)).collect();
    let cost = build_cost_volume(&feats[0], &feats[1..], &cams, &hyp, cfg.depth.invalid_cost)?;
    let cost = regularize_volume(&cost, cfg.depth.regularize_radius, cfg.depth.regularize_passes);
    let prob = softmax_probability(&cost, cfg.depth.temperature)?;
    let mut coarse = soft_argmin(&prob, &hyp)?;
    let mut coarse_prob = probability_map(&prob, &coarse, &hyp, cfg.depth.probability_window)?;
    let coarse_cover = hypothesis_coverage(&cams[0], &cams[1..], &hyp, cfg.depth.min_coverage);
    for y in 0..coarse.height() {
        for x in 0..coarse.width() {
            if !coarse_cover.get(x, y) {
                coarse.set(x, y, 0, 0.0);
                coarse_prob.set(x, y, 0, 0.0);
            }
        }
    }
    let reference = &frames[0].camera;
    let (w, h) = (reference.intrinsics.width, reference.intrinsics.height);
    let sources: Vec<CameraModel> = frames[1..].iter().map(|f| f.camera).collect();
    let coverage = hypothesis_coverage(reference, &sources, &hyp, cfg.depth.min_coverage);
    let mut depth = upsample_depth(&coarse, w, h);
    let mut probability = upsample_depth(&coarse_prob, w, h);
    for y in 0..h {
        for x in 0..w {
            if !coverage.get(x, y) || depth.get(x, y, 0) <= 0.0 {
                depth.set(x, y, 0, 0.0);
                probability.set(x, y, 0, 0.0);
            }
        }
    }
    Ok(DepthEstimate {
        depth,
        probability,
        coverage,
        hypotheses: hyp,
    })
}

/// The consistency objective with `frames[0]` as reference.
pub fn build_objective(frames: &[Frame], cfg: &PipelineConfig) -> Result<MultiViewLoss> {
    if frames.len() < 2 {
        return Err(MvsError::arg("the objective needs a reference and at least one source"));
    }
    let views = frames
        .iter()
        .map(|f| View::new(f.image.clone(), f.camera, &cfg.features))
        .collect::<Result<Vec<_>>>()?;
    let mut it = views.into_iter();
    let reference = it.next().expect("nonempty");
    MultiViewLoss::new(reference, it.collect(), cfg.loss, cfg.range()?)
}

pub fn refine_normal_depth(depth: &DepthMap, reference: &Frame, cfg: &PipelineConfig) -> Result<DepthMap> {
    refine_depth_nd(
        depth,
        &reference.camera.intrinsics,
        &reference.image,
        cfg.loss.alpha1,
        cfg.range()?,
        cfg.refine.nd_iterations.max(1),
    )
}

pub fn refine_config(cfg: &PipelineConfig) -> Result<RefineConfig> {
    Ok(RefineConfig {
        step: cfg.refine.step,
        max_iterations: cfg.refine.max_iterations,
        tolerance: cfg.refine.tolerance,
        range: cfg.range()?,
    })
}

pub fn refine_gradient_descent(depth: &DepthMap, frames: &[Frame], cfg: &PipelineConfig) -> Result<RefineResult> {
    let obj = build_objective(frames, cfg)?;
    refine_depth_gd(depth, &obj, &refine_config(cfg)?)
}

/// A random `size x size` two-view instance: noise images, a small random
/// relative pose and random depths inside the range.
pub fn random_instance(seed: u64, size: usize, cfg: &PipelineConfig) -> Result<(Vec<Frame>, DepthMap)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = 1.2 * size as f64;
    let c = (size as f64 - 1.0) / 2.0;
    let k = CameraIntrinsics::new(f, f, c, c, size, size)?;
    let mut image = || {
        let d = (0..size * size * 3).map(|_| rng.gen::<f64>()).collect();
        ImageGrid::from_vec(size, size, 3, d)
    };
    let (a, b) = (image()?, image()?);
    let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let t = Vector3::new(rng.gen_range(-40.0..40.0), rng.gen_range(-20.0..20.0), rng.gen_range(-5.0..5.0));
    let pose = RigidTransform::from_axis_angle(axis, rng.gen_range(-0.03..0.03), t);
    let r = cfg.range()?;
    let lo = r.min + 0.25 * r.span();
    let hi = r.min + 0.5 * r.span();
    let dz = (0..size * size).map(|_| rng.gen_range(lo..hi)).collect();
    let depth = ImageGrid::from_vec(size, size, 1, dz)?;
    let frames = vec![
        Frame {
            image: a,
            camera: CameraModel::new(k, RigidTransform::identity()),
        },
        Frame {
            image: b,
            camera: CameraModel::new(k, pose),
        },
    ];
    Ok((frames, depth))
}

/// Finite-difference check of the total-loss gradient on a random instance.
pub fn gradcheck(seed: u64, cfg: &PipelineConfig) -> Result<GradientReport> {
    let g = &cfg.gradcheck;
    let (frames, depth) = random_instance(seed, g.size, cfg)?;
    let obj = build_objective(&frames, cfg)?;
    let n = g.size * g.size;
    let samples: Vec<(usize, usize)> = if g.samples >= n {
        (0..n).map(|i| (i % g.size, i / g.size)).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        rand::seq::index::sample(&mut rng, n, g.samples)
            .into_iter()
            .map(|i| (i % g.size, i / g.size))
            .collect()
    };
    finite_difference_gradient(&obj, &depth, g.step, &samples)
}

/// Confidence filter, cross-view check and fusion of per-view estimates.
pub fn fuse_views(
    depths: &[DepthMap],
    probabilities: &[ProbabilityMap],
    cameras: &[CameraModel],
    images: &[ImageGrid],
    cfg: &PipelineConfig,
) -> Result<PointCloud> {
    if probabilities.len() != depths.len() {
        return Err(MvsError::arg("one probability map per depth map is required"));
    }
    let filtered = depths
        .iter()
        .zip(probabilities)
        .map(|(d, p)| filter_by_probability(d, p, cfg.fusion.photometric_threshold))
        .collect::<Result<Vec<_>>>()?;
    let masks = geometric_consistency_filter(&filtered, cameras, &cfg.fusion)?;
    fuse(&filtered, &masks, cameras, images, &cfg.fusion)
}

/// Ground-truth cloud from exact depth maps (every valid pixel of every view).
pub fn cloud_from_depths(depths: &[DepthMap], cameras: &[CameraModel]) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (d, c) in depths.iter().zip(cameras) {
        for y in 0..d.height() {
            for x in 0..d.width() {
                if d.is_valid_depth(x, y) {
                    points.push(c.pixel_to_world(crate::camera::PixelCoord::new(x as f64, y as f64), d.get(x, y, 0))?);
                }
            }
        }
    }
    PointCloud::new(points, None)
}
