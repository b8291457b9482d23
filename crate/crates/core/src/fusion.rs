//! Depth-map filtering and fusion into a world-frame point cloud.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::{CameraModel, PixelCoord};
use crate::error::{MvsError, Result};
use crate::grid::{BinaryMask, DepthMap, ImageGrid, ProbabilityMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Minimum probability a depth needs to be kept.
    pub photometric_threshold: f64,
    /// Largest round-trip reprojection error, px.
    pub pixel_threshold: f64,
    /// Largest round-trip relative depth difference.
    pub relative_depth_threshold: f64,
    /// Views that must agree on a pixel, its own view included.
    pub min_views: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            photometric_threshold: 0.6,
            pixel_threshold: 1.0,
            relative_depth_threshold: 0.01,
            min_views: 2,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.photometric_threshold) {
            return Err(MvsError::Config(format!(
                "fusion.photometric_threshold must be in [0, 1], got {}",
                self.photometric_threshold
            )));
        }
        if !(self.pixel_threshold > 0.0) || !(self.relative_depth_threshold > 0.0) {
            return Err(MvsError::Config("fusion thresholds must be positive".into()));
        }
        if self.min_views == 0 {
            return Err(MvsError::Config("fusion.min_views must be at least 1".into()));
        }
        Ok(())
    }
}

/// World-frame points with optional RGB colours in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[f64; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, colors: Option<Vec<[f64; 3]>>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(MvsError::arg("point cloud coordinates must be finite"));
        }
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(MvsError::arg(format!(
                    "{} colours for {} points",
                    c.len(),
                    points.len()
                )));
            }
        }
        Ok(PointCloud { points, colors })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Invalidates (sets to 0) every depth whose probability is below `threshold`.
pub fn filter_by_probability(depth: &DepthMap, prob: &ProbabilityMap, threshold: f64) -> Result<DepthMap> {
    if !depth.same_size(prob) || depth.channels() != 1 || prob.channels() != 1 {
        return Err(MvsError::arg("depth and probability maps must be single-channel and equally sized"));
    }
    Ok(ImageGrid::from_fn(depth.width(), depth.height(), 1, |x, y, o| {
        o[0] = if prob.get(x, y, 0) >= threshold {
            depth.get(x, y, 0)
        } else {
            0.0
        };
    }))
}

fn check_views(depths: &[DepthMap], cams: &[CameraModel]) -> Result<()> {
    if depths.is_empty() {
        return Err(MvsError::arg("fusion needs at least one view"));
    }
    if depths.len() != cams.len() {
        return Err(MvsError::arg(format!("{} depth maps but {} cameras", depths.len(), cams.len())));
    }
    for (i, (d, c)) in depths.iter().zip(cams).enumerate() {
        if d.channels() != 1 || d.width() != c.intrinsics.width || d.height() != c.intrinsics.height {
            return Err(MvsError::arg(format!(
                "depth map {i} is {}x{}x{}, camera describes {}x{}",
                d.width(),
                d.height(),
                d.channels(),
                c.intrinsics.width,
                c.intrinsics.height
            )));
        }
    }
    Ok(())
}

/// World point of pixel `(x, y)` in view `i`, if its depth is valid.
fn world_point(depth: &DepthMap, cam: &CameraModel, x: usize, y: usize) -> Option<Vector3<f64>> {
    if !depth.is_valid_depth(x, y) {
        return None;
    }
    cam.pixel_to_world(PixelCoord::new(x as f64, y as f64), depth.get(x, y, 0)).ok()
}

/// The pixel of view `j` matching `(x, y)` of view `i`: nearest pixel to the
/// projection, accepted when its own point maps back within the thresholds.
fn consistent_pixel(
    p: &Vector3<f64>,
    z: f64,
    x: usize,
    y: usize,
    cam_i: &CameraModel,
    depth_j: &DepthMap,
    cam_j: &CameraModel,
    cfg: &FusionConfig,
) -> Option<(usize, usize)> {
    let (pj, _) = cam_j.world_to_pixel(p).ok()?;
    let qx = pj.x.round();
    let qy = pj.y.round();
    if qx < 0.0 || qy < 0.0 || qx >= depth_j.width() as f64 || qy >= depth_j.height() as f64 {
        return None;
    }
    let (qx, qy) = (qx as usize, qy as usize);
    let back = world_point(depth_j, cam_j, qx, qy)?;
    let (pi, zi) = cam_i.world_to_pixel(&back).ok()?;
    let reproj = ((pi.x - x as f64).powi(2) + (pi.y - y as f64).powi(2)).sqrt();
    if reproj < cfg.pixel_threshold && (zi - z).abs() / z < cfg.relative_depth_threshold {
        Some((qx, qy))
    } else {
        None
    }
}

/// Keeps pixels that at least `min_views - 1` other views confirm.
pub fn geometric_consistency_filter(
    depths: &[DepthMap],
    cams: &[CameraModel],
    cfg: &FusionConfig,
) -> Result<Vec<BinaryMask>> {
    cfg.validate()?;
    check_views(depths, cams)?;
    let need = cfg.min_views - 1;
    if depths.len() - 1 < need {
        log::info!(
            "only {} views for min_views = {}; every pixel will be rejected",
            depths.len(),
            cfg.min_views
        );
    }
    depths
        .iter()
        .enumerate()
        .map(|(i, depth)| {
            let (w, h) = (depth.width(), depth.height());
            let rows: Vec<Vec<bool>> = (0..h)
                .into_par_iter()
                .map(|y| {
                    (0..w)
                        .map(|x| {
                            let Some(p) = world_point(depth, &cams[i], x, y) else {
                                return false;
                            };
                            let z = depth.get(x, y, 0);
                            let agree = (0..depths.len())
                                .filter(|&j| j != i)
                                .filter(|&j| consistent_pixel(&p, z, x, y, &cams[i], &depths[j], &cams[j], cfg).is_some())
                                .count();
                            agree >= need
                        })
                        .collect()
                })
                .collect();
            BinaryMask::from_vec(w, h, rows.into_iter().flatten().collect())
        })
        .collect()
}

fn color_at(img: &ImageGrid, x: usize, y: usize) -> [f64; 3] {
    let px = img.pixel(x, y);
    if px.len() >= 3 {
        [px[0], px[1], px[2]]
    } else {
        [px[0]; 3]
    }
}

/// Backprojects surviving pixels and merges mutually consistent ones.
///
/// Views are visited in order; an unclaimed pixel opens a group and claims
/// the consistent, unclaimed pixels of every other view. Each group becomes
/// the mean of its points (and colours, when `images` is non-empty).
pub fn fuse(
    depths: &[DepthMap],
    masks: &[BinaryMask],
    cams: &[CameraModel],
    images: &[ImageGrid],
    cfg: &FusionConfig,
) -> Result<PointCloud> {
    check_views(depths, cams)?;
    if masks.len() != depths.len() {
        return Err(MvsError::arg(format!("{} masks for {} views", masks.len(), depths.len())));
    }
    if !images.is_empty() && images.len() != depths.len() {
        return Err(MvsError::arg(format!("{} images for {} views", images.len(), depths.len())));
    }
    for (i, d) in depths.iter().enumerate() {
        if masks[i].width() != d.width() || masks[i].height() != d.height() {
            return Err(MvsError::arg(format!("mask {i} does not match its depth map")));
        }
        if let Some(img) = images.get(i) {
            if !img.same_size(d) {
                return Err(MvsError::arg(format!("image {i} does not match its depth map")));
            }
        }
    }
    let mut claimed: Vec<Vec<bool>> = depths.iter().map(|d| vec![false; d.pixel_count()]).collect();
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for i in 0..depths.len() {
        let (w, h) = (depths[i].width(), depths[i].height());
        for y in 0..h {
            for x in 0..w {
                if claimed[i][y * w + x] || !masks[i].get(x, y) {
                    continue;
                }
                let Some(p) = world_point(&depths[i], &cams[i], x, y) else {
                    continue;
                };
                claimed[i][y * w + x] = true;
                let z = depths[i].get(x, y, 0);
                let mut sum = p;
                let mut col = images.get(i).map(|im| color_at(im, x, y)).unwrap_or([0.0; 3]);
                let mut n = 1.0;
                for j in 0..depths.len() {
                    if j == i {
                        continue;
                    }
                    let Some((qx, qy)) = consistent_pixel(&p, z, x, y, &cams[i], &depths[j], &cams[j], cfg) else {
                        continue;
                    };
                    let wj = depths[j].width();
                    if claimed[j][qy * wj + qx] || !masks[j].get(qx, qy) {
                        continue;
                    }
                    claimed[j][qy * wj + qx] = true;
                    if let Some(q) = world_point(&depths[j], &cams[j], qx, qy) {
                        sum += q;
                        if let Some(im) = images.get(j) {
                            let c = color_at(im, qx, qy);
                            for k in 0..3 {
                                col[k] += c[k];
                            }
                        }
                        n += 1.0;
                    }
                }
                points.push(sum / n);
                colors.push([col[0] / n, col[1] / n, col[2] / n]);
            }
        }
    }
    PointCloud::new(points, (!images.is_empty()).then_some(colors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, RigidTransform};

    fn cam(tx: f64) -> CameraModel {
        let k = CameraIntrinsics::new(64.0, 64.0, 32.0, 24.0, 64, 48).unwrap();
        CameraModel::new(k, RigidTransform::from_translation(Vector3::new(tx, 0.0, 0.0)))
    }

    #[test]
    fn probability_filter_boundaries() {
        let d = ImageGrid::filled(4, 3, 1, 600.0);
        let p = ImageGrid::from_fn(4, 3, 1, |x, _, o| o[0] = 0.2 * x as f64 + 0.0);
        assert_eq!(filter_by_probability(&d, &p, 0.0).unwrap(), d);
        assert!(filter_by_probability(&d, &p, 1.01).unwrap().data().iter().all(|&v| v == 0.0));
        let exact = ImageGrid::filled(4, 3, 1, 0.6);
        assert_eq!(filter_by_probability(&d, &exact, 0.6).unwrap(), d);
    }

    #[test]
    fn single_view_keeps_everything_valid() {
        let mut d = ImageGrid::filled(64, 48, 1, 512.0);
        d.set(3, 3, 0, 0.0);
        let cfg = FusionConfig {
            min_views: 1,
            ..FusionConfig::default()
        };
        let m = geometric_consistency_filter(&[d.clone()], &[cam(0.0)], &cfg).unwrap();
        assert_eq!(m[0].count(), 64 * 48 - 1);
        let cloud = fuse(&[d], &m, &[cam(0.0)], &[], &cfg).unwrap();
        assert_eq!(cloud.len(), 64 * 48 - 1);
        assert!(cloud.points.iter().all(|p| p.z == 512.0));
        assert!(cloud.colors.is_none());
    }

    #[test]
    fn corrupted_view_fails_cross_check() {
        let d0 = ImageGrid::filled(64, 48, 1, 512.0);
        let d1 = ImageGrid::filled(64, 48, 1, 512.0 * 1.2);
        let cams = [cam(0.0), cam(-128.0)];
        let m = geometric_consistency_filter(&[d0, d1], &cams, &FusionConfig::default()).unwrap();
        assert_eq!(m[0].count(), 0);
        assert_eq!(m[1].count(), 0);
    }

    #[test]
    fn empty_masks_give_empty_cloud() {
        let d = ImageGrid::filled(64, 48, 1, 512.0);
        let m = BinaryMask::new(64, 48, false);
        let c = fuse(&[d.clone(), d], &[m.clone(), m], &[cam(0.0), cam(-128.0)], &[], &FusionConfig::default()).unwrap();
        assert!(c.is_empty());
    }
}
