//! Normal-depth consistency.
//!
//! Normals come from the mean cross product of the eight backprojected
//! neighbours; depths are then re-estimated by asking each neighbour's
//! tangent plane where it meets the pixel's viewing ray, and blending the
//! proposals with image-edge-aware weights.

use nalgebra::Vector3;

use crate::camera::{backproject, CameraIntrinsics, PixelCoord};
use crate::error::{MvsError, Result};
use crate::grid::{area_downsample_to, DepthMap, DepthRange, ImageGrid};

/// Neighbour offsets `(dx, dy)`, consecutive entries forming the cross-product pairs.
pub const NEIGHBORS: [(isize, isize); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// Proposals whose ray/normal dot product is smaller than this are grazing.
pub const GRAZING_EPS: f64 = 1e-8;

/// Camera-frame unit normals; `None` marks pixels without a usable neighbourhood.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    normals: Vec<Option<Vector3<f64>>>,
}

impl NormalMap {
    pub fn new(width: usize, height: usize) -> Self {
        NormalMap {
            width,
            height,
            normals: vec![None; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<Vector3<f64>> {
        self.normals[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, n: Option<Vector3<f64>>) {
        self.normals[y * self.width + x] = n;
    }

    pub fn valid_count(&self) -> usize {
        self.normals.iter().filter(|n| n.is_some()).count()
    }

    /// Three-channel grid, zero at invalid pixels.
    pub fn to_grid(&self) -> ImageGrid {
        ImageGrid::from_fn(self.width, self.height, 3, |x, y, out| {
            if let Some(n) = self.get(x, y) {
                out.copy_from_slice(n.as_slice());
            }
        })
    }
}

#[inline]
fn neighbor(x: usize, y: usize, k: usize, w: usize, h: usize) -> Option<(usize, usize)> {
    let (dx, dy) = NEIGHBORS[k];
    let nx = x as isize + dx;
    let ny = y as isize + dy;
    (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then(|| (nx as usize, ny as usize))
}

fn point(depth: &DepthMap, k: &CameraIntrinsics, x: usize, y: usize) -> Option<Vector3<f64>> {
    if !depth.is_valid_depth(x, y) {
        return None;
    }
    backproject(PixelCoord::new(x as f64, y as f64), depth.get(x, y, 0), k).ok()
}

/// Mean of the eight consecutive-neighbour cross products, oriented towards
/// the camera (`n_z < 0`) and normalised.
pub fn normal_from_depth(depth: &DepthMap, k: &CameraIntrinsics) -> NormalMap {
    let (w, h) = (depth.width(), depth.height());
    let mut out = NormalMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, pixel_normal(depth, k, x, y));
        }
    }
    out
}

fn pixel_normal(depth: &DepthMap, k: &CameraIntrinsics, x: usize, y: usize) -> Option<Vector3<f64>> {
    let (w, h) = (depth.width(), depth.height());
    let center = point(depth, k, x, y)?;
    let mut ring = [Vector3::zeros(); 8];
    for (i, p) in ring.iter_mut().enumerate() {
        let (nx, ny) = neighbor(x, y, i, w, h)?;
        *p = point(depth, k, nx, ny)? - center;
    }
    let mut sum = Vector3::zeros();
    for i in 0..8 {
        sum += ring[i].cross(&ring[(i + 1) % 8]);
    }
    let mut n = sum / 8.0;
    if n.z > 0.0 {
        n = -n;
    }
    let len = n.norm();
    (len > 0.0 && len.is_finite()).then(|| n / len)
}

/// `exp(-alpha1 |I(p + o_k) - I(p)|)` for each neighbour direction `k`.
///
/// Out-of-image neighbours get weight 1; they never contribute a proposal.
pub fn edge_weights(image: &ImageGrid, alpha1: f64) -> Result<Vec<ImageGrid>> {
    if !(alpha1 >= 0.0 && alpha1.is_finite()) {
        return Err(MvsError::Domain(format!("alpha1 must be nonnegative, got {alpha1}")));
    }
    let luma = image.to_luma()?;
    let (w, h) = (luma.width(), luma.height());
    Ok((0..8)
        .map(|k| {
            ImageGrid::from_fn(w, h, 1, |x, y, out| {
                let here = luma.get(x, y, 0);
                let there = neighbor(x, y, k, w, h).map_or(here, |(nx, ny)| luma.get(nx, ny, 0));
                out[0] = (-alpha1 * (there - here).abs()).exp();
            })
        })
        .collect())
}

/// Re-estimates each valid depth from its neighbours' tangent planes.
///
/// Neighbour `i` proposes `Z_i (n_i . r_i) / (n_i . r_q)` for pixel `q`, where
/// `r` are the unit-depth viewing rays. Grazing or out-of-range proposals are
/// dropped; the rest are blended with normalised edge weights. Pixels with no
/// surviving proposal keep their input depth.
pub fn depth_from_normal(
    depth: &DepthMap,
    normals: &NormalMap,
    k: &CameraIntrinsics,
    image: &ImageGrid,
    alpha1: f64,
    range: DepthRange,
) -> Result<DepthMap> {
    let (w, h) = (depth.width(), depth.height());
    if normals.width() != w || normals.height() != h || image.width() != w || image.height() != h {
        return Err(MvsError::arg(format!(
            "depth {}x{}, normals {}x{} and image {}x{} must share a size",
            w,
            h,
            normals.width(),
            normals.height(),
            image.width(),
            image.height()
        )));
    }
    let weights = edge_weights(image, alpha1)?;
    Ok(ImageGrid::from_fn(w, h, 1, |x, y, out| {
        let z = depth.get(x, y, 0);
        out[0] = z;
        if !depth.is_valid_depth(x, y) {
            return;
        }
        let rq = k.ray(PixelCoord::new(x as f64, y as f64));
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (i, wk) in weights.iter().enumerate() {
            let Some((nx, ny)) = neighbor(x, y, i, w, h) else {
                continue;
            };
            let (Some(n), true) = (normals.get(nx, ny), depth.is_valid_depth(nx, ny)) else {
                continue;
            };
            let denom = n.dot(&rq);
            if denom.abs() < GRAZING_EPS {
                continue;
            }
            let rp = k.ray(PixelCoord::new(nx as f64, ny as f64));
            let proposal = depth.get(nx, ny, 0) * n.dot(&rp) / denom;
            if !range.contains(proposal) {
                continue;
            }
            let wt = wk.get(x, y, 0);
            acc += wt * proposal;
            wsum += wt;
        }
        if wsum > 0.0 {
            out[0] = acc / wsum;
        }
    }))
}

/// Alternates [`normal_from_depth`] and [`depth_from_normal`].
///
/// A reference image larger than the depth map is area-averaged down to it.
pub fn refine_depth_nd(
    initial: &DepthMap,
    k: &CameraIntrinsics,
    image: &ImageGrid,
    alpha1: f64,
    range: DepthRange,
    iterations: usize,
) -> Result<DepthMap> {
    if iterations == 0 {
        return Err(MvsError::arg("normal-depth refinement needs at least one iteration"));
    }
    let luma = area_downsample_to(&image.to_luma()?, initial.width(), initial.height())?;
    let mut depth = initial.clone();
    for _ in 0..iterations {
        let normals = normal_from_depth(&depth, k);
        depth = depth_from_normal(&depth, &normals, k, &luma, alpha1, range)?;
    }
    Ok(depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(80.0, 80.0, 31.5, 23.5, 64, 48).unwrap()
    }

    /// Depth of the plane `n . P = c` along each pixel ray.
    fn plane_depth(k: &CameraIntrinsics, n: Vector3<f64>, c: f64) -> DepthMap {
        ImageGrid::from_fn(k.width, k.height, 1, |x, y, o| {
            o[0] = c / n.dot(&k.ray(PixelCoord::new(x as f64, y as f64)));
        })
    }

    fn range() -> DepthRange {
        DepthRange::new(425.0, 935.0).unwrap()
    }

    #[test]
    fn fronto_parallel_normals() {
        let d = ImageGrid::filled(10, 8, 1, 600.0);
        let kk = CameraIntrinsics::new(50.0, 50.0, 4.5, 3.5, 10, 8).unwrap();
        let n = normal_from_depth(&d, &kk);
        for y in 0..8 {
            for x in 0..10 {
                let border = x == 0 || y == 0 || x == 9 || y == 7;
                match n.get(x, y) {
                    Some(v) => {
                        assert!(!border);
                        assert!((v - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
                    }
                    None => assert!(border),
                }
            }
        }
    }

    #[test]
    fn slanted_plane_normals() {
        let kk = k();
        let truth = Vector3::new(1.0, 1.0, -2.0) / 6f64.sqrt();
        let d = plane_depth(&kk, truth, -600.0 * 2.0 / 6f64.sqrt());
        let n = normal_from_depth(&d, &kk);
        assert_eq!(n.valid_count(), 62 * 46);
        for y in 1..47 {
            for x in 1..63 {
                let v = n.get(x, y).unwrap();
                assert!((v - truth).amax() < 1e-4);
                assert!((v.norm() - 1.0).abs() < 1e-6);
                assert!(v.z < 0.0);
            }
        }
    }

    #[test]
    fn invalid_neighbor_invalidates_normal() {
        let mut d = ImageGrid::filled(6, 6, 1, 600.0);
        d.set(3, 3, 0, 0.0);
        let kk = CameraIntrinsics::new(50.0, 50.0, 2.5, 2.5, 6, 6).unwrap();
        let n = normal_from_depth(&d, &kk);
        for y in 2..=4 {
            for x in 2..=4 {
                assert!(n.get(x, y).is_none());
            }
        }
        assert!(n.get(1, 1).is_some());
    }

    #[test]
    fn edge_weight_examples() {
        let c = ImageGrid::filled(5, 4, 1, 0.3);
        for w in edge_weights(&c, 0.1).unwrap() {
            assert!(w.data().iter().all(|&v| v == 1.0));
        }
        let step = ImageGrid::from_fn(4, 1, 1, |x, _, o| o[0] = if x < 2 { 0.0 } else { 10.0 });
        let w = edge_weights(&step, 0.1).unwrap();
        // direction 0 is +x; from x=1 the neighbour is across the edge
        assert!((w[0].get(1, 0, 0) - (-1f64).exp()).abs() < 1e-15);
        assert!((w[0].get(1, 0, 0) - 0.3679).abs() < 1e-4);
        let w = edge_weights(&step, 1e-12).unwrap();
        assert!(w.iter().all(|g| g.data().iter().all(|&v| (v - 1.0).abs() < 1e-10)));
    }

    #[test]
    fn plane_is_a_fixed_point() {
        let kk = k();
        let nrm = Vector3::new(0.2, -0.3, -1.0).normalize();
        let d = plane_depth(&kk, nrm, -650.0 * nrm.z.abs());
        let img = ImageGrid::from_fn(64, 48, 1, |x, y, o| o[0] = ((x * 3 + y * 5) % 11) as f64 / 11.0);
        for iters in [1, 3] {
            let r = refine_depth_nd(&d, &kk, &img, 0.1, range(), iters).unwrap();
            for (a, b) in r.data().iter().zip(d.data()) {
                assert!((a - b).abs() <= 1e-9 * b);
            }
        }
        // orthogonality residual of the recovered normals
        let n = normal_from_depth(&d, &kk);
        for y in 1..47 {
            for x in 1..63 {
                let ni = n.get(x, y).unwrap();
                let pi = point(&d, &kk, x, y).unwrap();
                for i in 0..8 {
                    let (nx, ny) = neighbor(x, y, i, 64, 48).unwrap();
                    let v = point(&d, &kk, nx, ny).unwrap() - pi;
                    assert!(ni.dot(&v).abs() / v.norm() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn perturbed_pixel_snaps_back_with_plane_normals() {
        let kk = k();
        let mut d = ImageGrid::filled(64, 48, 1, 600.0);
        d.set(20, 20, 0, 605.0);
        let mut normals = NormalMap::new(64, 48);
        for y in 0..48 {
            for x in 0..64 {
                normals.set(x, y, Some(Vector3::new(0.0, 0.0, -1.0)));
            }
        }
        let img = ImageGrid::filled(64, 48, 1, 0.5);
        let r = depth_from_normal(&d, &normals, &kk, &img, 0.1, range()).unwrap();
        assert!((r.get(20, 20, 0) - 600.0).abs() < 1e-6);
    }

    #[test]
    fn composition_matches_single_iteration() {
        let kk = k();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 2.0).unwrap();
        let d = ImageGrid::from_fn(64, 48, 1, |_, _, _| {});
        let d = ImageGrid::from_vec(64, 48, 1, d.data().iter().map(|_| 600.0 + noise.sample(&mut rng)).collect()).unwrap();
        let img = ImageGrid::from_fn(64, 48, 1, |x, _, o| o[0] = x as f64 / 64.0);
        let once = refine_depth_nd(&d, &kk, &img, 0.1, range(), 1).unwrap();
        let manual = depth_from_normal(&d, &normal_from_depth(&d, &kk), &kk, &img, 0.1, range()).unwrap();
        assert_eq!(once, manual);
        assert!(once.data().iter().all(|&z| range().contains(z)));
        assert!(refine_depth_nd(&d, &kk, &img, 0.1, range(), 0).is_err());
    }
}
