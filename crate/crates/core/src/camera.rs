//! Pinhole cameras, pixel transfer between views and bilinear warping.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rayon::prelude::*;

use crate::error::{MvsError, Result};
use crate::grid::{BinaryMask, DepthMap, ImageGrid};

/// Sample positions this close outside the image domain are snapped onto it,
/// absorbing round-off in otherwise exact transfers.
pub const BOUNDS_EPS: f64 = 1e-9;

/// Pinhole intrinsics for a `width x height` raster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(MvsError::Domain(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(MvsError::Domain("image size must be positive".into()));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(MvsError::Domain(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Intrinsics of the grid produced by one 2x2 average-pooling step.
    ///
    /// Coarse pixel `i` covers fine pixels `2i, 2i+1`, whose mean center is
    /// `2i + 0.5`, hence `c' = (c + 0.5) / 2 - 0.5`.
    pub fn halved(&self) -> Self {
        CameraIntrinsics {
            fx: self.fx / 2.0,
            fy: self.fy / 2.0,
            cx: (self.cx + 0.5) / 2.0 - 0.5,
            cy: (self.cy + 0.5) / 2.0 - 0.5,
            width: self.width / 2,
            height: self.height / 2,
        }
    }

    /// Intrinsics after `level` halvings.
    pub fn at_level(&self, level: usize) -> Self {
        (0..level).fold(*self, |k, _| k.halved())
    }

    /// `K^-1 [x, y, 1]^T`: the viewing ray with unit z component.
    #[inline]
    pub fn ray(&self, p: PixelCoord) -> Vector3<f64> {
        Vector3::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn contains(&self, p: PixelCoord) -> bool {
        in_domain(p.x, self.width) && in_domain(p.y, self.height)
    }
}

#[inline]
fn in_domain(v: f64, size: usize) -> bool {
    v >= -BOUNDS_EPS && v <= (size - 1) as f64 + BOUNDS_EPS
}

/// Continuous pixel position; integer values are pixel centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl PixelCoord {
    pub fn new(x: f64, y: f64) -> Self {
        PixelCoord { x, y }
    }
}

/// Proper rigid motion `p -> R p + t` (millimetres).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= 1e-9 && (det - 1.0).abs() <= 1e-9) {
            return Err(MvsError::Domain(format!(
                "rotation is not proper orthonormal (|RtR - I| = {ortho:e}, det = {det})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(MvsError::Domain("translation must be finite".into()));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation of `angle` radians about `axis`, followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if angle == 0.0 || axis.norm() == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
        };
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Intrinsics plus the world-to-camera motion of one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics,
    pub world_to_camera: RigidTransform,
}

impl CameraModel {
    pub fn new(intrinsics: CameraIntrinsics, world_to_camera: RigidTransform) -> Self {
        CameraModel {
            intrinsics,
            world_to_camera,
        }
    }

    /// Motion taking points from this camera's frame into `other`'s frame.
    pub fn relative_to(&self, other: &CameraModel) -> RigidTransform {
        other.world_to_camera.compose(&self.world_to_camera.inverse())
    }

    pub fn at_level(&self, level: usize) -> Self {
        CameraModel {
            intrinsics: self.intrinsics.at_level(level),
            world_to_camera: self.world_to_camera,
        }
    }

    /// Camera-frame point for pixel `p` at depth `z`, expressed in the world frame.
    pub fn pixel_to_world(&self, p: PixelCoord, z: f64) -> Result<Vector3<f64>> {
        let pc = backproject(p, z, &self.intrinsics)?;
        Ok(self.world_to_camera.inverse().apply(&pc))
    }

    /// Projects a world point; fails when it is not in front of the camera.
    pub fn world_to_pixel(&self, pw: &Vector3<f64>) -> Result<(PixelCoord, f64)> {
        project(&self.world_to_camera.apply(pw), &self.intrinsics)
    }
}

/// Camera-frame point `Z * K^-1 [x, y, 1]^T`.
pub fn backproject(p: PixelCoord, z: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(MvsError::Domain(format!("depth must be positive, got {z}")));
    }
    if !(p.x.is_finite() && p.y.is_finite()) {
        return Err(MvsError::Domain("pixel coordinate must be finite".into()));
    }
    Ok(Vector3::new(
        (p.x - k.cx) * z / k.fx,
        (p.y - k.cy) * z / k.fy,
        z,
    ))
}

/// Pinhole projection; returns the pixel and the point's depth.
pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics) -> Result<(PixelCoord, f64)> {
    if !(p.z > 0.0) {
        return Err(MvsError::BehindCamera { z: p.z });
    }
    Ok((
        PixelCoord::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy),
        p.z,
    ))
}

/// Maps reference pixel `p` at depth `z` into the source view.
pub fn transfer_pixel(
    p: PixelCoord,
    z: f64,
    k_ref: &CameraIntrinsics,
    k_src: &CameraIntrinsics,
    t: &RigidTransform,
) -> Result<(PixelCoord, f64)> {
    let pr = backproject(p, z, k_ref)?;
    project(&t.apply(&pr), k_src)
}

/// A transferred pixel together with its derivative along the depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transfer {
    pub pixel: PixelCoord,
    pub depth: f64,
    /// `(du/dZ, dv/dZ)` in px/mm.
    pub d_dz: [f64; 2],
}

/// Precomputed ref-to-source pixel transfer for one view pair.
#[derive(Debug, Clone, Copy)]
pub struct PixelTransfer {
    k_ref: CameraIntrinsics,
    k_src: CameraIntrinsics,
    t: RigidTransform,
}

impl PixelTransfer {
    pub fn new(k_ref: CameraIntrinsics, k_src: CameraIntrinsics, t: RigidTransform) -> Self {
        PixelTransfer { k_ref, k_src, t }
    }

    pub fn between(reference: &CameraModel, source: &CameraModel) -> Self {
        Self::new(
            reference.intrinsics,
            source.intrinsics,
            reference.relative_to(source),
        )
    }

    /// Transfer with `Q = Z (R r) + t`, `u = fx Qx / Qz + cx`. `None` when
    /// the depth is invalid or the point lands behind the source camera.
    #[inline]
    pub fn apply(&self, x: f64, y: f64, z: f64) -> Option<Transfer> {
        if !(z > 0.0 && z.is_finite()) {
            return None;
        }
        let a = self.t.rotation * self.k_ref.ray(PixelCoord::new(x, y));
        let q = a * z + self.t.translation;
        if !(q.z > 0.0) {
            return None;
        }
        let k = &self.k_src;
        let inv_z2 = 1.0 / (q.z * q.z);
        Some(Transfer {
            pixel: PixelCoord::new(k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy),
            depth: q.z,
            d_dz: [
                k.fx * (a.x * q.z - q.x * a.z) * inv_z2,
                k.fy * (a.y * q.z - q.y * a.z) * inv_z2,
            ],
        })
    }
}

/// Bilinear cell of a sample: top-left corner plus fractional offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub fx: f64,
    pub fy: f64,
}

fn axis_footprint(v: f64, size: usize) -> Option<(usize, usize, f64)> {
    if !in_domain(v, size) {
        return None;
    }
    if size == 1 {
        return Some((0, 0, 0.0));
    }
    // round-off from a projection round trip must not leave a pixel-centre
    // sample straddling two cells
    let r = v.round();
    let v = if (v - r).abs() <= BOUNDS_EPS { r } else { v };
    let v = v.clamp(0.0, (size - 1) as f64);
    let i0 = (v.floor() as usize).min(size - 2);
    Some((i0, i0 + 1, v - i0 as f64))
}

/// Cell and weights for sampling a `width x height` raster at `p`, or
/// `None` outside `[0, W-1] x [0, H-1]`.
#[inline]
pub fn footprint(width: usize, height: usize, p: PixelCoord) -> Option<Footprint> {
    let (x0, x1, fx) = axis_footprint(p.x, width)?;
    let (y0, y1, fy) = axis_footprint(p.y, height)?;
    Some(Footprint {
        x0,
        y0,
        x1,
        y1,
        fx,
        fy,
    })
}

/// Interpolates every channel at `fp`; optionally writes `dI/du`, `dI/dv`.
#[inline]
pub fn sample_footprint(
    img: &ImageGrid,
    fp: &Footprint,
    out: &mut [f64],
    mut grad: Option<(&mut [f64], &mut [f64])>,
) {
    let (fx, fy) = (fp.fx, fp.fy);
    for c in 0..img.channels() {
        let i00 = img.get(fp.x0, fp.y0, c);
        let i10 = img.get(fp.x1, fp.y0, c);
        let i01 = img.get(fp.x0, fp.y1, c);
        let i11 = img.get(fp.x1, fp.y1, c);
        let top = i00 + fx * (i10 - i00);
        let bottom = i01 + fx * (i11 - i01);
        out[c] = top + fy * (bottom - top);
        if let Some((du, dv)) = grad.as_mut() {
            du[c] = (1.0 - fy) * (i10 - i00) + fy * (i11 - i01);
            dv[c] = bottom - top;
        }
    }
}

/// Bilinear sample of every channel; invalid (and all-zero) outside the domain.
pub fn bilinear_sample(img: &ImageGrid, p: PixelCoord) -> (Vec<f64>, bool) {
    let mut out = vec![0.0; img.channels()];
    match footprint(img.width(), img.height(), p) {
        Some(fp) => {
            sample_footprint(img, &fp, &mut out, None);
            (out, true)
        }
        None => (out, false),
    }
}

/// Spatial gradient `(dI/du, dI/dv)` of the bilinear interpolant at `p`.
pub fn bilinear_gradient(img: &ImageGrid, p: PixelCoord) -> Option<(Vec<f64>, Vec<f64>)> {
    let fp = footprint(img.width(), img.height(), p)?;
    let c = img.channels();
    let (mut v, mut du, mut dv) = (vec![0.0; c], vec![0.0; c], vec![0.0; c]);
    sample_footprint(img, &fp, &mut v, Some((&mut du, &mut dv)));
    Some((du, dv))
}

/// Source image resampled onto the reference grid.
#[derive(Debug, Clone)]
pub struct Warp {
    pub warped: ImageGrid,
    pub mask: BinaryMask,
    /// `dI'/dZ` per pixel and channel; present for [`warp_with_jacobian`].
    pub d_dz: Option<ImageGrid>,
    /// Bilinear cell per pixel (`None` where masked), used to detect
    /// non-differentiable perturbations.
    pub cells: Vec<Option<(u32, u32)>>,
}

fn check_warp_args(
    src: &ImageGrid,
    depth: &DepthMap,
    k_ref: &CameraIntrinsics,
    k_src: &CameraIntrinsics,
) -> Result<()> {
    if depth.channels() != 1 {
        return Err(MvsError::arg("depth map must have one channel"));
    }
    if depth.width() != k_ref.width || depth.height() != k_ref.height {
        return Err(MvsError::arg(format!(
            "depth map is {}x{} but reference intrinsics describe {}x{}",
            depth.width(),
            depth.height(),
            k_ref.width,
            k_ref.height
        )));
    }
    if src.width() != k_src.width || src.height() != k_src.height {
        return Err(MvsError::arg(format!(
            "source image is {}x{} but source intrinsics describe {}x{}",
            src.width(),
            src.height(),
            k_src.width,
            k_src.height
        )));
    }
    Ok(())
}

/// Sample validity restricted to `[margin, size-1-margin]` on both axes.
#[inline]
fn footprint_inside(width: usize, height: usize, p: PixelCoord, margin: usize) -> Option<Footprint> {
    if margin > 0 {
        let m = margin as f64;
        let inside = |v: f64, size: usize| {
            v >= m - BOUNDS_EPS && v <= size as f64 - 1.0 - m + BOUNDS_EPS
        };
        if !inside(p.x, width) || !inside(p.y, height) {
            return None;
        }
    }
    footprint(width, height, p)
}

fn warp_impl(
    src: &ImageGrid,
    depth: &DepthMap,
    xfer: &PixelTransfer,
    jacobian: bool,
    margin: usize,
) -> Warp {
    let (w, h, ch) = (depth.width(), depth.height(), src.channels());
    let ref_inside = |x: usize, y: usize| {
        margin == 0
            || (x >= margin && y >= margin && x + margin < w && y + margin < h)
    };
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<Option<(u32, u32)>>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut vals = vec![0.0; w * ch];
            let mut ders = if jacobian { vec![0.0; w * ch] } else { Vec::new() };
            let mut cells = vec![None; w];
            let mut du = vec![0.0; ch];
            let mut dv = vec![0.0; ch];
            for x in 0..w {
                if !ref_inside(x, y) {
                    continue;
                }
                let z = depth.get(x, y, 0);
                let Some(tr) = xfer.apply(x as f64, y as f64, z) else {
                    continue;
                };
                let Some(fp) = footprint_inside(src.width(), src.height(), tr.pixel, margin) else {
                    continue;
                };
                cells[x] = Some((fp.x0 as u32, fp.y0 as u32));
                let out = &mut vals[x * ch..(x + 1) * ch];
                if jacobian {
                    sample_footprint(src, &fp, out, Some((&mut du, &mut dv)));
                    for c in 0..ch {
                        ders[x * ch + c] = du[c] * tr.d_dz[0] + dv[c] * tr.d_dz[1];
                    }
                } else {
                    sample_footprint(src, &fp, out, None);
                }
            }
            (vals, ders, cells)
        })
        .collect();

    let mut warped = Vec::with_capacity(w * h * ch);
    let mut d_dz = Vec::with_capacity(if jacobian { w * h * ch } else { 0 });
    let mut cells = Vec::with_capacity(w * h);
    for (v, d, c) in rows {
        warped.extend(v);
        d_dz.extend(d);
        cells.extend(c);
    }
    let mask = BinaryMask::from_vec(w, h, cells.iter().map(Option::is_some).collect())
        .expect("mask shape");
    Warp {
        warped: ImageGrid::from_vec(w, h, ch, warped).expect("warp shape"),
        mask,
        d_dz: jacobian.then(|| ImageGrid::from_vec(w, h, ch, d_dz).expect("jacobian shape")),
        cells,
    }
}

/// Resamples `src` onto the reference grid through the per-pixel `depth`.
///
/// `mask` is 1 exactly where the depth is valid, the point lands in front of
/// the source camera and inside its image; `warped` is 0 elsewhere.
pub fn warp_image(
    src: &ImageGrid,
    depth: &DepthMap,
    k_ref: &CameraIntrinsics,
    k_src: &CameraIntrinsics,
    t: &RigidTransform,
) -> Result<(ImageGrid, BinaryMask)> {
    check_warp_args(src, depth, k_ref, k_src)?;
    let w = warp_impl(src, depth, &PixelTransfer::new(*k_ref, *k_src, *t), false, 0);
    Ok((w.warped, w.mask))
}

/// [`warp_image`] plus the derivative of every warped value along its depth.
pub fn warp_with_jacobian(
    src: &ImageGrid,
    depth: &DepthMap,
    k_ref: &CameraIntrinsics,
    k_src: &CameraIntrinsics,
    t: &RigidTransform,
) -> Result<Warp> {
    check_warp_args(src, depth, k_ref, k_src)?;
    Ok(warp_impl(
        src,
        depth,
        &PixelTransfer::new(*k_ref, *k_src, *t),
        true,
        0,
    ))
}

/// [`warp_with_jacobian`] restricted to a band `margin` pixels inside both
/// the reference grid and the source image.
pub fn warp_interior(
    src: &ImageGrid,
    depth: &DepthMap,
    k_ref: &CameraIntrinsics,
    k_src: &CameraIntrinsics,
    t: &RigidTransform,
    margin: usize,
) -> Result<Warp> {
    check_warp_args(src, depth, k_ref, k_src)?;
    Ok(warp_impl(
        src,
        depth,
        &PixelTransfer::new(*k_ref, *k_src, *t),
        true,
        margin,
    ))
}
