//! Multi-metric consistency objective.
//!
//! For every source view the source image is warped onto the reference
//! through the depth map, and scored with
//!
//! * a photometric term: L1 of intensities and of forward-difference
//!   gradients over the valid mask,
//! * an SSIM term `(1 - S) / 2` with 3x3 windows,
//! * an edge-aware first- and second-order depth smoothness term,
//! * a feature term: L1 between reference descriptors and warped source
//!   descriptors at scales 1/2, 1/4 and 1/8.
//!
//! `total = sum over views of gamma1 * pixel + gamma2 * feature`, with
//! `pixel = lambda1 * photo + lambda2 * ssim + lambda3 * smooth` and
//! `feature = beta1 * L(1/2) + beta2 * L(1/4) + beta3 * L(1/8)`.
//!
//! Every term also produces its adjoint with respect to the warped values,
//! which the warp Jacobian turns into an exact depth gradient.

use rayon::prelude::*;

use crate::camera::{warp_interior, warp_with_jacobian, CameraModel, Warp};
use crate::error::{MvsError, Result};
use crate::features::{extract_raw_pyramid, FeatureConfig, FeaturePyramid, LEVELS};
use crate::grid::{downsample_depth_half, BinaryMask, DepthMap, DepthRange, ImageGrid};

/// SSIM stabilisers for intensities in `[0, 1]`: `(0.01)^2` and `(0.03)^2`.
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

/// Weights of the objective; defaults are the published training values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub gamma1: f64,
    pub gamma2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// Edge sensitivity of the normal-depth weights.
    pub alpha1: f64,
    /// Edge sensitivity of the first-order smoothness weights.
    pub alpha2: f64,
    /// Edge sensitivity of the second-order smoothness weights.
    pub alpha3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma1: 1.0,
            gamma2: 1.0,
            lambda1: 0.8,
            lambda2: 0.2,
            lambda3: 0.067,
            beta1: 0.2,
            beta2: 0.8,
            beta3: 0.4,
            alpha1: 0.1,
            alpha2: 0.5,
            alpha3: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(MvsError::Config(format!(
                    "loss.{name} must be a nonnegative number, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn betas(&self) -> [f64; 3] {
        [self.beta1, self.beta2, self.beta3]
    }
}

/// A masked mean together with the number of pixels it averaged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedMean {
    pub value: f64,
    pub count: usize,
}

/// Running FNV-1a hash of the discrete choices made while evaluating the
/// objective (mask bits, bilinear cells, L1 signs). Equal signatures at two
/// depths mean the objective is smooth on the segment between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Signature(u64);

impl Signature {
    pub(crate) fn new() -> Self {
        Signature(0xcbf2_9ce4_8422_2325)
    }

    #[inline]
    pub(crate) fn push(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    #[inline]
    fn push_sign(&mut self, v: f64) {
        self.push(if v > 0.0 {
            2
        } else if v < 0.0 {
            0
        } else {
            1
        });
    }

    pub(crate) fn value(&self) -> u64 {
        self.0
    }
}

#[inline]
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// A term's value, its valid-pixel count and its adjoint with respect to
/// the warped image (same layout as the warped grid).
struct TermEval {
    value: f64,
    count: usize,
    adjoint: Vec<f64>,
}

fn check_pair(a: &ImageGrid, b: &ImageGrid, mask: &BinaryMask) -> Result<()> {
    if !a.same_shape(b) {
        return Err(MvsError::arg(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    if mask.width() != a.width() || mask.height() != a.height() {
        return Err(MvsError::arg("mask size differs from image size"));
    }
    Ok(())
}

fn photometric_terms(i_ref: &ImageGrid, warped: &ImageGrid, mask: &BinaryMask, sig: &mut Signature) -> TermEval {
    let (w, h, ch) = (i_ref.width(), i_ref.height(), i_ref.channels());
    let mut adj = vec![0.0; warped.data().len()];
    let mut sum = 0.0;
    let mut m = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            m += 1;
            let here = i_ref.index(x, y, 0);
            for c in 0..ch {
                let r = i_ref.data()[here + c] - warped.data()[here + c];
                sig.push_sign(r);
                sum += r.abs();
                adj[here + c] -= sgn(r);
            }
            for (ok, nx, ny) in [(x + 1 < w, x + 1, y), (y + 1 < h, x, y + 1)] {
                if !ok || !mask.get(nx, ny) {
                    continue;
                }
                let there = i_ref.index(nx, ny, 0);
                for c in 0..ch {
                    let g = (i_ref.data()[there + c] - i_ref.data()[here + c])
                        - (warped.data()[there + c] - warped.data()[here + c]);
                    sig.push_sign(g);
                    sum += g.abs();
                    adj[there + c] -= sgn(g);
                    adj[here + c] += sgn(g);
                }
            }
        }
    }
    finish(sum, m, adj)
}

fn finish(sum: f64, m: usize, mut adj: Vec<f64>) -> TermEval {
    if m == 0 {
        return TermEval {
            value: 0.0,
            count: 0,
            adjoint: adj,
        };
    }
    let inv = 1.0 / m as f64;
    adj.iter_mut().for_each(|a| *a *= inv);
    TermEval {
        value: sum * inv,
        count: m,
        adjoint: adj,
    }
}

fn ssim_terms(i_ref: &ImageGrid, warped: &ImageGrid, mask: &BinaryMask) -> TermEval {
    let (w, h, ch) = (i_ref.width(), i_ref.height(), i_ref.channels());
    let mut adj = vec![0.0; warped.data().len()];
    let mut sum = 0.0;
    let mut m = 0usize;
    let mut window: Vec<(usize, usize)> = Vec::with_capacity(9);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            m += 1;
            window.clear();
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if mask.get(xx, yy) {
                        window.push((xx, yy));
                    }
                }
            }
            let n = window.len() as f64;
            let mut s_mean = 0.0;
            for c in 0..ch {
                let (mut mx, mut my) = (0.0, 0.0);
                for &(xx, yy) in &window {
                    mx += i_ref.get(xx, yy, c);
                    my += warped.get(xx, yy, c);
                }
                mx /= n;
                my /= n;
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for &(xx, yy) in &window {
                    let dx = i_ref.get(xx, yy, c) - mx;
                    let dy = warped.get(xx, yy, c) - my;
                    vx += dx * dx;
                    vy += dy * dy;
                    cxy += dx * dy;
                }
                vx /= n;
                vy /= n;
                cxy /= n;
                let a1 = 2.0 * mx * my + SSIM_C1;
                let a2 = 2.0 * cxy + SSIM_C2;
                let b1 = mx * mx + my * my + SSIM_C1;
                let b2 = vx + vy + SSIM_C2;
                let s = a1 * a2 / (b1 * b2);
                s_mean += s;
                // d(pixel loss)/dS = -1 / (2 C)
                let scale = -0.5 / ch as f64;
                for &(xx, yy) in &window {
                    let xj = i_ref.get(xx, yy, c);
                    let yj = warped.get(xx, yy, c);
                    let da1 = 2.0 * mx / n;
                    let da2 = 2.0 * (xj - mx) / n;
                    let db1 = 2.0 * my / n;
                    let db2 = 2.0 * (yj - my) / n;
                    let ds = (da1 * a2 + a1 * da2) / (b1 * b2) - s * (db1 / b1 + db2 / b2);
                    adj[warped.index(xx, yy, c)] += scale * ds;
                }
            }
            sum += 0.5 * (1.0 - s_mean / ch as f64);
        }
    }
    finish(sum, m, adj)
}

/// Depth smoothness value (over `n = W * H`) and its gradient in 1/mm.
fn smoothness_terms(
    depth: &DepthMap,
    luma: &ImageGrid,
    alpha2: f64,
    alpha3: f64,
    range: DepthRange,
    sig: &mut Signature,
) -> (f64, Vec<f64>) {
    let (w, h) = (depth.width(), depth.height());
    let inv_span = 1.0 / range.span();
    let z = |x: usize, y: usize| depth.get(x, y, 0) * inv_span;
    let valid = |x: usize, y: usize| depth.is_valid_depth(x, y);
    let img = |x: usize, y: usize| luma.get(x, y, 0);
    let mut grad = vec![0.0; w * h];
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            // (dx, dy) for the x axis then the y axis
            for (dx, dy) in [(1usize, 0usize), (0, 1)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= w || ny >= h {
                    continue;
                }
                if valid(x, y) && valid(nx, ny) {
                    let wt = (-alpha2 * (img(nx, ny) - img(x, y)).abs()).exp();
                    let t = z(nx, ny) - z(x, y);
                    sig.push_sign(t);
                    sum += wt * t.abs();
                    let g = wt * sgn(t) * inv_span;
                    grad[ny * w + nx] += g;
                    grad[y * w + x] -= g;
                }
                if x < dx || y < dy {
                    continue;
                }
                let (px, py) = (x - dx, y - dy);
                if valid(px, py) && valid(x, y) && valid(nx, ny) {
                    let wt = (-alpha3 * (img(nx, ny) - 2.0 * img(x, y) + img(px, py)).abs()).exp();
                    let s = z(nx, ny) - 2.0 * z(x, y) + z(px, py);
                    sig.push_sign(s);
                    sum += wt * s.abs();
                    let g = wt * sgn(s) * inv_span;
                    grad[ny * w + nx] += g;
                    grad[y * w + x] -= 2.0 * g;
                    grad[py * w + px] += g;
                }
            }
        }
    }
    let inv_n = 1.0 / (w * h) as f64;
    grad.iter_mut().for_each(|g| *g *= inv_n);
    (sum * inv_n, grad)
}

fn feature_terms(f_ref: &ImageGrid, warped: &ImageGrid, mask: &BinaryMask, sig: &mut Signature) -> TermEval {
    let ch = f_ref.channels();
    let mut adj = vec![0.0; warped.data().len()];
    let mut sum = 0.0;
    let mut m = 0usize;
    for y in 0..f_ref.height() {
        for x in 0..f_ref.width() {
            if !mask.get(x, y) {
                continue;
            }
            m += 1;
            let i = f_ref.index(x, y, 0);
            for c in 0..ch {
                let r = f_ref.data()[i + c] - warped.data()[i + c];
                sig.push_sign(r);
                sum += r.abs();
                adj[i + c] -= sgn(r);
            }
        }
    }
    finish(sum, m, adj)
}

/// `(1/m) sum_valid [ |I_ref - I'| + |grad I_ref - grad I'| ]`.
///
/// Gradients are forward differences; a difference enters only when both of
/// its pixels are valid. `m = 0` yields `0`.
pub fn photometric_loss(i_ref: &ImageGrid, warped: &ImageGrid, mask: &BinaryMask) -> Result<MaskedMean> {
    check_pair(i_ref, warped, mask)?;
    let t = photometric_terms(i_ref, warped, mask, &mut Signature::new());
    Ok(MaskedMean {
        value: t.value,
        count: t.count,
    })
}

/// `(1/m) sum_valid (1 - S) / 2` with SSIM over 3x3 windows restricted to
/// valid pixels, averaged over channels.
pub fn ssim_loss(i_ref: &ImageGrid, warped: &ImageGrid, mask: &BinaryMask) -> Result<MaskedMean> {
    check_pair(i_ref, warped, mask)?;
    let t = ssim_terms(i_ref, warped, mask);
    Ok(MaskedMean {
        value: t.value,
        count: t.count,
    })
}

/// Edge-aware smoothness of `depth / (d_max - d_min)`, averaged over all pixels.
pub fn smoothness_loss(
    depth: &DepthMap,
    i_ref: &ImageGrid,
    alpha2: f64,
    alpha3: f64,
    range: DepthRange,
) -> Result<f64> {
    if !depth.same_size(i_ref) {
        return Err(MvsError::arg("smoothness needs the reference image at depth resolution"));
    }
    let luma = i_ref.to_luma()?;
    Ok(smoothness_terms(depth, &luma, alpha2, alpha3, range, &mut Signature::new()).0)
}

/// Components of the pixel-wise loss for one source view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelLoss {
    pub photo: f64,
    pub ssim: f64,
    pub smooth: f64,
    pub pixel: f64,
    pub valid_pixels: usize,
}

pub fn combine_pixel(photo: f64, ssim: f64, smooth: f64, weights: &LossWeights) -> f64 {
    weights.lambda1 * photo + weights.lambda2 * ssim + weights.lambda3 * smooth
}

pub fn combine_feature(per_scale: [f64; 3], weights: &LossWeights) -> f64 {
    let b = weights.betas();
    b[0] * per_scale[0] + b[1] * per_scale[1] + b[2] * per_scale[2]
}

pub fn pixel_loss(
    i_ref: &ImageGrid,
    warped: &ImageGrid,
    mask: &BinaryMask,
    depth: &DepthMap,
    weights: &LossWeights,
    range: DepthRange,
) -> Result<PixelLoss> {
    let photo = photometric_loss(i_ref, warped, mask)?;
    let ssim = ssim_loss(i_ref, warped, mask)?;
    let smooth = smoothness_loss(depth, i_ref, weights.alpha2, weights.alpha3, range)?;
    Ok(PixelLoss {
        photo: photo.value,
        ssim: ssim.value,
        smooth,
        pixel: combine_pixel(photo.value, ssim.value, smooth, weights),
        valid_pixels: photo.count,
    })
}

/// Feature-wise L1 at one pyramid level.
///
/// `depth` and both cameras must already be at the features' resolution.
/// Only pixels at least `margin` inside both grids count.
pub fn feature_loss_scale(
    f_ref: &ImageGrid,
    f_src: &ImageGrid,
    depth: &DepthMap,
    cam_ref: &CameraModel,
    cam_src: &CameraModel,
    margin: usize,
) -> Result<MaskedMean> {
    let warp = warp_interior(
        f_src,
        depth,
        &cam_ref.intrinsics,
        &cam_src.intrinsics,
        &cam_ref.relative_to(cam_src),
        margin,
    )?;
    check_pair(f_ref, &warp.warped, &warp.mask)?;
    let t = feature_terms(f_ref, &warp.warped, &warp.mask, &mut Signature::new());
    Ok(MaskedMean {
        value: t.value,
        count: t.count,
    })
}

/// Feature-wise loss of one source view over all pyramid levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureLoss {
    pub per_scale: [f64; 3],
    pub counts: [usize; 3],
    pub value: f64,
}

/// `beta1 * L(1/2) + beta2 * L(1/4) + beta3 * L(1/8)` for full-resolution `depth`.
pub fn feature_loss(
    pyr_ref: &FeaturePyramid,
    pyr_src: &FeaturePyramid,
    depth: &DepthMap,
    cam_ref: &CameraModel,
    cam_src: &CameraModel,
    weights: &LossWeights,
) -> Result<FeatureLoss> {
    if !pyr_ref.compatible(pyr_src) {
        return Err(MvsError::arg("pyramids were built with different settings"));
    }
    let depths = depth_levels(depth)?;
    let mut per_scale = [0.0; 3];
    let mut counts = [0; 3];
    for (i, &level) in LEVELS.iter().enumerate() {
        let (Some(fr), Some(fs)) = (pyr_ref.level(level), pyr_src.level(level)) else {
            return Err(MvsError::arg(format!("pyramid is missing level {level}")));
        };
        let r = feature_loss_scale(
            fr,
            fs,
            &depths[i],
            &cam_ref.at_level(level),
            &cam_src.at_level(level),
            pyr_ref.margin(),
        )?;
        per_scale[i] = r.value;
        counts[i] = r.count;
    }
    Ok(FeatureLoss {
        per_scale,
        counts,
        value: combine_feature(per_scale, weights),
    })
}

/// Depth maps at the three pyramid levels (area averages; a block with an
/// invalid pixel is invalid).
fn depth_levels(depth: &DepthMap) -> Result<Vec<DepthMap>> {
    let mut out: Vec<DepthMap> = Vec::with_capacity(LEVELS.len());
    let mut cur = depth.clone();
    for _ in LEVELS {
        cur = downsample_depth_half(&cur)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Spreads a gradient on a halved depth map back onto the finer one.
fn spread_half(coarse: &[f64], coarse_depth: &DepthMap, fine_w: usize, fine_h: usize) -> Vec<f64> {
    let mut fine = vec![0.0; fine_w * fine_h];
    let cw = coarse_depth.width();
    for y in 0..coarse_depth.height() {
        for x in 0..cw {
            if !coarse_depth.is_valid_depth(x, y) {
                continue;
            }
            let g = 0.25 * coarse[y * cw + x];
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                fine[(2 * y + dy) * fine_w + 2 * x + dx] += g;
            }
        }
    }
    fine
}

/// An image with its camera and descriptor pyramid.
#[derive(Debug, Clone)]
pub struct View {
    pub image: ImageGrid,
    pub camera: CameraModel,
    pub pyramid: FeaturePyramid,
}

impl View {
    pub fn new(image: ImageGrid, camera: CameraModel, features: &FeatureConfig) -> Result<Self> {
        if image.width() != camera.intrinsics.width || image.height() != camera.intrinsics.height {
            return Err(MvsError::arg(format!(
                "image is {}x{} but its camera describes {}x{}",
                image.width(),
                image.height(),
                camera.intrinsics.width,
                camera.intrinsics.height
            )));
        }
        let pyramid = extract_raw_pyramid(&image, features)?;
        Ok(View {
            image,
            camera,
            pyramid,
        })
    }
}

/// Loss components of one source view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewLoss {
    pub photo: f64,
    pub ssim: f64,
    pub smooth: f64,
    pub pixel: f64,
    pub feature_per_scale: [f64; 3],
    pub feature: f64,
    pub valid_pixels: usize,
    pub feature_valid: [usize; 3],
}

/// The objective and all of its parts.
///
/// Scalar components are sums over source views; `views` keeps them apart.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub photo: f64,
    pub ssim: f64,
    pub smooth: f64,
    pub pixel: f64,
    pub feature_per_scale: [f64; 3],
    pub feature: f64,
    pub total: f64,
    pub valid_pixel_count: usize,
    pub total_pixel_count: usize,
    pub views: Vec<ViewLoss>,
}

impl LossBreakdown {
    fn from_views(views: Vec<ViewLoss>, weights: &LossWeights, n: usize) -> Self {
        let mut b = LossBreakdown {
            photo: 0.0,
            ssim: 0.0,
            smooth: 0.0,
            pixel: 0.0,
            feature_per_scale: [0.0; 3],
            feature: 0.0,
            total: 0.0,
            valid_pixel_count: 0,
            total_pixel_count: n,
            views: Vec::new(),
        };
        for v in &views {
            b.photo += v.photo;
            b.ssim += v.ssim;
            b.smooth += v.smooth;
            b.pixel += v.pixel;
            for i in 0..3 {
                b.feature_per_scale[i] += v.feature_per_scale[i];
            }
            b.feature += v.feature;
            b.total += weights.gamma1 * v.pixel + weights.gamma2 * v.feature;
            b.valid_pixel_count += v.valid_pixels;
        }
        b.views = views;
        b
    }
}

/// The multi-view objective as a function of the reference depth map.
#[derive(Debug, Clone)]
pub struct MultiViewLoss {
    reference: View,
    sources: Vec<View>,
    weights: LossWeights,
    range: DepthRange,
    luma: ImageGrid,
}

struct ViewEval {
    loss: ViewLoss,
    grad: Vec<f64>,
    sig: u64,
}

impl MultiViewLoss {
    pub fn new(reference: View, sources: Vec<View>, weights: LossWeights, range: DepthRange) -> Result<Self> {
        if sources.is_empty() {
            return Err(MvsError::arg("the objective needs at least one source view"));
        }
        weights.validate()?;
        for (i, s) in sources.iter().enumerate() {
            if s.image.channels() != reference.image.channels() {
                return Err(MvsError::arg(format!(
                    "source view {i} has {} channels, reference has {}",
                    s.image.channels(),
                    reference.image.channels()
                )));
            }
            if !s.pyramid.compatible(&reference.pyramid) {
                return Err(MvsError::arg("pyramids were built with different settings"));
            }
        }
        let luma = reference.image.to_luma()?;
        Ok(MultiViewLoss {
            reference,
            sources,
            weights,
            range,
            luma,
        })
    }

    pub fn reference(&self) -> &View {
        &self.reference
    }

    pub fn sources(&self) -> &[View] {
        &self.sources
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn range(&self) -> DepthRange {
        self.range
    }

    pub fn evaluate(&self, depth: &DepthMap) -> Result<LossBreakdown> {
        Ok(self.run(depth)?.0)
    }

    /// Breakdown plus `d total / d depth` (1/mm) at every pixel.
    pub fn evaluate_with_gradient(&self, depth: &DepthMap) -> Result<(LossBreakdown, DepthMap)> {
        let (b, g, _) = self.run(depth)?;
        Ok((b, g))
    }

    /// Hash of every discrete choice made at `depth`.
    pub fn signature(&self, depth: &DepthMap) -> Result<u64> {
        Ok(self.run(depth)?.2)
    }

    fn run(&self, depth: &DepthMap) -> Result<(LossBreakdown, DepthMap, u64)> {
        let k = &self.reference.camera.intrinsics;
        if depth.channels() != 1 || depth.width() != k.width || depth.height() != k.height {
            return Err(MvsError::arg(format!(
                "depth map must be {}x{}x1, got {}x{}x{}",
                k.width,
                k.height,
                depth.width(),
                depth.height(),
                depth.channels()
            )));
        }
        let (w, h) = (depth.width(), depth.height());
        let mut sig = Signature::new();
        let (smooth, smooth_grad) = smoothness_terms(
            depth,
            &self.luma,
            self.weights.alpha2,
            self.weights.alpha3,
            self.range,
            &mut sig,
        );
        let levels = depth_levels(depth)?;
        let evals = self
            .sources
            .par_iter()
            .map(|src| self.eval_view(src, depth, &levels, smooth))
            .collect::<Result<Vec<_>>>()?;

        let mut grad = vec![0.0; w * h];
        let g1l3 = self.weights.gamma1 * self.weights.lambda3;
        let mut views = Vec::with_capacity(evals.len());
        for e in evals {
            for (i, g) in grad.iter_mut().enumerate() {
                *g += e.grad[i] + g1l3 * smooth_grad[i];
            }
            sig.push(e.sig);
            views.push(e.loss);
        }
        let breakdown = LossBreakdown::from_views(views, &self.weights, w * h);
        let grad = ImageGrid::from_vec(w, h, 1, grad)?;
        Ok((breakdown, grad, sig.value()))
    }

    fn eval_view(&self, src: &View, depth: &DepthMap, levels: &[DepthMap], smooth: f64) -> Result<ViewEval> {
        let wt = &self.weights;
        let (w, h) = (depth.width(), depth.height());
        let rc = &self.reference.camera;
        let sc = &src.camera;
        let mut sig = Signature::new();

        let warp = warp_with_jacobian(
            &src.image,
            depth,
            &rc.intrinsics,
            &sc.intrinsics,
            &rc.relative_to(sc),
        )?;
        push_warp(&mut sig, &warp);
        let photo = photometric_terms(&self.reference.image, &warp.warped, &warp.mask, &mut sig);
        let ssim = ssim_terms(&self.reference.image, &warp.warped, &warp.mask);
        let mut grad = vec![0.0; w * h];
        let d_dz = warp.d_dz.as_ref().expect("jacobian requested");
        let ch = src.image.channels();
        for (i, g) in grad.iter_mut().enumerate() {
            let mut s = 0.0;
            for c in 0..ch {
                let a = wt.lambda1 * photo.adjoint[i * ch + c] + wt.lambda2 * ssim.adjoint[i * ch + c];
                s += a * d_dz.data()[i * ch + c];
            }
            *g = wt.gamma1 * s;
        }

        let betas = wt.betas();
        let margin = self.reference.pyramid.margin();
        let mut per_scale = [0.0; 3];
        let mut counts = [0; 3];
        // gradients per level, finest first, then folded back to full resolution
        let mut level_grads: Vec<Vec<f64>> = Vec::with_capacity(LEVELS.len());
        for (i, &level) in LEVELS.iter().enumerate() {
            let (Some(fr), Some(fs)) = (self.reference.pyramid.level(level), src.pyramid.level(level)) else {
                return Err(MvsError::arg(format!("pyramid is missing level {level}")));
            };
            let cr = rc.at_level(level);
            let cs = sc.at_level(level);
            let lw = warp_interior(
                fs,
                &levels[i],
                &cr.intrinsics,
                &cs.intrinsics,
                &cr.relative_to(&cs),
                margin,
            )?;
            push_warp(&mut sig, &lw);
            let t = feature_terms(fr, &lw.warped, &lw.mask, &mut sig);
            per_scale[i] = t.value;
            counts[i] = t.count;
            let fch = fr.channels();
            let jd = lw.d_dz.as_ref().expect("jacobian requested");
            let scale = wt.gamma2 * betas[i];
            let lg: Vec<f64> = (0..levels[i].pixel_count())
                .map(|p| {
                    let mut s = 0.0;
                    for c in 0..fch {
                        s += t.adjoint[p * fch + c] * jd.data()[p * fch + c];
                    }
                    scale * s
                })
                .collect();
            level_grads.push(lg);
        }
        let mut carry = vec![0.0; levels[LEVELS.len() - 1].pixel_count()];
        for i in (0..LEVELS.len()).rev() {
            let (fw, fh) = if i == 0 {
                (w, h)
            } else {
                (levels[i - 1].width(), levels[i - 1].height())
            };
            for (c, g) in carry.iter_mut().zip(&level_grads[i]) {
                *c += g;
            }
            carry = spread_half(&carry, &levels[i], fw, fh);
        }
        for (g, c) in grad.iter_mut().zip(&carry) {
            *g += c;
        }

        let pixel = combine_pixel(photo.value, ssim.value, smooth, wt);
        let feature = combine_feature(per_scale, wt);
        Ok(ViewEval {
            loss: ViewLoss {
                photo: photo.value,
                ssim: ssim.value,
                smooth,
                pixel,
                feature_per_scale: per_scale,
                feature,
                valid_pixels: photo.count,
                feature_valid: counts,
            },
            grad,
            sig: sig.value(),
        })
    }
}

fn push_warp(sig: &mut Signature, warp: &Warp) {
    for c in &warp.cells {
        match c {
            Some((x, y)) => sig.push(((*x as u64) << 32) | *y as u64),
            None => sig.push(u64::MAX),
        }
    }
}
