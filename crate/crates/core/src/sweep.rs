//! Plane-sweep stereo: variance cost volume over fronto-parallel depth
//! hypotheses, fixed smoothing, softmax probabilities and soft-argmin depth.

use rayon::prelude::*;

use crate::camera::{warp_image, CameraModel};
use crate::error::{MvsError, Result};
use crate::grid::{DepthMap, DepthRange, ImageGrid, ProbabilityMap};

/// Uniformly spaced, ascending depth samples covering `[d_min, d_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthHypotheses {
    range: DepthRange,
    values: Vec<f64>,
}

impl DepthHypotheses {
    pub fn new(d_min: f64, d_max: f64, count: usize) -> Result<Self> {
        let range = DepthRange::new(d_min, d_max)?;
        if count < 2 {
            return Err(MvsError::Domain(format!(
                "need at least two depth hypotheses, got {count}"
            )));
        }
        let step = range.span() / (count - 1) as f64;
        let mut values: Vec<f64> = (0..count).map(|i| d_min + step * i as f64).collect();
        values[count - 1] = d_max;
        Ok(DepthHypotheses { range, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn range(&self) -> DepthRange {
        self.range
    }

    /// Distance between consecutive hypotheses.
    pub fn spacing(&self) -> f64 {
        self.range.span() / (self.values.len() - 1) as f64
    }
}

/// A `D x H x W` stack, slice-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    depth_count: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Per-voxel matching cost (lower is more photo-consistent).
pub type CostVolume = Volume;
/// Per-pixel distribution over hypotheses; each column sums to one.
pub type ProbabilityVolume = Volume;

impl Volume {
    pub fn from_vec(depth_count: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if depth_count == 0 || width == 0 || height == 0 {
            return Err(MvsError::arg("volume dimensions must be positive"));
        }
        if data.len() != depth_count * width * height {
            return Err(MvsError::arg(format!(
                "volume has {} values, expected {}",
                data.len(),
                depth_count * width * height
            )));
        }
        Ok(Volume {
            depth_count,
            width,
            height,
            data,
        })
    }

    pub fn filled(depth_count: usize, width: usize, height: usize, v: f64) -> Self {
        Volume {
            depth_count,
            width,
            height,
            data: vec![v; depth_count * width * height],
        }
    }

    pub fn depth_count(&self) -> usize {
        self.depth_count
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, d: usize, x: usize, y: usize) -> usize {
        (d * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, d: usize, x: usize, y: usize) -> f64 {
        self.data[self.index(d, x, y)]
    }

    #[inline]
    pub fn set(&mut self, d: usize, x: usize, y: usize, v: f64) {
        let i = self.index(d, x, y);
        self.data[i] = v;
    }

    /// Values along the hypothesis axis at `(x, y)`.
    pub fn column(&self, x: usize, y: usize) -> Vec<f64> {
        (0..self.depth_count).map(|d| self.get(d, x, y)).collect()
    }

    fn slice_len(&self) -> usize {
        self.width * self.height
    }
}

/// Variance cost volume of the reference features against warped sources.
///
/// `cams[0]` belongs to the reference, `cams[i + 1]` to `src_feats[i]`; their
/// intrinsics must describe the feature resolution. A voxel observed by
/// fewer than two views (reference included) gets `invalid_cost`.
pub fn build_cost_volume(
    ref_feat: &ImageGrid,
    src_feats: &[ImageGrid],
    cams: &[CameraModel],
    hyp: &DepthHypotheses,
    invalid_cost: f64,
) -> Result<CostVolume> {
    if src_feats.is_empty() {
        return Err(MvsError::arg("cost volume needs at least one source view"));
    }
    if cams.len() != src_feats.len() + 1 {
        return Err(MvsError::arg(format!(
            "expected {} cameras (reference first), got {}",
            src_feats.len() + 1,
            cams.len()
        )));
    }
    for (i, f) in src_feats.iter().enumerate() {
        if !f.same_shape(ref_feat) {
            return Err(MvsError::arg(format!(
                "source feature map {i} is {}x{}x{}, reference is {}x{}x{}",
                f.width(),
                f.height(),
                f.channels(),
                ref_feat.width(),
                ref_feat.height(),
                ref_feat.channels()
            )));
        }
    }
    for (i, cam) in cams.iter().enumerate() {
        let k = &cam.intrinsics;
        if k.width != ref_feat.width() || k.height != ref_feat.height() {
            return Err(MvsError::arg(format!(
                "camera {i} describes {}x{}, features are {}x{}",
                k.width,
                k.height,
                ref_feat.width(),
                ref_feat.height()
            )));
        }
    }

    let (w, h, ch) = (ref_feat.width(), ref_feat.height(), ref_feat.channels());
    let relatives: Vec<_> = cams[1..].iter().map(|c| cams[0].relative_to(c)).collect();
    let slices: Vec<Result<Vec<f64>>> = hyp
        .values()
        .par_iter()
        .map(|&d| {
            let plane = ImageGrid::filled(w, h, 1, d);
            let warps = src_feats
                .iter()
                .zip(&cams[1..])
                .zip(&relatives)
                .map(|((f, cam), t)| warp_image(f, &plane, &cams[0].intrinsics, &cam.intrinsics, t))
                .collect::<Result<Vec<_>>>()?;
            let mut slice = vec![0.0; w * h];
            let mut vals = Vec::with_capacity(warps.len() + 1);
            for y in 0..h {
                for x in 0..w {
                    let n = 1 + warps.iter().filter(|(_, m)| m.get(x, y)).count();
                    if n < 2 {
                        slice[y * w + x] = invalid_cost;
                        continue;
                    }
                    let mut cost = 0.0;
                    for c in 0..ch {
                        vals.clear();
                        vals.push(ref_feat.get(x, y, c));
                        for (img, m) in &warps {
                            if m.get(x, y) {
                                vals.push(img.get(x, y, c));
                            }
                        }
                        let mean = vals.iter().sum::<f64>() / n as f64;
                        cost += vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    }
                    slice[y * w + x] = cost / ch as f64;
                }
            }
            Ok(slice)
        })
        .collect();
    let mut data = Vec::with_capacity(hyp.len() * w * h);
    for s in slices {
        data.extend(s?);
    }
    Volume::from_vec(hyp.len(), w, h, data)
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
    D,
}

fn box_pass(vol: &Volume, radius: usize, axis: Axis) -> Volume {
    let (dn, w, h) = (vol.depth_count, vol.width, vol.height);
    let mut data = vec![0.0; vol.data.len()];
    data.par_chunks_mut(vol.slice_len())
        .enumerate()
        .for_each(|(d, slice)| {
            for y in 0..h {
                for x in 0..w {
                    let (pos, len) = match axis {
                        Axis::X => (x, w),
                        Axis::Y => (y, h),
                        Axis::D => (d, dn),
                    };
                    let lo = pos.saturating_sub(radius);
                    let hi = (pos + radius).min(len - 1);
                    let mut s = 0.0;
                    for i in lo..=hi {
                        s += match axis {
                            Axis::X => vol.get(d, i, y),
                            Axis::Y => vol.get(d, x, i),
                            Axis::D => vol.get(i, x, y),
                        };
                    }
                    slice[y * w + x] = s / (hi - lo + 1) as f64;
                }
            }
        });
    Volume { data, ..*vol }
}

/// Separable box smoothing along W, H and D; windows are clipped at the
/// volume faces and renormalised. `passes = 0` returns the input.
pub fn regularize_volume(cost: &CostVolume, radius: usize, passes: usize) -> CostVolume {
    let mut v = cost.clone();
    if radius == 0 {
        return v;
    }
    for _ in 0..passes {
        v = box_pass(&v, radius, Axis::X);
        v = box_pass(&v, radius, Axis::Y);
        v = box_pass(&v, radius, Axis::D);
    }
    v
}

/// Per-pixel softmax of `-cost / temperature`.
pub fn softmax_probability(cost: &CostVolume, temperature: f64) -> Result<ProbabilityVolume> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(MvsError::Domain(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let (dn, w, h) = (cost.depth_count, cost.width, cost.height);
    let mut out = Volume::filled(dn, w, h, 0.0);
    let cols: Vec<Vec<f64>> = (0..w * h)
        .into_par_iter()
        .map(|i| softmax_column(&cost.column(i % w, i / w), temperature))
        .collect();
    for (i, col) in cols.into_iter().enumerate() {
        for (d, p) in col.into_iter().enumerate() {
            out.set(d, i % w, i / w, p);
        }
    }
    Ok(out)
}

fn softmax_column(costs: &[f64], temperature: f64) -> Vec<f64> {
    let lo = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut e: Vec<f64> = costs.iter().map(|c| (-(c - lo) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= s);
    e
}

/// Probability-weighted mean hypothesis per pixel.
pub fn soft_argmin(prob: &ProbabilityVolume, hyp: &DepthHypotheses) -> Result<DepthMap> {
    if prob.depth_count != hyp.len() {
        return Err(MvsError::arg(format!(
            "probability volume has {} slices, hypotheses {}",
            prob.depth_count,
            hyp.len()
        )));
    }
    let r = hyp.range();
    Ok(ImageGrid::from_fn(prob.width, prob.height, 1, |x, y, out| {
        let mut z = 0.0;
        for (d, v) in hyp.values().iter().enumerate() {
            z += v * prob.get(d, x, y);
        }
        out[0] = z.clamp(r.min, r.max);
    }))
}

/// Soft-argmin of one cost column and its gradient with respect to the costs:
/// `dZ/dc_k = -P_k (v_k - Z) / T`.
pub fn soft_argmin_column_grad(costs: &[f64], values: &[f64], temperature: f64) -> (f64, Vec<f64>) {
    let p = softmax_column(costs, temperature);
    let z: f64 = p.iter().zip(values).map(|(p, v)| p * v).sum();
    let g = p
        .iter()
        .zip(values)
        .map(|(p, v)| -p * (v - z) / temperature)
        .collect();
    (z, g)
}

/// Sum of probability over the `window` hypotheses nearest to the regressed
/// depth, with the window slid inside the volume at either end.
pub fn probability_map(
    prob: &ProbabilityVolume,
    depth: &DepthMap,
    hyp: &DepthHypotheses,
    window: usize,
) -> Result<ProbabilityMap> {
    if window == 0 {
        return Err(MvsError::arg("probability window must be at least 1"));
    }
    if depth.width() != prob.width || depth.height() != prob.height {
        return Err(MvsError::arg("depth map and probability volume sizes differ"));
    }
    let dn = prob.depth_count;
    let win = window.min(dn);
    let (d0, step) = (hyp.range().min, hyp.spacing());
    Ok(ImageGrid::from_fn(prob.width, prob.height, 1, |x, y, out| {
        let pos = (depth.get(x, y, 0) - d0) / step;
        let start = (pos - (win as f64 - 1.0) / 2.0).round();
        let start = start.clamp(0.0, (dn - win) as f64) as usize;
        let s: f64 = (start..start + win).map(|d| prob.get(d, x, y)).sum();
        out[0] = s.clamp(0.0, 1.0);
    }))
}
