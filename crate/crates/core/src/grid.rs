//! Dense rasters: images, feature maps, depth maps and masks.
//!
//! Every raster is stored row-major in `(y, x, c)` order. Integer coordinates
//! are pixel centers, so the continuous image domain is `[0, W-1] x [0, H-1]`.

use rayon::prelude::*;

use crate::error::{MvsError, Result};

/// An `H x W x C` real-valued raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

/// Single-channel grid of depths in millimetres; `0` marks an invalid pixel.
pub type DepthMap = ImageGrid;

/// Single-channel grid of per-pixel confidences in `[0, 1]`.
pub type ProbabilityMap = ImageGrid;

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "empty grid");
        ImageGrid {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(MvsError::arg(format!(
                "grid dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(MvsError::arg(format!(
                "grid data has {} values, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(MvsError::arg(format!("non-finite grid value at index {bad}")));
        }
        Ok(ImageGrid {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a grid by evaluating `f(x, y, out)` for every pixel, rows in parallel.
    ///
    /// Each pixel is written by exactly one call, so the result does not
    /// depend on the number of worker threads.
    pub fn from_fn<F>(width: usize, height: usize, channels: usize, f: F) -> Self
    where
        F: Fn(usize, usize, &mut [f64]) + Sync,
    {
        let mut grid = Self::new(width, height, channels);
        let row_len = width * channels;
        grid.data
            .par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(y, row)| {
                for (x, px) in row.chunks_mut(channels).enumerate() {
                    f(x, y, px);
                }
            });
        grid
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of pixels (`W * H`).
    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y, 0);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = self.index(x, y, 0);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn same_size(&self, other: &ImageGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Depth-map validity: strictly positive and finite.
    #[inline]
    pub fn is_valid_depth(&self, x: usize, y: usize) -> bool {
        let z = self.get(x, y, 0);
        z > 0.0 && z.is_finite()
    }

    /// Channel `c` as its own single-channel grid.
    pub fn channel(&self, c: usize) -> ImageGrid {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        ImageGrid {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Rec.601 luma for RGB input; single-channel input is returned as is.
    pub fn to_luma(&self) -> Result<ImageGrid> {
        match self.channels {
            1 => Ok(self.clone()),
            3 => {
                let data = self
                    .data
                    .chunks_exact(3)
                    .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                    .collect();
                Ok(ImageGrid {
                    width: self.width,
                    height: self.height,
                    channels: 1,
                    data,
                })
            }
            c => Err(MvsError::arg(format!(
                "expected a 1- or 3-channel image, got {c} channels"
            ))),
        }
    }

    /// Largest absolute element-wise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &ImageGrid) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// 2x2 non-overlapping average pooling; output dimensions are `floor(in / 2)`.
pub fn downsample_half(img: &ImageGrid) -> Result<ImageGrid> {
    if img.width < 2 || img.height < 2 {
        return Err(MvsError::arg(format!(
            "cannot halve a {}x{} grid",
            img.width, img.height
        )));
    }
    let (w, h, ch) = (img.width / 2, img.height / 2, img.channels);
    Ok(ImageGrid::from_fn(w, h, ch, |x, y, out| {
        for (c, o) in out.iter_mut().enumerate() {
            let s = img.get(2 * x, 2 * y, c)
                + img.get(2 * x + 1, 2 * y, c)
                + img.get(2 * x, 2 * y + 1, c)
                + img.get(2 * x + 1, 2 * y + 1, c);
            *o = 0.25 * s;
        }
    }))
}

/// Halves a depth map; a block containing any invalid pixel becomes invalid.
pub fn downsample_depth_half(depth: &DepthMap) -> Result<DepthMap> {
    if depth.width < 2 || depth.height < 2 {
        return Err(MvsError::arg(format!(
            "cannot halve a {}x{} depth map",
            depth.width, depth.height
        )));
    }
    let (w, h) = (depth.width / 2, depth.height / 2);
    Ok(ImageGrid::from_fn(w, h, 1, |x, y, out| {
        let block = [
            (2 * x, 2 * y),
            (2 * x + 1, 2 * y),
            (2 * x, 2 * y + 1),
            (2 * x + 1, 2 * y + 1),
        ];
        out[0] = if block.iter().all(|&(bx, by)| depth.is_valid_depth(bx, by)) {
            0.25 * block.iter().map(|&(bx, by)| depth.get(bx, by, 0)).sum::<f64>()
        } else {
            0.0
        };
    }))
}

/// Area-averages `img` down to `width x height` by repeated halving.
pub fn area_downsample_to(img: &ImageGrid, width: usize, height: usize) -> Result<ImageGrid> {
    let mut cur = img.clone();
    while cur.width != width || cur.height != height {
        if cur.width / 2 < width || cur.height / 2 < height {
            return Err(MvsError::arg(format!(
                "{}x{} is not a power-of-two reduction of {}x{}",
                width, height, img.width, img.height
            )));
        }
        cur = downsample_half(&cur)?;
    }
    Ok(cur)
}

/// Resamples a depth (or confidence) map to a finer grid.
///
/// Fine pixel `x` sits at coarse coordinate `(x + 0.5) / s - 0.5`. Bilinear
/// weights are renormalised over valid (positive) corners; a pixel with no
/// valid corner stays `0`.
pub fn upsample_depth(depth: &DepthMap, width: usize, height: usize) -> DepthMap {
    let sx = width as f64 / depth.width as f64;
    let sy = height as f64 / depth.height as f64;
    let (cw, chh) = (depth.width as isize, depth.height as isize);
    ImageGrid::from_fn(width, height, 1, |x, y, out| {
        let u = ((x as f64 + 0.5) / sx - 0.5).clamp(0.0, (cw - 1) as f64);
        let v = ((y as f64 + 0.5) / sy - 0.5).clamp(0.0, (chh - 1) as f64);
        let x0 = u.floor() as isize;
        let y0 = v.floor() as isize;
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (dx, dy, w) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let xi = (x0 + dx).min(cw - 1) as usize;
            let yi = (y0 + dy).min(chh - 1) as usize;
            let d = depth.get(xi, yi, 0);
            if d > 0.0 && w > 0.0 {
                acc += w * d;
                wsum += w;
            }
        }
        out[0] = if wsum > 0.0 { acc / wsum } else { 0.0 };
    })
}

/// A per-pixel validity flag raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(MvsError::arg(format!(
                "mask has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// The mask as a 0/1 single-channel grid.
    pub fn to_grid(&self) -> ImageGrid {
        let data = self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        ImageGrid::from_vec(self.width, self.height, 1, data).expect("mask shape")
    }
}

/// Closed interval of admissible depths in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

impl DepthRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && max > min && max.is_finite()) {
            return Err(MvsError::Domain(format!(
                "depth range must satisfy 0 < min < max, got [{min}, {max}]"
            )));
        }
        Ok(DepthRange { min, max })
    }

    #[inline]
    pub fn contains(&self, z: f64) -> bool {
        z >= self.min && z <= self.max
    }

    #[inline]
    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}
