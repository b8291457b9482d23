//! Deterministic multi-scale descriptors.
//!
//! Each pyramid level holds eight hand-crafted channels computed from the
//! luma at that scale (local mean, central gradients, gradient magnitude and
//! four oriented differences), each standardised over a local window.

use crate::error::{MvsError, Result};
use crate::grid::{downsample_half, ImageGrid};

/// Floor on the local standard deviation used for standardisation.
pub const NORM_EPS: f64 = 1e-3;

/// Number of descriptor channels available.
pub const MAX_CHANNELS: usize = 8;

/// Pyramid levels, as numbers of halvings: scales 1/2, 1/4 and 1/8.
pub const LEVELS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    /// How many of the descriptor channels to keep (1..=8).
    pub channels: usize,
    /// Side of the standardisation window (odd, >= 3).
    pub window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            channels: MAX_CHANNELS,
            window: 7,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.channels > MAX_CHANNELS {
            return Err(MvsError::Config(format!(
                "features.channels must be in 1..={MAX_CHANNELS}, got {}",
                self.channels
            )));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(MvsError::Config(format!(
                "features.window must be odd and >= 3, got {}",
                self.window
            )));
        }
        Ok(())
    }

    /// Width of the border band whose descriptors see clamped or clipped
    /// neighbourhoods: the window half-width plus the radius-2 stencils.
    pub fn margin(&self) -> usize {
        self.window / 2 + 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLevel {
    /// Number of halvings from the input resolution.
    pub level: usize,
    pub features: ImageGrid,
}

impl FeatureLevel {
    pub fn scale(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<FeatureLevel>,
    pub config: FeatureConfig,
    /// Whether the descriptors were locally standardised.
    pub normalized: bool,
}

impl FeaturePyramid {
    /// Border band whose descriptors depend on clamped reads.
    pub fn margin(&self) -> usize {
        if self.normalized {
            self.config.margin()
        } else {
            2
        }
    }

    /// Built by the same extractor with the same settings.
    pub fn compatible(&self, other: &FeaturePyramid) -> bool {
        self.config == other.config && self.normalized == other.normalized
    }

    /// Features after `level` halvings.
    pub fn level(&self, level: usize) -> Option<&ImageGrid> {
        self.levels
            .iter()
            .find(|l| l.level == level)
            .map(|l| &l.features)
    }
}

/// Builds the 1/2, 1/4 and 1/8 descriptor levels of a grayscale or RGB image.
pub fn extract_pyramid(img: &ImageGrid, cfg: &FeatureConfig) -> Result<FeaturePyramid> {
    build(img, cfg, true)
}

/// [`extract_pyramid`] without the local standardisation: the descriptors
/// stay linear in the image intensities.
pub fn extract_raw_pyramid(img: &ImageGrid, cfg: &FeatureConfig) -> Result<FeaturePyramid> {
    build(img, cfg, false)
}

fn build(img: &ImageGrid, cfg: &FeatureConfig, normalize: bool) -> Result<FeaturePyramid> {
    cfg.validate()?;
    if img.width() < 8 || img.height() < 8 {
        return Err(MvsError::arg(format!(
            "feature extraction needs at least 8x8 pixels, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let mut luma = img.to_luma()?;
    let mut levels = Vec::with_capacity(LEVELS.len());
    for &level in &LEVELS {
        luma = downsample_half(&luma)?;
        let raw = raw_features(&luma, cfg.channels);
        levels.push(FeatureLevel {
            level,
            features: if normalize { standardize(&raw, cfg.window) } else { raw },
        });
    }
    Ok(FeaturePyramid {
        levels,
        config: *cfg,
        normalized: normalize,
    })
}

#[inline]
fn at(img: &ImageGrid, x: isize, y: isize) -> f64 {
    let xi = x.clamp(0, img.width() as isize - 1) as usize;
    let yi = y.clamp(0, img.height() as isize - 1) as usize;
    img.get(xi, yi, 0)
}

fn central(img: &ImageGrid, x: usize, y: usize, horizontal: bool) -> f64 {
    let (pos, len) = if horizontal {
        (x, img.width())
    } else {
        (y, img.height())
    };
    if len == 1 {
        return 0.0;
    }
    let get = |p: usize| {
        if horizontal {
            img.get(p, y, 0)
        } else {
            img.get(x, p, 0)
        }
    };
    if pos == 0 {
        get(1) - get(0)
    } else if pos == len - 1 {
        get(len - 1) - get(len - 2)
    } else {
        0.5 * (get(pos + 1) - get(pos - 1))
    }
}

/// Unnormalised descriptors of a single-channel image.
///
/// Channels: 3x3 mean, horizontal and vertical gradient (central, one-sided
/// at the border), gradient magnitude, and the differences across the two
/// diagonals and across +-2 pixels horizontally and vertically.
pub fn raw_features(luma: &ImageGrid, channels: usize) -> ImageGrid {
    ImageGrid::from_fn(luma.width(), luma.height(), channels, |x, y, out| {
        let (xi, yi) = (x as isize, y as isize);
        let gx = central(luma, x, y, true);
        let gy = central(luma, x, y, false);
        let mut mean = 0.0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                mean += at(luma, xi + dx, yi + dy);
            }
        }
        let all = [
            mean / 9.0,
            gx,
            gy,
            (gx * gx + gy * gy).sqrt(),
            at(luma, xi + 1, yi + 1) - at(luma, xi - 1, yi - 1),
            at(luma, xi + 1, yi - 1) - at(luma, xi - 1, yi + 1),
            at(luma, xi + 2, yi) - at(luma, xi - 2, yi),
            at(luma, xi, yi + 2) - at(luma, xi, yi - 2),
        ];
        out.copy_from_slice(&all[..channels]);
    })
}

/// Mean and (population) standard deviation of channel `c` over the
/// `window x window` neighbourhood of `(x, y)`, clipped to the image.
pub fn window_stats(grid: &ImageGrid, x: usize, y: usize, c: usize, window: usize) -> (f64, f64) {
    let r = window / 2;
    let x0 = x.saturating_sub(r);
    let x1 = (x + r).min(grid.width() - 1);
    let y0 = y.saturating_sub(r);
    let y1 = (y + r).min(grid.height() - 1);
    let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
    let mut sum = 0.0;
    for yy in y0..=y1 {
        for xx in x0..=x1 {
            sum += grid.get(xx, yy, c);
        }
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for yy in y0..=y1 {
        for xx in x0..=x1 {
            let d = grid.get(xx, yy, c) - mean;
            ss += d * d;
        }
    }
    (mean, (ss / n).sqrt())
}

/// Local standardisation `(v - mean) / max(std, NORM_EPS)` per channel.
pub fn standardize(raw: &ImageGrid, window: usize) -> ImageGrid {
    ImageGrid::from_fn(raw.width(), raw.height(), raw.channels(), |x, y, out| {
        for (c, o) in out.iter_mut().enumerate() {
            let (mean, std) = window_stats(raw, x, y, c, window);
            *o = (raw.get(x, y, c) - mean) / std.max(NORM_EPS);
        }
    })
}
