//! Analytic synthetic scenes with exact ground-truth depth.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::{bilinear_sample, CameraModel, PixelCoord};
use crate::error::{MvsError, Result};
use crate::grid::{DepthMap, DepthRange, ImageGrid};
use crate::lcg::ValueNoise;

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// World-frame plane `normal . X = offset`.
    Plane { normal: Vector3<f64>, offset: f64 },
    Sphere { center: Vector3<f64>, radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    /// 3D checkerboard of cubes `period` mm wide, intensities `low`/`high`.
    Checker { period: f64, low: f64, high: f64 },
    /// Fractal value noise per colour channel with lattice spacing `scale` mm.
    Noise { seed: u64, octaves: u32, scale: f64 },
    /// An image painted onto the surface by projecting it from the first view.
    Image(ImageGrid),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub geometry: Geometry,
    pub texture: Texture,
    pub views: Vec<CameraModel>,
    pub range: DepthRange,
    /// Standard deviation of additive Gaussian image noise (intensity units).
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    /// RGB in `[0, 1]`.
    pub image: ImageGrid,
    /// Exact camera-frame depth; 0 where the ray misses the surface.
    pub depth: DepthMap,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(MvsError::Config("scene needs at least one view".into()));
        }
        match &self.geometry {
            Geometry::Plane { normal, offset } => {
                if !(normal.norm() > 0.0) || !offset.is_finite() {
                    return Err(MvsError::Config("plane normal must be nonzero".into()));
                }
            }
            Geometry::Sphere { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(MvsError::Config("sphere radius must be positive".into()));
                }
            }
        }
        match &self.texture {
            Texture::Checker { period, .. } if !(*period > 0.0) => {
                return Err(MvsError::Config("checker period must be positive".into()))
            }
            Texture::Noise { scale, .. } if !(*scale > 0.0) => {
                return Err(MvsError::Config("noise scale must be positive".into()))
            }
            _ => {}
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(MvsError::Config("noise_sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Camera-frame depth at which the ray through `p` meets the surface.
pub fn intersect(geometry: &Geometry, cam: &CameraModel, p: PixelCoord) -> Option<f64> {
    let r = cam.world_to_camera.rotation().transpose();
    let center = -(r * cam.world_to_camera.translation());
    let dir = r * cam.intrinsics.ray(p);
    let s = match geometry {
        Geometry::Plane { normal, offset } => {
            let den = normal.dot(&dir);
            if den == 0.0 {
                return None;
            }
            (offset - normal.dot(&center)) / den
        }
        Geometry::Sphere { center: c, radius } => {
            let oc = center - c;
            let a = dir.dot(&dir);
            let b = 2.0 * dir.dot(&oc);
            let cc = oc.dot(&oc) - radius * radius;
            let disc = b * b - 4.0 * a * cc;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let near = (-b - sq) / (2.0 * a);
            if near > 0.0 {
                near
            } else {
                (-b + sq) / (2.0 * a)
            }
        }
    };
    (s > 0.0 && s.is_finite()).then_some(s)
}

struct Painter<'a> {
    texture: &'a Texture,
    noise: Vec<ValueNoise>,
    first: &'a CameraModel,
}

impl Painter<'_> {
    fn color(&self, x: &Vector3<f64>) -> [f64; 3] {
        match self.texture {
            Texture::Checker { period, low, high } => {
                let c = (x / *period).map(f64::floor);
                let parity = (c.x + c.y + c.z).rem_euclid(2.0);
                let v = if parity == 0.0 { *low } else { *high };
                [v; 3]
            }
            Texture::Noise { octaves, scale, .. } => {
                let p = x / *scale;
                let mut out = [0.0; 3];
                for (o, n) in out.iter_mut().zip(&self.noise) {
                    *o = 0.1 + 0.8 * n.fractal(&p, *octaves);
                }
                out
            }
            Texture::Image(img) => {
                let Ok((p, _)) = self.first.world_to_pixel(x) else {
                    return [0.0; 3];
                };
                let k = &self.first.intrinsics;
                let sx = img.width() as f64 / k.width as f64;
                let sy = img.height() as f64 / k.height as f64;
                let u = ((p.x + 0.5) * sx - 0.5).clamp(0.0, (img.width() - 1) as f64);
                let v = ((p.y + 0.5) * sy - 0.5).clamp(0.0, (img.height() - 1) as f64);
                let (s, _) = bilinear_sample(img, PixelCoord::new(u, v));
                if s.len() >= 3 {
                    [s[0], s[1], s[2]]
                } else {
                    [s[0]; 3]
                }
            }
        }
    }
}

/// Ray-casts every view; errors if some view sees none of the surface
/// inside the depth range.
pub fn render_scene(spec: &SceneSpec) -> Result<Vec<RenderedView>> {
    spec.validate()?;
    let noise = match &spec.texture {
        Texture::Noise { seed, .. } => (0..3).map(|c| ValueNoise::new(seed.wrapping_add(c))).collect(),
        _ => Vec::new(),
    };
    let painter = Painter {
        texture: &spec.texture,
        noise,
        first: &spec.views[0],
    };
    let mut out = Vec::with_capacity(spec.views.len());
    for (i, cam) in spec.views.iter().enumerate() {
        let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
        let depth = ImageGrid::from_fn(w, h, 1, |x, y, o| {
            o[0] = intersect(&spec.geometry, cam, PixelCoord::new(x as f64, y as f64)).unwrap_or(0.0);
        });
        let visible = depth.data().iter().any(|&z| z > 0.0 && spec.range.contains(z));
        if !visible {
            return Err(MvsError::Config(format!(
                "view {i} does not see the geometry within [{}, {}] mm",
                spec.range.min, spec.range.max
            )));
        }
        let mut image = ImageGrid::from_fn(w, h, 3, |x, y, o| {
            let z = depth.get(x, y, 0);
            if z > 0.0 {
                let p = cam
                    .pixel_to_world(PixelCoord::new(x as f64, y as f64), z)
                    .expect("positive depth");
                o.copy_from_slice(&painter.color(&p));
            }
        });
        if spec.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(i as u64));
            let n = Normal::new(0.0, spec.noise_sigma).expect("finite sigma");
            for v in image.data_mut() {
                *v = (*v + n.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        out.push(RenderedView { image, depth });
    }
    Ok(out)
}
