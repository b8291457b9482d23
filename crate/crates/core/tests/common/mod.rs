#![allow(dead_code)]

use mvskit_core::camera::{CameraIntrinsics, CameraModel, RigidTransform};
use mvskit_core::config::PipelineConfig;
use mvskit_core::grid::{DepthMap, DepthRange};
use mvskit_core::pipeline::Frame;
use mvskit_core::scene::{render_scene, Geometry, RenderedView, SceneSpec, Texture};
use nalgebra::Vector3;

pub const PLANE_Z: f64 = 512.0;

pub fn k64() -> CameraIntrinsics {
    CameraIntrinsics::new(64.0, 64.0, 32.0, 24.0, 64, 48).unwrap()
}

pub fn range() -> DepthRange {
    DepthRange::new(425.0, 935.0).unwrap()
}

pub fn noise(seed: u64) -> Texture {
    Texture::Noise {
        seed,
        octaves: 4,
        scale: 64.0,
    }
}

/// Cameras at x = 0, then alternating x = +128 and x = -128 mm (world to
/// camera translations of the opposite sign).
pub fn rig(n: usize) -> Vec<CameraModel> {
    let offsets = [0.0, -128.0, 128.0];
    offsets[..n]
        .iter()
        .map(|&tx| CameraModel::new(k64(), RigidTransform::from_translation(Vector3::new(tx, 0.0, 0.0))))
        .collect()
}

pub fn scene(geometry: Geometry, texture: Texture, views: usize, sigma: f64, seed: u64) -> SceneSpec {
    SceneSpec {
        geometry,
        texture,
        views: rig(views),
        range: range(),
        noise_sigma: sigma,
        seed,
    }
}

pub fn fronto(z: f64) -> Geometry {
    Geometry::Plane {
        normal: Vector3::z(),
        offset: z,
    }
}

/// The two-view plane oracle: 64x48, 16 px of disparity at Z = 512.
pub fn plane_oracle(texture_seed: u64) -> (SceneSpec, Vec<RenderedView>) {
    let s = scene(fronto(PLANE_Z), noise(texture_seed), 2, 0.0, 0);
    let r = render_scene(&s).unwrap();
    (s, r)
}

pub fn frames(spec: &SceneSpec, views: &[RenderedView]) -> Vec<Frame> {
    views
        .iter()
        .zip(&spec.views)
        .map(|(v, c)| Frame {
            image: v.image.clone(),
            camera: *c,
        })
        .collect()
}

/// Views reordered so that `r` comes first.
pub fn with_reference(frames: &[Frame], r: usize) -> Vec<Frame> {
    let mut out = vec![frames[r].clone()];
    out.extend(frames.iter().enumerate().filter(|(i, _)| *i != r).map(|(_, f)| f.clone()));
    out
}

pub fn oracle_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.depth.count = 32;
    cfg
}

/// Root-mean-square difference over pixels valid in `est`.
pub fn rms(est: &DepthMap, gt: &DepthMap) -> f64 {
    let mut s = 0.0;
    let mut n = 0;
    for (a, b) in est.data().iter().zip(gt.data()) {
        if *a > 0.0 {
            s += (a - b) * (a - b);
            n += 1;
        }
    }
    (s / n as f64).sqrt()
}
