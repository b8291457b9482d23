//! Flat `[section]` / `key = value` configuration files.
//!
//! Unknown sections and keys are errors. Lists are whitespace separated.
//! `#` starts a comment anywhere on a line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::camera::{CameraIntrinsics, CameraModel, RigidTransform};
use crate::error::{MvsError, Result};
use crate::features::FeatureConfig;
use crate::fusion::FusionConfig;
use crate::grid::DepthRange;
use crate::io::read_image;
use crate::loss::LossWeights;
use crate::metrics::DEFAULT_DEPTH_THRESHOLDS;
use crate::scene::{Geometry, SceneSpec, Texture};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ini {
    pub origin: String,
    pub sections: Vec<Section>,
}

impl Ini {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(MvsError::Config(format!("{origin}:{line_no}: unterminated section header")));
                };
                let name = name.trim().to_string();
                if sections.iter().any(|s| s.name == name) {
                    return Err(MvsError::Config(format!("{origin}:{line_no}: duplicate section [{name}]")));
                }
                sections.push(Section {
                    name,
                    line: line_no,
                    entries: Vec::new(),
                });
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(MvsError::Config(format!("{origin}:{line_no}: expected 'key = value'")));
            };
            let Some(sec) = sections.last_mut() else {
                return Err(MvsError::Config(format!("{origin}:{line_no}: key outside of any section")));
            };
            let key = k.trim().to_string();
            if sec.entries.iter().any(|e| e.key == key) {
                return Err(MvsError::Config(format!(
                    "{origin}:{line_no}: duplicate key {}.{key}",
                    sec.name
                )));
            }
            sec.entries.push(Entry {
                key,
                value: v.trim().to_string(),
                line: line_no,
            });
        }
        Ok(Ini {
            origin: origin.to_string(),
            sections,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MvsError::Io {
            path: path.to_path_buf(),
            error: e,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    fn err(&self, line: usize, msg: impl std::fmt::Display) -> MvsError {
        MvsError::Config(format!("{}:{line}: {msg}", self.origin))
    }
}

/// Typed view of one section that remembers which keys were read.
struct Reader<'a> {
    ini: &'a Ini,
    sec: Option<&'a Section>,
    name: String,
    used: Vec<&'static str>,
}

impl<'a> Reader<'a> {
    fn new(ini: &'a Ini, name: &str) -> Self {
        Reader {
            ini,
            sec: ini.section(name),
            name: name.to_string(),
            used: Vec::new(),
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Entry> {
        self.used.push(key);
        self.sec?.entries.iter().find(|e| e.key == key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &'static str) -> Result<Option<T>> {
        let Some(e) = self.raw(key) else {
            return Ok(None);
        };
        e.value.parse().map(Some).map_err(|_| {
            self.ini.err(
                e.line,
                format!("{}.{key}: cannot parse {:?}", self.name, e.value),
            )
        })
    }

    fn get<T: std::str::FromStr>(&mut self, key: &'static str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn require<T: std::str::FromStr>(&mut self, key: &'static str) -> Result<T> {
        let line = self.sec.map_or(0, |s| s.line);
        self.parse(key)?
            .ok_or_else(|| self.ini.err(line, format!("missing {}.{key}", self.name)))
    }

    fn list(&mut self, key: &'static str) -> Result<Option<Vec<f64>>> {
        let Some(e) = self.raw(key) else {
            return Ok(None);
        };
        e.value
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|_| self.ini.err(e.line, format!("{}.{key}: bad number list {:?}", self.name, e.value)))
    }

    fn fixed<const N: usize>(&mut self, key: &'static str) -> Result<Option<[f64; N]>> {
        let line = self.raw(key).map_or(0, |e| e.line);
        self.used.pop();
        match self.list(key)? {
            None => Ok(None),
            Some(v) if v.len() == N => {
                let mut a = [0.0; N];
                a.copy_from_slice(&v);
                Ok(Some(a))
            }
            Some(v) => Err(self.ini.err(
                line,
                format!("{}.{key}: expected {N} numbers, got {}", self.name, v.len()),
            )),
        }
    }

    fn vec3(&mut self, key: &'static str) -> Result<Option<Vector3<f64>>> {
        Ok(self.fixed::<3>(key)?.map(|a| Vector3::new(a[0], a[1], a[2])))
    }

    fn string(&mut self, key: &'static str) -> Option<String> {
        self.raw(key).map(|e| e.value.clone())
    }

    /// Errors on any key that was never asked for.
    fn finish(self) -> Result<()> {
        if let Some(sec) = self.sec {
            for e in &sec.entries {
                if !self.used.contains(&e.key.as_str()) {
                    return Err(self.ini.err(e.line, format!("unknown key {}.{}", self.name, e.key)));
                }
            }
        }
        Ok(())
    }
}

fn check_sections(ini: &Ini, allowed: impl Fn(&str) -> bool) -> Result<()> {
    for s in &ini.sections {
        if !allowed(&s.name) {
            return Err(ini.err(s.line, format!("unknown section [{}]", s.name)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub count: usize,
    /// Pyramid level the sweep runs on.
    pub level: usize,
    pub temperature: f64,
    pub regularize_radius: usize,
    pub regularize_passes: usize,
    pub invalid_cost: f64,
    pub probability_window: usize,
    /// Fraction of hypotheses that must be observable for a depth to be kept.
    pub min_coverage: f64,
}

impl Default for DepthConfig {
    fn default() -> Self {
        DepthConfig {
            d_min: 425.0,
            d_max: 935.0,
            count: 192,
            level: 1,
            temperature: 0.005,
            regularize_radius: 1,
            regularize_passes: 1,
            invalid_cost: 4.0,
            probability_window: 4,
            min_coverage: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineSettings {
    pub step: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub nd_iterations: usize,
}

impl Default for RefineSettings {
    fn default() -> Self {
        RefineSettings {
            step: 1e6,
            max_iterations: 200,
            tolerance: 1e-6,
            nd_iterations: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub max_distance: f64,
    pub thresholds: Vec<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            max_distance: 20.0,
            thresholds: DEFAULT_DEPTH_THRESHOLDS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckSettings {
    pub step: f64,
    pub size: usize,
    pub samples: usize,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings {
            step: 1e-3,
            size: 8,
            samples: 64,
        }
    }
}

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub depth: DepthConfig,
    pub loss: LossWeights,
    pub features: FeatureConfig,
    pub fusion: FusionConfig,
    pub refine: RefineSettings,
    pub eval: EvalSettings,
    pub gradcheck: GradcheckSettings,
}

/// Published values of the keys that have one.
const PUBLISHED_DEFAULTS: &[(&str, &str, &str)] = &[
    ("depth", "d_min", "425"),
    ("depth", "d_max", "935"),
    ("depth", "count", "192"),
    ("loss", "gamma1", "1"),
    ("loss", "gamma2", "1"),
    ("loss", "lambda1", "0.8"),
    ("loss", "lambda2", "0.2"),
    ("loss", "lambda3", "0.067"),
    ("loss", "beta1", "0.2"),
    ("loss", "beta2", "0.8"),
    ("loss", "beta3", "0.4"),
    ("loss", "alpha1", "0.1"),
    ("loss", "alpha2", "0.5"),
    ("loss", "alpha3", "0.5"),
    ("fusion", "photometric_threshold", "0.6"),
];

fn list_string(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl PipelineConfig {
    pub fn from_ini(ini: &Ini) -> Result<Self> {
        check_sections(ini, |s| {
            matches!(s, "depth" | "loss" | "features" | "fusion" | "refine" | "eval" | "gradcheck")
        })?;
        let d = DepthConfig::default();
        let mut r = Reader::new(ini, "depth");
        let depth = DepthConfig {
            d_min: r.get("d_min", d.d_min)?,
            d_max: r.get("d_max", d.d_max)?,
            count: r.get("count", d.count)?,
            level: r.get("level", d.level)?,
            temperature: r.get("temperature", d.temperature)?,
            regularize_radius: r.get("regularize_radius", d.regularize_radius)?,
            regularize_passes: r.get("regularize_passes", d.regularize_passes)?,
            invalid_cost: r.get("invalid_cost", d.invalid_cost)?,
            probability_window: r.get("probability_window", d.probability_window)?,
            min_coverage: r.get("min_coverage", d.min_coverage)?,
        };
        r.finish()?;

        let l = LossWeights::default();
        let mut r = Reader::new(ini, "loss");
        let loss = LossWeights {
            gamma1: r.get("gamma1", l.gamma1)?,
            gamma2: r.get("gamma2", l.gamma2)?,
            lambda1: r.get("lambda1", l.lambda1)?,
            lambda2: r.get("lambda2", l.lambda2)?,
            lambda3: r.get("lambda3", l.lambda3)?,
            beta1: r.get("beta1", l.beta1)?,
            beta2: r.get("beta2", l.beta2)?,
            beta3: r.get("beta3", l.beta3)?,
            alpha1: r.get("alpha1", l.alpha1)?,
            alpha2: r.get("alpha2", l.alpha2)?,
            alpha3: r.get("alpha3", l.alpha3)?,
        };
        r.finish()?;

        let f = FeatureConfig::default();
        let mut r = Reader::new(ini, "features");
        let features = FeatureConfig {
            channels: r.get("channels", f.channels)?,
            window: r.get("window", f.window)?,
        };
        r.finish()?;

        let f = FusionConfig::default();
        let mut r = Reader::new(ini, "fusion");
        let fusion = FusionConfig {
            photometric_threshold: r.get("photometric_threshold", f.photometric_threshold)?,
            pixel_threshold: r.get("pixel_threshold", f.pixel_threshold)?,
            relative_depth_threshold: r.get("relative_depth_threshold", f.relative_depth_threshold)?,
            min_views: r.get("min_views", f.min_views)?,
        };
        r.finish()?;

        let f = RefineSettings::default();
        let mut r = Reader::new(ini, "refine");
        let refine = RefineSettings {
            step: r.get("step", f.step)?,
            max_iterations: r.get("max_iterations", f.max_iterations)?,
            tolerance: r.get("tolerance", f.tolerance)?,
            nd_iterations: r.get("nd_iterations", f.nd_iterations)?,
        };
        r.finish()?;

        let f = EvalSettings::default();
        let mut r = Reader::new(ini, "eval");
        let eval = EvalSettings {
            max_distance: r.get("max_distance", f.max_distance)?,
            thresholds: r.list("thresholds")?.unwrap_or(f.thresholds),
        };
        r.finish()?;

        let f = GradcheckSettings::default();
        let mut r = Reader::new(ini, "gradcheck");
        let gradcheck = GradcheckSettings {
            step: r.get("step", f.step)?,
            size: r.get("size", f.size)?,
            samples: r.get("samples", f.samples)?,
        };
        r.finish()?;

        let cfg = PipelineConfig {
            depth,
            loss,
            features,
            fusion,
            refine,
            eval,
            gradcheck,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_ini(&Ini::read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.depth;
        self.range()?;
        if d.count < 2 {
            return Err(MvsError::Config("depth.count must be at least 2".into()));
        }
        if !(1..=3).contains(&d.level) {
            return Err(MvsError::Config(format!("depth.level must be 1, 2 or 3, got {}", d.level)));
        }
        if !(d.temperature > 0.0) {
            return Err(MvsError::Config("depth.temperature must be positive".into()));
        }
        if d.probability_window == 0 {
            return Err(MvsError::Config("depth.probability_window must be positive".into()));
        }
        if !(d.min_coverage > 0.0 && d.min_coverage <= 1.0) {
            return Err(MvsError::Config("depth.min_coverage must be in (0, 1]".into()));
        }
        self.loss.validate()?;
        self.features.validate()?;
        self.fusion.validate()?;
        if !(self.refine.step > 0.0) || !(self.refine.tolerance > 0.0) || self.refine.max_iterations == 0 {
            return Err(MvsError::Config("refine.step, refine.tolerance and refine.max_iterations must be positive".into()));
        }
        if !(self.eval.max_distance > 0.0) {
            return Err(MvsError::Config("eval.max_distance must be positive".into()));
        }
        if !(self.gradcheck.step > 0.0) || self.gradcheck.size < 8 || self.gradcheck.samples == 0 {
            return Err(MvsError::Config(
                "gradcheck.step must be positive, gradcheck.size >= 8, gradcheck.samples >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn range(&self) -> Result<DepthRange> {
        DepthRange::new(self.depth.d_min, self.depth.d_max)
            .map_err(|e| MvsError::Config(format!("depth range: {e}")))
    }

    fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let d = &self.depth;
        let l = &self.loss;
        let f = &self.fusion;
        let r = &self.refine;
        let g = &self.gradcheck;
        vec![
            ("depth", "d_min", d.d_min.to_string()),
            ("depth", "d_max", d.d_max.to_string()),
            ("depth", "count", d.count.to_string()),
            ("depth", "level", d.level.to_string()),
            ("depth", "temperature", d.temperature.to_string()),
            ("depth", "regularize_radius", d.regularize_radius.to_string()),
            ("depth", "regularize_passes", d.regularize_passes.to_string()),
            ("depth", "invalid_cost", d.invalid_cost.to_string()),
            ("depth", "probability_window", d.probability_window.to_string()),
            ("depth", "min_coverage", d.min_coverage.to_string()),
            ("loss", "gamma1", l.gamma1.to_string()),
            ("loss", "gamma2", l.gamma2.to_string()),
            ("loss", "lambda1", l.lambda1.to_string()),
            ("loss", "lambda2", l.lambda2.to_string()),
            ("loss", "lambda3", l.lambda3.to_string()),
            ("loss", "beta1", l.beta1.to_string()),
            ("loss", "beta2", l.beta2.to_string()),
            ("loss", "beta3", l.beta3.to_string()),
            ("loss", "alpha1", l.alpha1.to_string()),
            ("loss", "alpha2", l.alpha2.to_string()),
            ("loss", "alpha3", l.alpha3.to_string()),
            ("features", "channels", self.features.channels.to_string()),
            ("features", "window", self.features.window.to_string()),
            ("fusion", "photometric_threshold", f.photometric_threshold.to_string()),
            ("fusion", "pixel_threshold", f.pixel_threshold.to_string()),
            ("fusion", "relative_depth_threshold", f.relative_depth_threshold.to_string()),
            ("fusion", "min_views", f.min_views.to_string()),
            ("refine", "step", r.step.to_string()),
            ("refine", "max_iterations", r.max_iterations.to_string()),
            ("refine", "tolerance", r.tolerance.to_string()),
            ("refine", "nd_iterations", r.nd_iterations.to_string()),
            ("eval", "max_distance", self.eval.max_distance.to_string()),
            ("eval", "thresholds", list_string(&self.eval.thresholds)),
            ("gradcheck", "step", g.step.to_string()),
            ("gradcheck", "size", g.size.to_string()),
            ("gradcheck", "samples", g.samples.to_string()),
        ]
    }

    /// The effective configuration as a re-readable file. Keys without a
    /// published value carry `# substituted`; published keys set to another
    /// value carry `# overridden`.
    pub fn effective_dump(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (sec, key, value) in self.entries() {
            if sec != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{sec}]");
                current = sec;
            }
            let published = PUBLISHED_DEFAULTS
                .iter()
                .find(|(s, k, _)| *s == sec && *k == key)
                .map(|(_, _, v)| *v);
            match published {
                None => {
                    let _ = writeln!(out, "{key} = {value}  # substituted");
                }
                Some(p) if p.parse::<f64>().ok() != value.parse::<f64>().ok() => {
                    let _ = writeln!(out, "{key} = {value}  # overridden (published: {p})");
                }
                Some(_) => {
                    let _ = writeln!(out, "{key} = {value}");
                }
            }
        }
        out
    }
}

/// Cameras (and the depth range) of a scene directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCameras {
    pub views: Vec<CameraModel>,
    pub range: DepthRange,
}

fn view_index(name: &str) -> Option<usize> {
    name.strip_prefix("view")?.parse().ok()
}

fn read_views(ini: &Ini, default_size: Option<(usize, usize)>) -> Result<Vec<CameraModel>> {
    let mut indexed: Vec<(usize, CameraModel)> = Vec::new();
    for s in &ini.sections {
        let Some(i) = view_index(&s.name) else {
            continue;
        };
        let mut r = Reader::new(ini, &s.name);
        let width = match default_size {
            Some((w, _)) => r.get("width", w)?,
            None => r.require("width")?,
        };
        let height = match default_size {
            Some((_, h)) => r.get("height", h)?,
            None => r.require("height")?,
        };
        let k = CameraIntrinsics::new(
            r.require("fx")?,
            r.require("fy")?,
            r.require("cx")?,
            r.require("cy")?,
            width,
            height,
        )
        .map_err(|e| ini.err(s.line, format!("[{}]: {e}", s.name)))?;
        let t = r.vec3("translation")?.unwrap_or_else(Vector3::zeros);
        let axis_angle = r.vec3("rotation")?;
        let matrix = r.fixed::<9>("rotation_matrix")?;
        let pose = match (axis_angle, matrix) {
            (Some(_), Some(_)) => {
                return Err(ini.err(s.line, format!("[{}]: give rotation or rotation_matrix, not both", s.name)))
            }
            (Some(aa), None) => {
                let angle = aa.norm();
                let axis = if angle > 0.0 { aa / angle } else { Vector3::z() };
                RigidTransform::from_axis_angle(axis, angle, t)
            }
            (None, Some(m)) => RigidTransform::new(Matrix3::from_row_slice(&m), t)
                .map_err(|e| ini.err(s.line, format!("[{}]: {e}", s.name)))?,
            (None, None) => RigidTransform::from_translation(t),
        };
        r.finish()?;
        indexed.push((i, CameraModel::new(k, pose)));
    }
    indexed.sort_by_key(|(i, _)| *i);
    for (n, (i, _)) in indexed.iter().enumerate() {
        if *i != n {
            return Err(MvsError::Config(format!(
                "{}: views must be numbered view0, view1, ... without gaps (missing view{n})",
                ini.origin
            )));
        }
    }
    if indexed.is_empty() {
        return Err(MvsError::Config(format!("{}: no [viewN] sections", ini.origin)));
    }
    Ok(indexed.into_iter().map(|(_, c)| c).collect())
}

impl SceneCameras {
    pub fn from_ini(ini: &Ini) -> Result<Self> {
        check_sections(ini, |s| s == "range" || view_index(s).is_some())?;
        let mut r = Reader::new(ini, "range");
        let range = DepthRange::new(r.require("d_min")?, r.require("d_max")?)
            .map_err(|e| MvsError::Config(format!("{}: {e}", ini.origin)))?;
        r.finish()?;
        Ok(SceneCameras {
            views: read_views(ini, None)?,
            range,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_ini(&Ini::read(path)?)
    }

    /// Writes a file that [`SceneCameras::read`] restores exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[range]\nd_min = {}\nd_max = {}", self.range.min, self.range.max);
        for (i, c) in self.views.iter().enumerate() {
            let k = &c.intrinsics;
            let m = c.world_to_camera.rotation();
            let t = c.world_to_camera.translation();
            let rows: Vec<String> = (0..3)
                .flat_map(|r| (0..3).map(move |col| (r, col)))
                .map(|(r, col)| m[(r, col)].to_string())
                .collect();
            let _ = writeln!(
                out,
                "\n[view{i}]\nwidth = {}\nheight = {}\nfx = {}\nfy = {}\ncx = {}\ncy = {}\nrotation_matrix = {}\ntranslation = {} {} {}",
                k.width,
                k.height,
                k.fx,
                k.fy,
                k.cx,
                k.cy,
                rows.join(" "),
                t.x,
                t.y,
                t.z
            );
        }
        out
    }
}

/// Parses a scene description; relative texture paths resolve against `base`.
pub fn scene_from_ini(ini: &Ini, base: &Path) -> Result<SceneSpec> {
    check_sections(ini, |s| matches!(s, "scene" | "geometry" | "texture") || view_index(s).is_some())?;
    let mut r = Reader::new(ini, "scene");
    let width: usize = r.require("width")?;
    let height: usize = r.require("height")?;
    let range = DepthRange::new(r.get("d_min", 425.0)?, r.get("d_max", 935.0)?)
        .map_err(|e| MvsError::Config(format!("{}: {e}", ini.origin)))?;
    let noise_sigma = r.get("noise_sigma", 0.0)?;
    let seed = r.get("seed", 0u64)?;
    r.finish()?;

    let mut r = Reader::new(ini, "geometry");
    let kind = r.string("type").unwrap_or_else(|| "plane".into());
    let geometry = match kind.as_str() {
        "plane" => Geometry::Plane {
            normal: r.vec3("normal")?.unwrap_or_else(Vector3::z),
            offset: r.require("offset")?,
        },
        "sphere" => Geometry::Sphere {
            center: r
                .vec3("center")?
                .ok_or_else(|| MvsError::Config(format!("{}: missing geometry.center", ini.origin)))?,
            radius: r.require("radius")?,
        },
        other => return Err(MvsError::Config(format!("{}: unknown geometry.type {other:?}", ini.origin))),
    };
    r.finish()?;

    let mut r = Reader::new(ini, "texture");
    let kind = r.string("type").unwrap_or_else(|| "noise".into());
    let texture = match kind.as_str() {
        "checker" => Texture::Checker {
            period: r.get("period", 32.0)?,
            low: r.get("low", 0.2)?,
            high: r.get("high", 0.8)?,
        },
        "noise" => Texture::Noise {
            seed: r.get("seed", 1u64)?,
            octaves: r.get("octaves", 4u32)?,
            scale: r.get("scale", 64.0)?,
        },
        "image" => {
            let p = r
                .string("path")
                .ok_or_else(|| MvsError::Config(format!("{}: missing texture.path", ini.origin)))?;
            let p = PathBuf::from(p);
            let p = if p.is_absolute() { p } else { base.join(p) };
            Texture::Image(read_image(&p)?)
        }
        other => return Err(MvsError::Config(format!("{}: unknown texture.type {other:?}", ini.origin))),
    };
    r.finish()?;

    let spec = SceneSpec {
        geometry,
        texture,
        views: read_views(ini, Some((width, height)))?,
        range,
        noise_sigma,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn read_scene(path: &Path) -> Result<SceneSpec> {
    let ini = Ini::read(path)?;
    scene_from_ini(&ini, path.parent().unwrap_or(Path::new(".")))
}
