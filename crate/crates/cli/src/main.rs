//! `mvskit`: synthetic scenes, depth estimation, refinement, fusion and evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use mvskit_core::camera::CameraModel;
use mvskit_core::config::{read_scene, PipelineConfig, SceneCameras};
use mvskit_core::fusion::PointCloud;
use mvskit_core::grid::{DepthMap, ImageGrid};
use mvskit_core::io::{read_image, read_pfm, read_ply, write_pfm, write_ply, write_ppm};
use mvskit_core::loss::LossBreakdown;
use mvskit_core::metrics::{cloud_metrics, depth_error_percentages_masked, MetricReport};
use mvskit_core::pipeline::{
    cloud_from_depths, estimate_depth, fuse_views, gradcheck, refine_gradient_descent, refine_normal_depth,
    build_objective, Frame,
};
use mvskit_core::scene::render_scene;

const CAMERAS_FILE: &str = "cameras.cfg";
const EFFECTIVE_CONFIG_FILE: &str = "effective_config.cfg";

#[derive(Parser, Debug)]
#[command(name = "mvskit", version, about = "Multi-view stereo toolkit on synthetic scenes")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Pipeline configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads for per-pixel work.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for image noise (`gen-scene`) or random instances (`gradcheck`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated view indices; the first is the reference.
    #[arg(long, global = true, value_delimiter = ',')]
    views: Option<Vec<usize>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a scene description into images, cameras and exact depth.
    GenScene {
        /// Scene description file.
        scene: PathBuf,
    },
    /// Plane-sweep depth and confidence for the reference view.
    Depth {
        #[arg(long)]
        scene: PathBuf,
        /// Estimate every selected view in turn, the others acting as sources.
        #[arg(long)]
        each: bool,
    },
    /// Normal-depth consistency refinement of a depth map.
    RefineNd {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        depth: PathBuf,
    },
    /// Gradient-descent refinement of a depth map against the multi-view loss.
    RefineGd {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        depth: PathBuf,
    },
    /// Every term of the multi-view loss at a given depth map.
    LossReport {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        depth: PathBuf,
    },
    /// Filter and fuse per-view depth maps into a point cloud.
    Fuse {
        #[arg(long)]
        scene: PathBuf,
        /// Directory holding `<prefix><i>.pfm` and `prob_view<i>.pfm`.
        #[arg(long)]
        depths: PathBuf,
        #[arg(long, default_value = "depth_view")]
        prefix: String,
    },
    /// Depth-error percentages and/or point-cloud accuracy and completeness.
    Eval {
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long, requires = "depth")]
        gt: Option<PathBuf>,
        /// Ignore a border band this many pixels wide.
        #[arg(long, default_value_t = 0)]
        margin: usize,
        #[arg(long)]
        cloud: Option<PathBuf>,
        /// Reference PLY; without it the cloud is compared to the scene's exact depth.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Finite-difference check of the analytic loss gradient on random instances.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        instances: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MVSKIT_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("mvskit: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = match &g.config {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    };
    info!("effective configuration:\n{}", cfg.effective_dump());
    match &cli.command {
        Command::GenScene { scene } => gen_scene(g, scene),
        Command::Depth { scene, each } => depth(g, &cfg, scene, *each),
        Command::RefineNd { scene, depth } => refine_nd(g, &cfg, scene, depth),
        Command::RefineGd { scene, depth } => refine_gd(g, &cfg, scene, depth),
        Command::LossReport { scene, depth } => loss_report(g, &cfg, scene, depth),
        Command::Fuse { scene, depths, prefix } => fuse(g, &cfg, scene, depths, prefix),
        Command::Eval {
            depth,
            gt,
            margin,
            cloud,
            reference,
            scene,
        } => eval(g, &cfg, depth.as_deref(), gt.as_deref(), *margin, cloud.as_deref(), reference.as_deref(), scene.as_deref()),
        Command::Gradcheck { instances } => run_gradcheck(g, &cfg, *instances),
    }
    .map(|ok| if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn out_dir<'a>(g: &'a Global, cfg: Option<&PipelineConfig>) -> Result<&'a Path> {
    fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display()))?;
    if let Some(cfg) = cfg {
        let p = g.out.join(EFFECTIVE_CONFIG_FILE);
        fs::write(&p, cfg.effective_dump()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(&g.out)
}

/// A rendered scene directory: cameras plus one image per view.
struct SceneDir {
    root: PathBuf,
    cameras: SceneCameras,
    images: Vec<ImageGrid>,
}

/// The float image if present, otherwise the 8-bit one.
fn view_image_path(dir: &Path, i: usize) -> Result<PathBuf> {
    ["pfm", "ppm", "png"]
        .iter()
        .map(|ext| dir.join(format!("view{i}.{ext}")))
        .find(|p| p.exists())
        .ok_or_else(|| anyhow!("{}: no image for view{i} (view{i}.pfm, .ppm or .png)", dir.display()))
}

impl SceneDir {
    fn load(dir: &Path) -> Result<Self> {
        let cameras = SceneCameras::read(&dir.join(CAMERAS_FILE))?;
        let mut images = Vec::with_capacity(cameras.views.len());
        for (i, cam) in cameras.views.iter().enumerate() {
            let p = view_image_path(dir, i)?;
            let img = if p.extension().is_some_and(|e| e == "pfm") {
                read_pfm(&p)?
            } else {
                read_image(&p)?
            };
            let k = &cam.intrinsics;
            if img.width() != k.width || img.height() != k.height {
                bail!(
                    "{}: image is {}x{} but view{i} is {}x{}",
                    p.display(),
                    img.width(),
                    img.height(),
                    k.width,
                    k.height
                );
            }
            images.push(img);
        }
        Ok(SceneDir {
            root: dir.to_path_buf(),
            cameras,
            images,
        })
    }

    fn selection(&self, views: Option<&[usize]>) -> Result<Vec<usize>> {
        let n = self.cameras.views.len();
        let sel: Vec<usize> = match views {
            Some(v) => v.to_vec(),
            None => (0..n).collect(),
        };
        for (j, &i) in sel.iter().enumerate() {
            if i >= n {
                bail!("--views: view {i} does not exist ({} has {n} views)", self.root.display());
            }
            if sel[..j].contains(&i) {
                bail!("--views: view {i} is listed twice");
            }
        }
        if sel.is_empty() {
            bail!("--views: empty selection");
        }
        Ok(sel)
    }

    fn frames(&self, order: &[usize]) -> Vec<Frame> {
        order
            .iter()
            .map(|&i| Frame {
                image: self.images[i].clone(),
                camera: self.cameras.views[i],
            })
            .collect()
    }
}

fn stereo_selection(scene: &SceneDir, g: &Global) -> Result<Vec<usize>> {
    let sel = scene.selection(g.views.as_deref())?;
    if sel.len() < 2 {
        bail!("this command needs at least two views, got {}", sel.len());
    }
    Ok(sel)
}

fn check_range(cfg: &PipelineConfig, scene: &SceneDir) {
    let (a, b) = (cfg.range(), scene.cameras.range);
    if let Ok(a) = a {
        if a != b {
            log::warn!(
                "configured depth range [{}, {}] differs from the scene's [{}, {}]",
                a.min,
                a.max,
                b.min,
                b.max
            );
        }
    }
}

fn gen_scene(g: &Global, path: &Path) -> Result<bool> {
    let mut spec = read_scene(path)?;
    if let Some(s) = g.seed {
        spec.seed = s;
    }
    let views = render_scene(&spec)?;
    let out = out_dir(g, None)?;
    for (i, v) in views.iter().enumerate() {
        write_ppm(&out.join(format!("view{i}.ppm")), &v.image)?;
        write_pfm(&out.join(format!("view{i}.pfm")), &v.image)?;
        write_pfm(&out.join(format!("gt_depth_view{i}.pfm")), &v.depth)?;
    }
    let cams = SceneCameras {
        views: spec.views.clone(),
        range: spec.range,
    };
    let p = out.join(CAMERAS_FILE);
    fs::write(&p, cams.to_text()).with_context(|| format!("writing {}", p.display()))?;
    println!("rendered {} views into {}", views.len(), out.display());
    Ok(true)
}

fn depth(g: &Global, cfg: &PipelineConfig, scene: &Path, each: bool) -> Result<bool> {
    let scene = SceneDir::load(scene)?;
    check_range(cfg, &scene);
    let sel = stereo_selection(&scene, g)?;
    let out = out_dir(g, Some(cfg))?;
    let refs: Vec<usize> = if each { sel.clone() } else { vec![sel[0]] };
    for &r in &refs {
        let mut order = vec![r];
        order.extend(sel.iter().copied().filter(|&i| i != r));
        let est = estimate_depth(&scene.frames(&order), cfg)?;
        write_pfm(&out.join(format!("depth_view{r}.pfm")), &est.depth)?;
        write_pfm(&out.join(format!("prob_view{r}.pfm")), &est.probability)?;
        println!("view {r}: {} of {} pixels covered", est.coverage.count(), est.depth.pixel_count());
    }
    Ok(true)
}

fn read_reference_depth(path: &Path, cam: &CameraModel) -> Result<DepthMap> {
    let d = read_pfm(path)?;
    let k = &cam.intrinsics;
    if d.channels() != 1 || d.width() != k.width || d.height() != k.height {
        bail!(
            "{}: expected a {}x{} single-channel depth map, found {}x{}x{}",
            path.display(),
            k.width,
            k.height,
            d.width(),
            d.height(),
            d.channels()
        );
    }
    Ok(d)
}

fn refine_nd(g: &Global, cfg: &PipelineConfig, scene: &Path, depth: &Path) -> Result<bool> {
    let scene = SceneDir::load(scene)?;
    let sel = scene.selection(g.views.as_deref())?;
    let r = sel[0];
    let frame = &scene.frames(&[r])[0];
    let d = read_reference_depth(depth, &frame.camera)?;
    let refined = refine_normal_depth(&d, frame, cfg)?;
    let out = out_dir(g, Some(cfg))?;
    write_pfm(&out.join(format!("depth_nd_view{r}.pfm")), &refined)?;
    Ok(true)
}

fn refine_gd(g: &Global, cfg: &PipelineConfig, scene: &Path, depth: &Path) -> Result<bool> {
    let scene = SceneDir::load(scene)?;
    check_range(cfg, &scene);
    let sel = stereo_selection(&scene, g)?;
    let r = sel[0];
    let frames = scene.frames(&sel);
    let d = read_reference_depth(depth, &frames[0].camera)?;
    let res = refine_gradient_descent(&d, &frames, cfg)?;
    let out = out_dir(g, Some(cfg))?;
    write_pfm(&out.join(format!("depth_gd_view{r}.pfm")), &res.depth)?;
    let mut trace = String::new();
    for (i, l) in res.trace.iter().enumerate() {
        let _ = writeln!(trace, "{i} {l:e}");
    }
    let p = out.join(format!("trace_gd_view{r}.txt"));
    fs::write(&p, trace).with_context(|| format!("writing {}", p.display()))?;
    println!(
        "view {r}: loss {:e} -> {:e} in {} steps ({:?})",
        res.trace.first().copied().unwrap_or(f64::NAN),
        res.trace.last().copied().unwrap_or(f64::NAN),
        res.trace.len().saturating_sub(1),
        res.stop
    );
    Ok(true)
}

fn breakdown_text(b: &LossBreakdown) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "photo = {:e}", b.photo);
    let _ = writeln!(s, "ssim = {:e}", b.ssim);
    let _ = writeln!(s, "smooth = {:e}", b.smooth);
    let _ = writeln!(s, "pixel = {:e}", b.pixel);
    for (i, f) in b.feature_per_scale.iter().enumerate() {
        let _ = writeln!(s, "feature_scale{} = {:e}", i + 1, f);
    }
    let _ = writeln!(s, "feature = {:e}", b.feature);
    let _ = writeln!(s, "total = {:e}", b.total);
    let _ = writeln!(s, "valid_pixels = {}", b.valid_pixel_count);
    let _ = writeln!(s, "total_pixels = {}", b.total_pixel_count);
    for (i, v) in b.views.iter().enumerate() {
        let _ = writeln!(
            s,
            "source{} = photo {:e} ssim {:e} smooth {:e} pixel {:e} feature {:e} valid {}",
            i + 1,
            v.photo,
            v.ssim,
            v.smooth,
            v.pixel,
            v.feature,
            v.valid_pixels
        );
    }
    s
}

fn loss_report(g: &Global, cfg: &PipelineConfig, scene: &Path, depth: &Path) -> Result<bool> {
    let scene = SceneDir::load(scene)?;
    check_range(cfg, &scene);
    let sel = stereo_selection(&scene, g)?;
    let frames = scene.frames(&sel);
    let d = read_reference_depth(depth, &frames[0].camera)?;
    let b = build_objective(&frames, cfg)?.evaluate(&d)?;
    let text = breakdown_text(&b);
    print!("{text}");
    let out = out_dir(g, Some(cfg))?;
    let p = out.join("loss_report.txt");
    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
    Ok(true)
}

fn fuse(g: &Global, cfg: &PipelineConfig, scene: &Path, depths: &Path, prefix: &str) -> Result<bool> {
    let scene = SceneDir::load(scene)?;
    let sel = scene.selection(g.views.as_deref())?;
    let mut ds = Vec::new();
    let mut ps = Vec::new();
    for &i in &sel {
        let cam = &scene.cameras.views[i];
        ds.push(read_reference_depth(&depths.join(format!("{prefix}{i}.pfm")), cam)?);
        ps.push(read_reference_depth(&depths.join(format!("prob_view{i}.pfm")), cam)?);
    }
    let cams: Vec<CameraModel> = sel.iter().map(|&i| scene.cameras.views[i]).collect();
    let imgs: Vec<ImageGrid> = sel.iter().map(|&i| scene.images[i].clone()).collect();
    let cloud = fuse_views(&ds, &ps, &cams, &imgs, cfg)?;
    let out = out_dir(g, Some(cfg))?;
    write_ply(&out.join("cloud.ply"), &cloud)?;
    println!("fused {} points", cloud.len());
    Ok(true)
}

fn gt_cloud(dir: &Path, g: &Global) -> Result<PointCloud> {
    let cameras = SceneCameras::read(&dir.join(CAMERAS_FILE))?;
    let n = cameras.views.len();
    let sel: Vec<usize> = g.views.clone().unwrap_or_else(|| (0..n).collect());
    let mut depths = Vec::new();
    let mut cams = Vec::new();
    for &i in &sel {
        let cam = cameras
            .views
            .get(i)
            .ok_or_else(|| anyhow!("--views: view {i} does not exist in {}", dir.display()))?;
        depths.push(read_reference_depth(&dir.join(format!("gt_depth_view{i}.pfm")), cam)?);
        cams.push(*cam);
    }
    Ok(cloud_from_depths(&depths, &cams)?)
}

#[allow(clippy::too_many_arguments)]
fn eval(
    g: &Global,
    cfg: &PipelineConfig,
    depth: Option<&Path>,
    gt: Option<&Path>,
    margin: usize,
    cloud: Option<&Path>,
    reference: Option<&Path>,
    scene: Option<&Path>,
) -> Result<bool> {
    let mut report = MetricReport::default();
    if let Some(dp) = depth {
        let gt = gt.ok_or_else(|| anyhow!("--depth needs --gt"))?;
        let est = read_pfm(dp)?;
        let truth = read_pfm(gt)?;
        let (w, h) = (est.width(), est.height());
        let keep = |x: usize, y: usize| x >= margin && y >= margin && x + margin < w && y + margin < h;
        report.depth = Some(
            depth_error_percentages_masked(&est, &truth, &cfg.eval.thresholds, keep)
                .with_context(|| format!("comparing {} with {}", dp.display(), gt.display()))?,
        );
    }
    if let Some(cp) = cloud {
        let est = read_ply(cp)?;
        let truth = match (reference, scene) {
            (Some(r), _) => read_ply(r)?,
            (None, Some(s)) => gt_cloud(s, g)?,
            (None, None) => bail!("--cloud needs --reference or --scene"),
        };
        report.cloud = Some(cloud_metrics(&est, &truth, cfg.eval.max_distance)?);
    }
    if report.depth.is_none() && report.cloud.is_none() {
        bail!("nothing to evaluate: give --depth/--gt and/or --cloud");
    }
    let mut text = String::new();
    if let Some(d) = &report.depth {
        for (t, p) in d.thresholds.iter().zip(&d.percentages) {
            let _ = writeln!(text, "depth_below_{t}mm = {p:.4}");
        }
        let _ = writeln!(text, "depth_pixels = {}", d.valid_pixels);
    }
    if let Some(c) = &report.cloud {
        let _ = writeln!(text, "accuracy = {:.6}", c.accuracy);
        let _ = writeln!(text, "completeness = {:.6}", c.completeness);
        let _ = writeln!(text, "overall = {:.6}", c.overall);
    }
    print!("{text}");
    if g.out != Path::new(".") {
        let out = out_dir(g, Some(cfg))?;
        let p = out.join("eval.txt");
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(true)
}

fn run_gradcheck(g: &Global, cfg: &PipelineConfig, instances: u64) -> Result<bool> {
    let seed = g.seed.unwrap_or(0);
    let mut max_err: f64 = 0.0;
    let mut mean_sum = 0.0;
    for s in seed..seed + instances.max(1) {
        let r = gradcheck(s, cfg)?;
        println!(
            "instance {s}: max relative error {:e}, mean {:e}, {} samples, {} excluded",
            r.max_relative_error,
            r.mean_relative_error,
            r.samples.len(),
            r.excluded()
        );
        if r.admissible() == 0 {
            bail!("instance {s}: every sample crossed a sampling cell, nothing was checked");
        }
        max_err = max_err.max(r.max_relative_error);
        mean_sum += r.mean_relative_error;
    }
    let mean = mean_sum / instances.max(1) as f64;
    let ok = max_err < 1e-3 && mean < 1e-4;
    println!("max relative error = {max_err:e}");
    println!("mean relative error = {mean:e}");
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}
