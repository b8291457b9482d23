//! Depth gradients, their finite-difference check and gradient-descent refinement.

use crate::error::{MvsError, Result};
use crate::grid::{DepthMap, DepthRange, ImageGrid};
use crate::loss::MultiViewLoss;

/// A scalar objective over depth maps with an analytic gradient.
pub trait DepthObjective: Sync {
    fn value(&self, depth: &DepthMap) -> Result<f64>;

    /// Value and `d value / d depth` per pixel.
    fn value_and_gradient(&self, depth: &DepthMap) -> Result<(f64, DepthMap)>;

    /// Identifies the smooth piece of the objective that `depth` lies in.
    /// Objectives without kinks keep the default.
    fn signature(&self, _depth: &DepthMap) -> Result<u64> {
        Ok(0)
    }
}

impl DepthObjective for MultiViewLoss {
    fn value(&self, depth: &DepthMap) -> Result<f64> {
        Ok(self.evaluate(depth)?.total)
    }

    fn value_and_gradient(&self, depth: &DepthMap) -> Result<(f64, DepthMap)> {
        let (b, g) = self.evaluate_with_gradient(depth)?;
        Ok((b.total, g))
    }

    fn signature(&self, depth: &DepthMap) -> Result<u64> {
        MultiViewLoss::signature(self, depth)
    }
}

/// `d total / d depth` in 1/mm.
pub fn loss_gradient(objective: &MultiViewLoss, depth: &DepthMap) -> Result<DepthMap> {
    Ok(objective.evaluate_with_gradient(depth)?.1)
}

/// `|a - b| / max(|a|, |b|, 1e-12)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientSample {
    pub x: usize,
    pub y: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
    /// The perturbation changed a discrete choice (mask bit, bilinear cell
    /// or L1 sign), so the central difference straddles a kink.
    pub excluded: bool,
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub analytic: DepthMap,
    /// Central differences at the sampled pixels, 0 elsewhere.
    pub numeric: DepthMap,
    pub samples: Vec<GradientSample>,
    /// Over admissible samples; 0 when there are none.
    pub max_relative_error: f64,
    pub mean_relative_error: f64,
}

impl GradientReport {
    pub fn admissible(&self) -> usize {
        self.samples.iter().filter(|s| !s.excluded).count()
    }

    pub fn excluded(&self) -> usize {
        self.samples.len() - self.admissible()
    }
}

/// Compares the analytic gradient with `(f(Z + h) - f(Z - h)) / 2h` at `samples`.
pub fn finite_difference_gradient<O: DepthObjective + ?Sized>(
    objective: &O,
    depth: &DepthMap,
    step: f64,
    samples: &[(usize, usize)],
) -> Result<GradientReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(MvsError::Domain(format!("finite-difference step must be > 0, got {step}")));
    }
    let (_, analytic) = objective.value_and_gradient(depth)?;
    let base_sig = objective.signature(depth)?;
    let mut numeric = ImageGrid::new(depth.width(), depth.height(), 1);
    let mut out = Vec::with_capacity(samples.len());
    let mut probe = depth.clone();
    for &(x, y) in samples {
        if x >= depth.width() || y >= depth.height() {
            return Err(MvsError::arg(format!(
                "sample ({x}, {y}) outside {}x{} depth map",
                depth.width(),
                depth.height()
            )));
        }
        let z = depth.get(x, y, 0);
        probe.set(x, y, 0, z + step);
        let fp = objective.value(&probe)?;
        let sp = objective.signature(&probe)?;
        probe.set(x, y, 0, z - step);
        let fm = objective.value(&probe)?;
        let sm = objective.signature(&probe)?;
        probe.set(x, y, 0, z);
        let num = (fp - fm) / (2.0 * step);
        numeric.set(x, y, 0, num);
        let a = analytic.get(x, y, 0);
        out.push(GradientSample {
            x,
            y,
            analytic: a,
            numeric: num,
            relative_error: relative_error(a, num),
            excluded: sp != base_sig || sm != base_sig,
        });
    }
    let ok: Vec<f64> = out.iter().filter(|s| !s.excluded).map(|s| s.relative_error).collect();
    let max = ok.iter().copied().fold(0.0, f64::max);
    let mean = if ok.is_empty() {
        0.0
    } else {
        ok.iter().sum::<f64>() / ok.len() as f64
    };
    Ok(GradientReport {
        analytic,
        numeric,
        samples: out,
        max_relative_error: max,
        mean_relative_error: mean,
    })
}

/// Gradient-descent settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    /// Initial step in mm per unit gradient.
    pub step: f64,
    pub max_iterations: usize,
    /// Stop once an iteration lowers the loss by less than this fraction.
    pub tolerance: f64,
    pub range: DepthRange,
}

/// Largest number of step halvings tried per iteration.
pub const MAX_HALVINGS: usize = 20;

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(MvsError::Config(format!("refine.step must be > 0, got {}", self.step)));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(MvsError::Config(format!(
                "refine.tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(MvsError::Config("refine.max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    Converged,
    ZeroGradient,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct RefineResult {
    pub depth: DepthMap,
    /// Loss before the first step and after every accepted step.
    pub trace: Vec<f64>,
    pub stop: StopReason,
}

/// Backtracking gradient descent on the valid pixels of `initial`.
///
/// Each iteration starts from twice the last accepted step (capped at
/// `cfg.step`), halves it until the clamped update does not raise the loss,
/// and gives up after [`MAX_HALVINGS`] halvings.
pub fn refine_depth_gd<O: DepthObjective + ?Sized>(
    initial: &DepthMap,
    objective: &O,
    cfg: &RefineConfig,
) -> Result<RefineResult> {
    cfg.validate()?;
    let (w, h) = (initial.width(), initial.height());
    for y in 0..h {
        for x in 0..w {
            if initial.is_valid_depth(x, y) && !cfg.range.contains(initial.get(x, y, 0)) {
                return Err(MvsError::Domain(format!(
                    "initial depth {} at ({x}, {y}) outside [{}, {}]",
                    initial.get(x, y, 0),
                    cfg.range.min,
                    cfg.range.max
                )));
            }
        }
    }
    let mut depth = initial.clone();
    let (mut loss, mut grad) = objective.value_and_gradient(&depth)?;
    let mut trace = vec![loss];
    let mut step = cfg.step;
    let mut stop = StopReason::MaxIterations;
    for _ in 0..cfg.max_iterations {
        let any = (0..h).any(|y| (0..w).any(|x| initial.is_valid_depth(x, y) && grad.get(x, y, 0) != 0.0));
        if !any || loss == 0.0 {
            stop = StopReason::ZeroGradient;
            break;
        }
        let mut accepted = None;
        let mut s = step;
        for _ in 0..=MAX_HALVINGS {
            let cand = ImageGrid::from_fn(w, h, 1, |x, y, o| {
                let z = depth.get(x, y, 0);
                o[0] = if initial.is_valid_depth(x, y) {
                    (z - s * grad.get(x, y, 0)).clamp(cfg.range.min, cfg.range.max)
                } else {
                    z
                };
            });
            let l = objective.value(&cand)?;
            if l <= loss {
                accepted = Some((cand, l));
                break;
            }
            s *= 0.5;
        }
        let Some((cand, l)) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };
        let decrease = (loss - l) / loss;
        depth = cand;
        trace.push(l);
        step = (2.0 * s).min(cfg.step);
        if decrease < cfg.tolerance {
            stop = StopReason::Converged;
            break;
        }
        let next = objective.value_and_gradient(&depth)?;
        loss = next.0;
        grad = next.1;
    }
    log::debug!("gradient descent stopped after {} steps: {stop:?}", trace.len() - 1);
    Ok(RefineResult { depth, trace, stop })
}
