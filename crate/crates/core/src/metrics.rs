//! Point-cloud accuracy/completeness and depth-error percentages.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{MvsError, Result};
use crate::fusion::PointCloud;
use crate::grid::DepthMap;

/// Exact nearest-neighbour queries over a fixed point set.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: None,
        };
        let mut idx: Vec<usize> = (0..points.len()).collect();
        tree.root = tree.build(&mut idx, 0);
        tree
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        let pts = &self.points;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        let point = idx[mid];
        let (lo, rest) = idx.split_at_mut(mid);
        let left = self.build(lo, depth + 1);
        let right = self.build(&mut rest[1..], depth + 1);
        self.nodes.push(Node {
            point,
            axis,
            left,
            right,
        });
        Some(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of and squared distance to the closest point.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root?, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Vector3<f64>, best: &mut (usize, f64)) {
        let n = self.nodes[node];
        let d2 = (self.points[n.point] - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && n.point < best.0) {
            *best = (n.point, d2);
        }
        let diff = q[n.axis] - self.points[n.point][n.axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if let Some(c) = near {
            self.search(c, q, best);
        }
        if let Some(c) = far {
            if diff * diff <= best.1 {
                self.search(c, q, best);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudMetrics {
    pub accuracy: f64,
    pub completeness: f64,
    pub overall: f64,
}

/// Mean clipped distance from every point of `from` to its nearest point in `to`.
fn mean_nn_distance(from: &[Vector3<f64>], to: &KdTree, max_distance: f64) -> f64 {
    let d: Vec<f64> = from
        .par_iter()
        .map(|p| {
            let (_, d2) = to.nearest(p).expect("nonempty tree");
            d2.sqrt().min(max_distance)
        })
        .collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Accuracy (estimate to reference), completeness (reference to estimate)
/// and their mean, with distances clipped at `max_distance` mm.
pub fn cloud_metrics(estimated: &PointCloud, reference: &PointCloud, max_distance: f64) -> Result<CloudMetrics> {
    if estimated.is_empty() || reference.is_empty() {
        return Err(MvsError::arg("cloud metrics need two nonempty clouds"));
    }
    if !(max_distance > 0.0) {
        return Err(MvsError::Domain(format!("max distance must be positive, got {max_distance}")));
    }
    let est_tree = KdTree::new(&estimated.points);
    let ref_tree = KdTree::new(&reference.points);
    let accuracy = mean_nn_distance(&estimated.points, &ref_tree, max_distance);
    let completeness = mean_nn_distance(&reference.points, &est_tree, max_distance);
    Ok(CloudMetrics {
        accuracy,
        completeness,
        overall: (accuracy + completeness) / 2.0,
    })
}

/// Share of jointly valid pixels with `|est - gt| < t`, in percent, per threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthErrorReport {
    pub thresholds: Vec<f64>,
    pub percentages: Vec<f64>,
    pub valid_pixels: usize,
}

pub const DEFAULT_DEPTH_THRESHOLDS: [f64; 3] = [2.0, 4.0, 8.0];

pub fn depth_error_percentages(est: &DepthMap, gt: &DepthMap, thresholds: &[f64]) -> Result<DepthErrorReport> {
    depth_error_percentages_masked(est, gt, thresholds, |_, _| true)
}

/// [`depth_error_percentages`] over pixels that also pass `keep(x, y)`.
pub fn depth_error_percentages_masked<F>(
    est: &DepthMap,
    gt: &DepthMap,
    thresholds: &[f64],
    keep: F,
) -> Result<DepthErrorReport>
where
    F: Fn(usize, usize) -> bool,
{
    if !est.same_size(gt) || est.channels() != 1 || gt.channels() != 1 {
        return Err(MvsError::arg("depth maps must be single-channel and equally sized"));
    }
    let mut errors = Vec::new();
    for y in 0..est.height() {
        for x in 0..est.width() {
            if est.is_valid_depth(x, y) && gt.is_valid_depth(x, y) && keep(x, y) {
                errors.push((est.get(x, y, 0) - gt.get(x, y, 0)).abs());
            }
        }
    }
    if errors.is_empty() {
        return Err(MvsError::arg("no pixel is valid in both depth maps"));
    }
    let n = errors.len();
    let percentages = thresholds
        .iter()
        .map(|&t| 100.0 * errors.iter().filter(|&&e| e < t).count() as f64 / n as f64)
        .collect();
    Ok(DepthErrorReport {
        thresholds: thresholds.to_vec(),
        percentages,
        valid_pixels: n,
    })
}

/// Everything `eval` can report.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub cloud: Option<CloudMetrics>,
    pub depth: Option<DepthErrorReport>,
}
