//! Learning coefficient dynamics from smoothed trajectories: change-point
//! detection, dynamics classification and one-step-prediction scoring.

use serde::{Deserialize, Serialize};

use crate::design::Dynamics;
use crate::dlm::{kalman_filter, StateSpace};
use crate::error::Result;

fn default_min_seg() -> usize {
    30
}
fn default_window() -> usize {
    60
}
fn default_split() -> f64 {
    3.0
}
fn default_invariance() -> f64 {
    2.0
}

/// Thresholds for segmentation and classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureOptions {
    /// Minimum segment length.
    #[serde(default = "default_min_seg")]
    pub min_seg: usize,
    /// Width of each flanking window in the split statistic. Windows shrink
    /// near the ends of the interval being split, never below `min_seg`.
    #[serde(default = "default_window")]
    pub window: usize,
    /// A split is accepted when the jump exceeds this many pooled posterior SDs.
    #[serde(default = "default_split")]
    pub split_threshold: f64,
    /// A path is flat when its range is below this many average posterior SDs.
    #[serde(default = "default_invariance")]
    pub invariance_threshold: f64,
    /// Allow the `ar` verdict.
    #[serde(default)]
    pub allow_ar: bool,
}

impl Default for StructureOptions {
    fn default() -> Self {
        Self {
            min_seg: default_min_seg(),
            window: default_window(),
            split_threshold: default_split(),
            invariance_threshold: default_invariance(),
            allow_ar: false,
        }
    }
}

/// Verdict for one coefficient and the statistics behind it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsClassification {
    pub dynamics: Dynamics,
    /// Range of the smoothed mean path.
    pub variation: f64,
    /// Average posterior standard deviation along the path.
    pub mean_sd: f64,
    /// Change points found by segmentation (0-based start of each new segment).
    pub change_points: Vec<usize>,
    /// Largest range inside a trimmed segment.
    pub segment_variation: f64,
}

struct Prefix {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl Prefix {
    fn new(means: &[f64], sds: &[f64]) -> Self {
        let mut mean = vec![0.0; means.len() + 1];
        let mut var = vec![0.0; means.len() + 1];
        for i in 0..means.len() {
            mean[i + 1] = mean[i] + means[i];
            var[i + 1] = var[i] + sds[i] * sds[i];
        }
        Self { mean, var }
    }

    fn avg(v: &[f64], lo: usize, hi: usize) -> f64 {
        (v[hi] - v[lo]) / (hi - lo) as f64
    }
}

/// Binary segmentation of a smoothed mean path. Each returned value is the
/// 0-based index of the first point of a new segment, which equals the
/// 1-based index of the last point of the previous one.
pub fn detect_change_points(means: &[f64], sds: &[f64], opts: &StructureOptions) -> Vec<usize> {
    assert_eq!(means.len(), sds.len(), "mean and sd paths differ in length");
    let prefix = Prefix::new(means, sds);
    let mut found = Vec::new();
    split(&prefix, 0, means.len(), opts, &mut found);
    found.sort_unstable();
    found
}

fn split(p: &Prefix, lo: usize, hi: usize, opts: &StructureOptions, out: &mut Vec<usize>) {
    let m = opts.min_seg.max(1);
    if hi - lo < 2 * m {
        return;
    }
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for k in lo + m..=hi - m {
        let w = opts.window.max(m).min(k - lo).min(hi - k);
        let diff = (Prefix::avg(&p.mean, k, k + w) - Prefix::avg(&p.mean, k - w, k)).abs();
        let pooled = Prefix::avg(&p.var, k - w, k + w).max(0.0).sqrt();
        let stat = if pooled > 0.0 {
            diff / pooled
        } else if diff > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        // Near-ties resolve to the earliest index so that rounding cannot
        // move the split.
        if best.is_none_or(|(_, s, _, _)| stat > s * (1.0 + 1e-9) && stat > s + 1e-12) {
            best = Some((k, stat, diff, pooled));
        }
    }
    if let Some((k, _, diff, pooled)) = best {
        if diff > opts.split_threshold * pooled {
            out.push(k);
            split(p, lo, k, opts, out);
            split(p, k, hi, opts, out);
        }
    }
}

fn range(xs: &[f64]) -> f64 {
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
    if xs.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Classify a path smoothed under a random-walk realization.
pub fn classify_dynamics(means: &[f64], sds: &[f64], opts: &StructureOptions) -> DynamicsClassification {
    let n = means.len();
    let mean_sd = if n > 0 { sds.iter().sum::<f64>() / n as f64 } else { 0.0 };
    let variation = range(means);
    let change_points = detect_change_points(means, sds, opts);
    let mut segment_variation = 0.0;

    let dynamics = if change_points.is_empty() {
        if variation < opts.invariance_threshold * mean_sd || variation == 0.0 {
            Dynamics::Invariant
        } else if opts.allow_ar {
            ar_verdict(means).unwrap_or(Dynamics::RandomWalk { variance: None })
        } else {
            Dynamics::RandomWalk { variance: None }
        }
    } else {
        let mut bounds = vec![0];
        bounds.extend(&change_points);
        bounds.push(n);
        // Smoothed random-walk paths bend towards a jump on both sides; trim
        // the transition before judging within-segment flatness.
        let trim = opts.min_seg / 3;
        let mut seg_means = Vec::new();
        let mut flat = true;
        for win in bounds.windows(2) {
            let (a, b) = (win[0] + trim, win[1] - trim);
            let seg = &means[a..b];
            let seg_sd = sds[a..b].iter().sum::<f64>() / seg.len() as f64;
            seg_means.push(seg.iter().sum::<f64>() / seg.len() as f64);
            let r = range(seg);
            segment_variation = f64::max(segment_variation, r);
            if r >= opts.invariance_threshold * seg_sd {
                flat = false;
            }
        }
        let min_jump = seg_means.windows(2).map(|p| (p[1] - p[0]).abs()).fold(f64::INFINITY, f64::min);
        if flat || segment_variation < 0.5 * min_jump {
            Dynamics::PeriodicStable { change_points: Some(change_points.clone()) }
        } else {
            Dynamics::RandomWalk { variance: None }
        }
    };
    DynamicsClassification { dynamics, variation, mean_sd, change_points, segment_variation }
}

fn ar_verdict(means: &[f64]) -> Option<Dynamics> {
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let num: f64 = means.windows(2).map(|w| (w[0] - mu) * (w[1] - mu)).sum();
    let den: f64 = means.iter().map(|x| (x - mu).powi(2)).sum();
    let phi = num / den;
    (phi.is_finite() && phi.abs() < 0.95).then(|| Dynamics::Ar { phi: vec![phi], variance: None })
}

/// Sum of squared one-step-ahead prediction errors over observed outcomes.
pub fn one_step_prediction_score(ss: &StateSpace, y: &[Option<f64>]) -> Result<f64> {
    let path = kalman_filter(ss, y)?;
    Ok(path.predicted.iter().filter_map(|p| p.innovation).map(|e| e * e).sum())
}
