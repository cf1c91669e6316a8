//! Segmentation evaluation: confusion matrices, IoU / mIoU, sliding-window
//! planning, and overlap stitching.
//!
//! The confusion matrix counts `m[gt][pred]` over non-ignore pixels and is
//! a commutative monoid under accumulation, so per-window or per-worker
//! partials merge in any order. `IoU_i = M_ii / (M_ii + FP_i + FN_i)`;
//! classes with an empty union have no defined IoU and are excluded from
//! the mean (reported as undefined instead of polluting the average).

use crate::error::{Error, Result};
use crate::raster::Window;

/// C x C pixel counts indexed `[ground_truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    m: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            m: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.m[gt * self.num_classes + pred]
    }

    /// Total evaluated (non-ignore) pixels.
    pub fn total(&self) -> u64 {
        self.m.iter().sum()
    }

    /// Accumulates paired label planes. Pixels whose ground truth or
    /// prediction equals `ignore_id` are skipped; other out-of-range values
    /// are data errors.
    pub fn accumulate(&mut self, gt: &[u16], pred: &[u16], ignore_id: u16) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::argument(format!(
                "plane sizes differ: gt {} vs pred {}",
                gt.len(),
                pred.len()
            )));
        }
        let c = self.num_classes;
        for (&g, &p) in gt.iter().zip(pred) {
            if g == ignore_id || p == ignore_id {
                continue;
            }
            let (gi, pi) = (g as usize, p as usize);
            if gi >= c {
                return Err(Error::data(format!(
                    "ground-truth label {g} outside class range 0..{c}"
                )));
            }
            if pi >= c {
                return Err(Error::data(format!(
                    "predicted label {p} outside class range 0..{c}"
                )));
            }
            self.m[gi * c + pi] += 1;
        }
        Ok(())
    }

    /// Merges another matrix (associative, commutative, empty identity).
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.num_classes, other.num_classes);
        for (a, b) in self.m.iter_mut().zip(&other.m) {
            *a += b;
        }
    }

    /// Builds a matrix from a single plane pair.
    pub fn from_planes(
        gt: &[u16],
        pred: &[u16],
        num_classes: usize,
        ignore_id: u16,
    ) -> Result<Self> {
        let mut cm = ConfusionMatrix::new(num_classes);
        cm.accumulate(gt, pred, ignore_id)?;
        Ok(cm)
    }
}

/// Per-class IoU (None where the union is empty) and their mean over the
/// defined classes. `excluded` classes are left out of the mean but still
/// reported. Errors if no class has a defined IoU.
pub fn iou_miou(cm: &ConfusionMatrix, excluded: &[usize]) -> Result<(Vec<Option<f64>>, f64)> {
    let c = cm.num_classes();
    if c == 0 {
        return Err(Error::argument("confusion matrix has zero classes"));
    }
    let mut ious = Vec::with_capacity(c);
    for i in 0..c {
        let tp = cm.get(i, i);
        let fn_: u64 = (0..c).filter(|&j| j != i).map(|j| cm.get(i, j)).sum();
        let fp: u64 = (0..c).filter(|&k| k != i).map(|k| cm.get(k, i)).sum();
        let union = tp + fp + fn_;
        ious.push(if union == 0 {
            None
        } else {
            Some(tp as f64 / union as f64)
        });
    }
    let included: Vec<f64> = ious
        .iter()
        .enumerate()
        .filter(|(i, _)| !excluded.contains(i))
        .filter_map(|(_, v)| *v)
        .collect();
    if included.is_empty() {
        return Err(Error::Evaluation(
            "no class has a defined IoU (all unions empty or excluded)".into(),
        ));
    }
    let miou = included.iter().sum::<f64>() / included.len() as f64;
    Ok((ious, miou))
}

/// An ordered sliding-window cover of a raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub windows: Vec<Window>,
    pub win_h: usize,
    pub win_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

/// Plans sliding windows in row-major order. Start positions per axis are
/// the stride multiples that fit, plus the clamped final position when the
/// far edge is not reachable on the stride grid — so every pixel is covered
/// exactly when the window fits the raster.
pub fn plan_windows(
    height: usize,
    width: usize,
    win: (usize, usize),
    stride: (usize, usize),
) -> Result<WindowPlan> {
    let (win_h, win_w) = win;
    let (stride_h, stride_w) = stride;
    if win_h == 0 || win_w == 0 || stride_h == 0 || stride_w == 0 {
        return Err(Error::argument(
            "window and stride dimensions must be positive",
        ));
    }
    if win_h > height || win_w > width {
        return Err(Error::argument(format!(
            "window {win_h}x{win_w} larger than raster {height}x{width}"
        )));
    }
    // A stride beyond the window would leave uncovered gaps, breaking the
    // plan's full-coverage invariant.
    if stride_h > win_h || stride_w > win_w {
        return Err(Error::argument(format!(
            "stride {stride_h}x{stride_w} exceeds window {win_h}x{win_w}"
        )));
    }
    let rows = axis_starts(height, win_h, stride_h);
    let cols = axis_starts(width, win_w, stride_w);
    let mut windows = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            windows.push(Window::new(r, c, win_h, win_w));
        }
    }
    Ok(WindowPlan {
        windows,
        win_h,
        win_w,
        stride_h,
        stride_w,
    })
}

fn axis_starts(extent: usize, win: usize, stride: usize) -> Vec<usize> {
    let last = extent - win;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if *starts.last().unwrap() != last {
        starts.push(last);
    }
    starts
}

/// Per-window predictions fed into stitching.
#[derive(Debug, Clone, PartialEq)]
pub enum WindowPrediction {
    /// `win_h * win_w * classes` logits, channels innermost.
    Logits { classes: usize, values: Vec<f64> },
    /// `win_h * win_w` hard labels.
    Labels(Vec<u16>),
}

/// Overlap resolution policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StitchPolicy {
    /// Mean of logits over covering windows, then per-pixel argmax with
    /// lowest-class-id tie-break. Requires logit predictions.
    AvgLogits,
    /// Later windows overwrite earlier ones.
    LastWrite,
}

/// Stitches per-window predictions into a whole-scene label plane.
/// `preds[i]` corresponds to `plan.windows[i]`; a count mismatch is a
/// protocol error.
pub fn stitch(
    preds: &[WindowPrediction],
    plan: &WindowPlan,
    height: usize,
    width: usize,
    policy: StitchPolicy,
) -> Result<Vec<u16>> {
    if preds.len() != plan.windows.len() {
        return Err(Error::Protocol(format!(
            "plan has {} windows but {} predictions were supplied",
            plan.windows.len(),
            preds.len()
        )));
    }
    for win in &plan.windows {
        win.check_bounds(height, width)?;
    }
    match policy {
        StitchPolicy::LastWrite => {
            let mut out = vec![0u16; height * width];
            for (pred, win) in preds.iter().zip(&plan.windows) {
                let labels = hard_labels(pred, win)?;
                for r in 0..win.h {
                    let dst = (win.row + r) * width + win.col;
                    out[dst..dst + win.w].copy_from_slice(&labels[r * win.w..(r + 1) * win.w]);
                }
            }
            Ok(out)
        }
        StitchPolicy::AvgLogits => {
            let classes = match preds.first() {
                Some(WindowPrediction::Logits { classes, .. }) => *classes,
                Some(WindowPrediction::Labels(_)) => {
                    return Err(Error::argument(
                        "avg_logits stitching requires logit predictions",
                    ))
                }
                None => {
                    return Err(Error::Protocol("no predictions to stitch".into()));
                }
            };
            let mut sums = vec![0.0f64; height * width * classes];
            let mut cover = vec![0u32; height * width];
            for (pred, win) in preds.iter().zip(&plan.windows) {
                let values = match pred {
                    WindowPrediction::Logits { classes: c, values } => {
                        if *c != classes {
                            return Err(Error::argument(format!(
                                "window logit class count {c} differs from {classes}"
                            )));
                        }
                        if values.len() != win.h * win.w * classes {
                            return Err(Error::argument(format!(
                                "window logits have {} values, expected {}",
                                values.len(),
                                win.h * win.w * classes
                            )));
                        }
                        values
                    }
                    WindowPrediction::Labels(_) => {
                        return Err(Error::argument(
                            "avg_logits stitching requires logit predictions",
                        ))
                    }
                };
                for r in 0..win.h {
                    for c in 0..win.w {
                        let src = (r * win.w + c) * classes;
                        let px = (win.row + r) * width + win.col + c;
                        cover[px] += 1;
                        let dst = px * classes;
                        for ch in 0..classes {
                            sums[dst + ch] += values[src + ch];
                        }
                    }
                }
            }
            let mut out = vec![0u16; height * width];
            for px in 0..height * width {
                if cover[px] == 0 {
                    return Err(Error::Protocol(format!(
                        "pixel ({}, {}) is covered by no window",
                        px / width,
                        px % width
                    )));
                }
                let row = &sums[px * classes..(px + 1) * classes];
                out[px] = argmax_lowest(row) as u16;
            }
            Ok(out)
        }
    }
}

fn hard_labels(pred: &WindowPrediction, win: &Window) -> Result<Vec<u16>> {
    match pred {
        WindowPrediction::Labels(l) => {
            if l.len() != win.h * win.w {
                return Err(Error::argument(format!(
                    "window labels have {} values, expected {}",
                    l.len(),
                    win.h * win.w
                )));
            }
            Ok(l.clone())
        }
        WindowPrediction::Logits { classes, values } => {
            if values.len() != win.h * win.w * classes {
                return Err(Error::argument(format!(
                    "window logits have {} values, expected {}",
                    values.len(),
                    win.h * win.w * classes
                )));
            }
            Ok(values
                .chunks_exact(*classes)
                .map(|row| argmax_lowest(row) as u16)
                .collect())
        }
    }
}

/// Index of the maximum; exact ties resolve to the lowest class id.
fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
