//! Class-distribution analysis and batch-balance diagnostics.
//!
//! Histograms count label pixels exactly (ignore pixels excluded) and merge
//! associatively, so partial sums from parallel workers can be combined in
//! any order. The softmax cross-entropy pieces are implemented as
//! diagnostics and test oracles, not as a training loop: the per-class
//! gradient is the batch-aggregated quantity `(1/B) * sum_n (p_n,i - y_n,i)`,
//! whose sign tells whether a class is being pushed up or down by the
//! current batch composition.

use crate::error::{Error, Result};

/// Exact per-class pixel counts, ignore pixels excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassHistogram {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ClassHistogram {
    pub fn new(num_classes: usize) -> Self {
        ClassHistogram {
            counts: vec![0; num_classes],
            total: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// Adds every non-ignore label in `labels`. Labels at or above the class
    /// count are a data error and name the offending value.
    pub fn accumulate(&mut self, labels: &[u16], ignore_id: u16) -> Result<()> {
        let c = self.counts.len();
        for &l in labels {
            if l == ignore_id {
                continue;
            }
            let idx = l as usize;
            if idx >= c {
                return Err(Error::data(format!(
                    "label {l} outside class range 0..{c} and not the ignore id {ignore_id}"
                )));
            }
            self.counts[idx] += 1;
            self.total += 1;
        }
        Ok(())
    }

    /// Merges a partial histogram (associative, commutative).
    pub fn merge(&mut self, other: &ClassHistogram) {
        assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    /// Share of class `c` among counted pixels; 0 for an empty histogram.
    pub fn share(&self, c: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.counts[c] as f64 / self.total as f64
        }
    }

    /// Classes whose share is strictly below `threshold`, sorted by
    /// ascending share then class id. Classes absent from the data (count 0)
    /// are included — an absent class is the extreme tail.
    pub fn tail_classes(&self, threshold: f64) -> Vec<(usize, f64)> {
        let mut tail: Vec<(usize, f64)> = (0..self.counts.len())
            .map(|c| (c, self.share(c)))
            .filter(|&(_, s)| s < threshold)
            .collect();
        tail.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        tail
    }

    /// Max class share divided by the min nonzero class share. NaN when the
    /// histogram is empty.
    pub fn imbalance_ratio(&self) -> f64 {
        if self.total == 0 {
            return f64::NAN;
        }
        let max = self.counts.iter().copied().max().unwrap_or(0);
        let min_nonzero = self
            .counts
            .iter()
            .copied()
            .filter(|&c| c > 0)
            .min()
            .unwrap_or(0);
        max as f64 / min_nonzero as f64
    }
}

/// Histogram of a label plane. Convenience over
/// [`ClassHistogram::accumulate`].
pub fn pixel_histogram(
    labels: &[u16],
    num_classes: usize,
    ignore_id: u16,
) -> Result<ClassHistogram> {
    let mut hist = ClassHistogram::new(num_classes);
    hist.accumulate(labels, ignore_id)?;
    Ok(hist)
}

/// Numerically stabilized softmax: positive, sums to 1, invariant to adding
/// a constant to all logits.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::argument("softmax over zero classes"));
    }
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN logit in softmax".to_string()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// A batch of one-hot rows. Rows that are all zero mark ignored samples.
fn validate_onehot(onehot: &[f64], b: usize, c: usize) -> Result<()> {
    if onehot.len() != b * c {
        return Err(Error::argument(format!(
            "one-hot batch has {} entries, expected {b}x{c}",
            onehot.len()
        )));
    }
    for (n, row) in onehot.chunks_exact(c).enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if !(ones == 1 && zeros == c - 1 || zeros == c) {
            return Err(Error::argument(format!(
                "row {n} is not one-hot (or all-zero for ignored samples)"
            )));
        }
    }
    Ok(())
}

/// Mean softmax cross-entropy over a `b` x `c` batch of logits plus the
/// per-class batch-aggregated gradient `(1/B) * sum_n (p_n,i - y_n,i)`.
/// Ignored samples (all-zero one-hot rows) contribute nothing.
pub fn ce_loss_and_grad(
    logits: &[f64],
    onehot: &[f64],
    b: usize,
    c: usize,
) -> Result<(f64, Vec<f64>)> {
    if logits.len() != b * c {
        return Err(Error::argument(format!(
            "logit batch has {} entries, expected {b}x{c}",
            logits.len()
        )));
    }
    validate_onehot(onehot, b, c)?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; c];
    for n in 0..b {
        let row = &logits[n * c..(n + 1) * c];
        let y = &onehot[n * c..(n + 1) * c];
        if y.iter().all(|&v| v == 0.0) {
            continue;
        }
        // log-sum-exp guard: log p = z - max - log(sum exp(z - max))
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = sum.ln();
        for i in 0..c {
            let p = (row[i] - max).exp() / sum;
            grad[i] += p - y[i];
            if y[i] == 1.0 {
                loss -= row[i] - max - log_sum;
            }
        }
    }
    let scale = 1.0 / b as f64;
    loss *= scale;
    for g in &mut grad {
        *g *= scale;
    }
    Ok((loss, grad))
}

/// Per-class residual `sum_n (p_n,i - y_n,i)` over a batch. For balanced
/// labels under uniform probabilities every entry is exactly zero, and the
/// entries always sum to zero across classes.
pub fn balance_residual(probs: &[f64], onehot: &[f64], b: usize, c: usize) -> Result<Vec<f64>> {
    if probs.len() != b * c {
        return Err(Error::argument(format!(
            "probability batch has {} entries, expected {b}x{c}",
            probs.len()
        )));
    }
    validate_onehot(onehot, b, c)?;
    for (n, row) in probs.chunks_exact(c).enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::argument(format!(
                "probability row {n} sums to {sum}, expected 1"
            )));
        }
    }
    let mut residual = vec![0.0; c];
    for n in 0..b {
        for i in 0..c {
            residual[i] += probs[n * c + i] - onehot[n * c + i];
        }
    }
    Ok(residual)
}

/// Balance diagnostics for one composed batch, evaluated under a
/// uniform-probability probe model: every counted pixel is a sample with
/// `p = 1/C`, so the residual and gradient reduce to closed forms over the
/// batch histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDiagnostics {
    /// Samples (counted pixels) in the batch.
    pub samples: u64,
    pub num_classes: usize,
    /// `sum_n (p_n,i - y_n,i)` per class under the probe model.
    pub residual: Vec<f64>,
    /// `(1/B) * sum_n (p_n,i - y_n,i)` per class under the probe model.
    pub grad: Vec<f64>,
    pub imbalance_ratio: f64,
}

impl BatchDiagnostics {
    pub fn from_histogram(hist: &ClassHistogram) -> Self {
        let c = hist.num_classes();
        let b = hist.total as f64;
        let uniform = 1.0 / c as f64;
        let residual: Vec<f64> = hist
            .counts
            .iter()
            .map(|&n| b * uniform - n as f64)
            .collect();
        let grad: Vec<f64> = if hist.total == 0 {
            vec![0.0; c]
        } else {
            hist.counts
                .iter()
                .map(|&n| uniform - n as f64 / b)
                .collect()
        };
        BatchDiagnostics {
            samples: hist.total,
            num_classes: c,
            residual,
            grad,
            imbalance_ratio: hist.imbalance_ratio(),
        }
    }
}
