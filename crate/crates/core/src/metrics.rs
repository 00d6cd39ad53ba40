//! Framewise and segmental evaluation of per-frame class predictions.
//!
//! F1@k matches predicted segments to ground-truth segments greedily in
//! temporal order: each predicted segment takes the unmatched same-class
//! ground-truth segment of highest IoU (earliest on ties) and counts as a
//! true positive when that IoU is at least k%. Threshold tests are done in
//! integer arithmetic, `100·|∩| ≥ k·|∪|`, so results are exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Overlap thresholds reported by [`evaluate`], in percent.
pub const F1_THRESHOLDS: [u32; 3] = [10, 25, 50];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub class: usize,
    /// Inclusive.
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// (intersection, union) lengths.
    pub fn overlap(&self, other: &Segment) -> (usize, usize) {
        let inter = self.end.min(other.end).saturating_sub(self.start.max(other.start));
        (inter, self.len() + other.len() - inter)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    Micro,
}

fn check_lengths(gt: &[usize], pred: &[usize]) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::shape(format!(
            "ground truth has {} frames but prediction has {}",
            gt.len(),
            pred.len()
        )));
    }
    Ok(())
}

pub fn framewise_accuracy(gt: &[usize], pred: &[usize]) -> Result<f64> {
    check_lengths(gt, pred)?;
    if gt.is_empty() {
        return Err(Error::arg("accuracy of an empty sequence"));
    }
    let hits = gt.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / gt.len() as f64)
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Framewise F1. Macro averages per-class F1 over classes present in either
/// sequence; micro pools the counts.
pub fn f1_frame(gt: &[usize], pred: &[usize], averaging: Averaging, num_classes: usize) -> Result<f64> {
    check_lengths(gt, pred)?;
    if let Some(bad) = gt.iter().chain(pred).find(|&&c| c >= num_classes) {
        return Err(Error::arg(format!("class id {bad} >= num_classes {num_classes}")));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&g, &p) in gt.iter().zip(pred) {
        if g == p {
            tp[g] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    Ok(match averaging {
        Averaging::Micro => f1_from_counts(tp.iter().sum(), fp.iter().sum(), fn_.iter().sum()),
        Averaging::Macro => {
            let present: Vec<usize> = (0..num_classes)
                .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
                .collect();
            if present.is_empty() {
                return Ok(0.0);
            }
            present
                .iter()
                .map(|&c| f1_from_counts(tp[c], fp[c], fn_[c]))
                .sum::<f64>()
                / present.len() as f64
        }
    })
}

/// Maximal constant runs, in order.
pub fn extract_segments(ids: &[usize]) -> Result<Vec<Segment>> {
    if ids.is_empty() {
        return Err(Error::arg("cannot segment an empty sequence"));
    }
    let mut segs = Vec::new();
    let mut start = 0;
    for t in 1..=ids.len() {
        if t == ids.len() || ids[t] != ids[start] {
            segs.push(Segment {
                class: ids[start],
                start,
                end: t,
            });
            start = t;
        }
    }
    Ok(segs)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl SegmentCounts {
    pub fn f1(&self) -> f64 {
        if self.tp + self.fp == 0 && self.fn_ == 0 {
            return 1.0;
        }
        f1_from_counts(self.tp, self.fp, self.fn_)
    }

    pub fn merge(&mut self, other: SegmentCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Segment-level TP/FP/FN at overlap threshold `k_percent`. Segments of
/// `ignore_class`, when given, are dropped from both sides.
pub fn segment_counts(
    gt: &[usize],
    pred: &[usize],
    k_percent: u32,
    ignore_class: Option<usize>,
) -> Result<SegmentCounts> {
    check_lengths(gt, pred)?;
    if k_percent > 100 {
        return Err(Error::arg(format!("overlap threshold {k_percent}% exceeds 100%")));
    }
    let keep = |s: &Segment| Some(s.class) != ignore_class;
    let gt_segs: Vec<Segment> = extract_segments(gt)?.into_iter().filter(keep).collect();
    let pred_segs: Vec<Segment> = extract_segments(pred)?.into_iter().filter(keep).collect();
    let mut matched = vec![false; gt_segs.len()];
    let mut counts = SegmentCounts::default();
    for p in &pred_segs {
        // best (inter, union) by IoU, compared as cross-multiplied fractions
        let mut best: Option<(usize, usize, usize)> = None;
        for (gi, g) in gt_segs.iter().enumerate() {
            if matched[gi] || g.class != p.class {
                continue;
            }
            let (inter, union) = p.overlap(g);
            let better = match best {
                None => true,
                Some((_, bi, bu)) => inter * bu > bi * union,
            };
            if better {
                best = Some((gi, inter, union));
            }
        }
        match best {
            Some((gi, inter, union)) if inter > 0 && 100 * inter >= k_percent as usize * union => {
                matched[gi] = true;
                counts.tp += 1;
            }
            _ => counts.fp += 1,
        }
    }
    counts.fn_ = matched.iter().filter(|m| !**m).count();
    Ok(counts)
}

pub fn f1_at_k(gt: &[usize], pred: &[usize], k_percent: u32) -> Result<f64> {
    Ok(segment_counts(gt, pred, k_percent, None)?.f1())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Class whose segments are excluded from F1@k.
    pub ignore_class: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub f1_at_10: f64,
    pub f1_at_25: f64,
    pub f1_at_50: f64,
    /// TP/FP/FN per threshold, in the order of [`F1_THRESHOLDS`].
    pub segment_counts: [SegmentCounts; 3],
    pub frames: usize,
}

impl EvalReport {
    /// CSV header matching [`EvalReport::csv_row`].
    pub const CSV_HEADER: &'static str =
        "accuracy,f1_macro,f1_micro,f1_at_10,f1_at_25,f1_at_50,tp_10,fp_10,fn_10,tp_25,fp_25,fn_25,tp_50,fp_50,fn_50,frames";

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = [self.accuracy, self.f1_macro, self.f1_micro, self.f1_at_10, self.f1_at_25, self.f1_at_50]
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        for c in &self.segment_counts {
            cols.extend([c.tp.to_string(), c.fp.to_string(), c.fn_.to_string()]);
        }
        cols.push(self.frames.to_string());
        cols.join(",")
    }
}

pub fn evaluate(gt: &[usize], pred: &[usize], num_classes: usize) -> Result<EvalReport> {
    evaluate_many(&[(gt, pred)], num_classes, &EvalOptions::default())
}

/// Evaluate a set of sequences: framewise metrics over all frames, segment
/// counts summed across sequences before computing F1@k.
pub fn evaluate_many(pairs: &[(&[usize], &[usize])], num_classes: usize, opts: &EvalOptions) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::arg("nothing to evaluate"));
    }
    let mut all_gt = Vec::new();
    let mut all_pred = Vec::new();
    let mut counts = [SegmentCounts::default(); 3];
    for (gt, pred) in pairs {
        check_lengths(gt, pred)?;
        all_gt.extend_from_slice(gt);
        all_pred.extend_from_slice(pred);
        for (c, &k) in counts.iter_mut().zip(&F1_THRESHOLDS) {
            c.merge(segment_counts(gt, pred, k, opts.ignore_class)?);
        }
    }
    Ok(EvalReport {
        accuracy: framewise_accuracy(&all_gt, &all_pred)?,
        f1_macro: f1_frame(&all_gt, &all_pred, Averaging::Macro, num_classes)?,
        f1_micro: f1_frame(&all_gt, &all_pred, Averaging::Micro, num_classes)?,
        f1_at_10: counts[0].f1(),
        f1_at_25: counts[1].f1(),
        f1_at_50: counts[2].f1(),
        segment_counts: counts,
        frames: all_gt.len(),
    })
}
