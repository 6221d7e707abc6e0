//! Per-category average precision over a set of IoU thresholds, averaged into
//! a single mAP.
//!
//! AP uses 101-point interpolation: at each recall level `r` in
//! `{0.00, 0.01, ..., 1.00}` the precision is the best precision achieved at
//! any recall `>= r`, and AP is the mean of those 101 values.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Detection, GroundTruthBox};

pub const RECALL_POINTS: usize = 101;

/// `{0.50, 0.55, ..., 0.95}`.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

/// Outcome of greedy matching for one `(image, category)` pair at one threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Indexed like the input detections.
    pub detection_tp: Vec<bool>,
    /// Indexed like the input ground truth.
    pub gt_matched: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub thresholds: Vec<f64>,
    /// category id -> AP per threshold (aligned with `thresholds`). Only
    /// categories with at least one ground-truth box appear.
    pub ap: BTreeMap<u64, Vec<f64>>,
    pub map_per_threshold: Vec<f64>,
    pub map_overall: f64,
}

impl EvalResult {
    pub fn ap_at(&self, category_id: u64, threshold_index: usize) -> Option<f64> {
        self.ap.get(&category_id).and_then(|v| v.get(threshold_index)).copied()
    }

    /// Mean AP of one category across all thresholds.
    pub fn category_map(&self, category_id: u64) -> Option<f64> {
        self.ap.get(&category_id).map(|v| mean(v))
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Detection indices in descending score order; ties keep input order.
fn score_order(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy matching: each detection, in descending score order, claims the
/// still-unmatched ground truth with the highest IoU provided that IoU is at
/// least `iou_threshold`; otherwise it is a false positive.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    iou_threshold: f64,
) -> MatchResult {
    let ious: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| gts.iter().map(|g| iou(&d.bbox, &g.bbox)).collect())
        .collect();
    let order = score_order(dets.iter().map(|d| d.score));
    match_with_ious(&order, &ious, gts.len(), iou_threshold)
}

fn match_with_ious(
    order: &[usize],
    ious: &[Vec<f64>],
    n_gt: usize,
    iou_threshold: f64,
) -> MatchResult {
    let mut detection_tp = vec![false; ious.len()];
    let mut gt_matched = vec![false; n_gt];
    for &d in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, &v) in ious[d].iter().enumerate() {
            if gt_matched[g] || v < iou_threshold {
                continue;
            }
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            gt_matched[g] = true;
            detection_tp[d] = true;
        }
    }
    MatchResult {
        detection_tp,
        gt_matched,
    }
}

/// Builds the precision/recall curve from `(score, is_tp)` pairs pooled over
/// images. One point per detection, in descending score order. Empty when
/// there is no ground truth.
pub fn precision_recall_curve(pooled: &[(f64, bool)], total_gt: usize) -> Vec<PrPoint> {
    if total_gt == 0 {
        return Vec::new();
    }
    let order = score_order(pooled.iter().map(|p| p.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    order
        .into_iter()
        .map(|i| {
            if pooled[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            PrPoint {
                recall: tp as f64 / total_gt as f64,
                precision: tp as f64 / (tp + fp) as f64,
            }
        })
        .collect()
}

/// 101-point interpolated AP. An empty curve scores 0.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    // Precision envelope: best precision at this or any higher-recall point.
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let total: f64 = (0..RECALL_POINTS)
        .map(|k| {
            let r = k as f64 / 100.0;
            // Recall is non-decreasing along the curve.
            let first = curve.partition_point(|p| p.recall < r);
            envelope.get(first).copied().unwrap_or(0.0)
        })
        .sum();
    total / RECALL_POINTS as f64
}

pub fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::config("thresholds", "must not be empty"));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::config("thresholds", format!("{t} is outside (0, 1)")));
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("thresholds", "must be strictly increasing"));
    }
    Ok(())
}

/// Evaluates detections against ground truth at every threshold.
///
/// Only categories that have ground-truth boxes contribute to the mean;
/// detections of other categories are ignored. With no ground truth at all
/// every mAP is 0.
pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    thresholds: &[f64],
) -> Result<EvalResult> {
    validate_thresholds(thresholds)?;
    for d in dets {
        d.validate()?;
    }

    // Canonical order first, so results do not depend on input order.
    let mut dets = dets.to_vec();
    dets.sort_by(Detection::rank_cmp);

    let categories: BTreeSet<u64> = gts.iter().map(|g| g.category_id).collect();
    let mut gt_groups: HashMap<(u64, u64), Vec<GroundTruthBox>> = HashMap::new();
    for g in gts {
        gt_groups.entry((g.image_id, g.category_id)).or_default().push(*g);
    }
    let mut det_groups: BTreeMap<(u64, u64), Vec<(usize, Detection)>> = BTreeMap::new();
    for (rank, d) in dets.iter().enumerate() {
        if categories.contains(&d.category_id) {
            det_groups.entry((d.image_id, d.category_id)).or_default().push((rank, *d));
        }
    }

    // pooled[category][threshold] = (global rank, score, tp) over all images
    let mut pooled: BTreeMap<u64, Vec<Vec<(usize, f64, bool)>>> = categories
        .iter()
        .map(|&c| (c, vec![Vec::new(); thresholds.len()]))
        .collect();
    for (key, group) in &det_groups {
        let group_gts = gt_groups.get(key).map(Vec::as_slice).unwrap_or(&[]);
        let ious: Vec<Vec<f64>> = group
            .iter()
            .map(|(_, d)| group_gts.iter().map(|g| iou(&d.bbox, &g.bbox)).collect())
            .collect();
        // Groups inherit the canonical order, so this is the identity permutation.
        let order: Vec<usize> = (0..group.len()).collect();
        let per_t = pooled.get_mut(&key.1).expect("category present");
        for (ti, &t) in thresholds.iter().enumerate() {
            let m = match_with_ious(&order, &ious, group_gts.len(), t);
            per_t[ti].extend(
                group
                    .iter()
                    .zip(&m.detection_tp)
                    .map(|((rank, d), &tp)| (*rank, d.score, tp)),
            );
        }
    }

    let mut gt_counts: BTreeMap<u64, usize> = BTreeMap::new();
    for g in gts {
        *gt_counts.entry(g.category_id).or_default() += 1;
    }

    let ap: BTreeMap<u64, Vec<f64>> = pooled
        .into_iter()
        .map(|(c, per_t)| {
            let n_gt = gt_counts[&c];
            let aps = per_t
                .into_iter()
                .map(|mut p| {
                    // Pool in global rank order so score ties across images
                    // resolve the same way regardless of grouping.
                    p.sort_unstable_by_key(|e| e.0);
                    let p: Vec<(f64, bool)> = p.into_iter().map(|e| (e.1, e.2)).collect();
                    average_precision(&precision_recall_curve(&p, n_gt))
                })
                .collect();
            (c, aps)
        })
        .collect();

    let map_per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|ti| mean(&ap.values().map(|v| v[ti]).collect::<Vec<_>>()))
        .collect();
    let map_overall = mean(&map_per_threshold);

    Ok(EvalResult {
        thresholds: thresholds.to_vec(),
        ap,
        map_per_threshold,
        map_overall,
    })
}
