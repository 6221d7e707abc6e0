//! Greedy NMS and Soft-NMS rescoring.
//!
//! Suppression happens independently inside every `(image_id, category_id)`
//! group; detections of different categories never suppress each other.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftNmsMethod {
    /// Decay 0 above the IoU threshold, 1 otherwise.
    Hard,
    /// Decay `1 - iou` above the IoU threshold, 1 otherwise.
    Linear,
    /// Decay `exp(-iou^2 / sigma)` for every overlap.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftNmsConfig {
    pub method: SoftNmsMethod,
    /// Used by `Hard` and `Linear`.
    pub iou_threshold: f64,
    /// Used by `Gaussian`.
    pub sigma: f64,
    /// Detections rescored below this value are dropped.
    pub score_floor: f64,
}

impl Default for SoftNmsConfig {
    fn default() -> Self {
        SoftNmsConfig {
            method: SoftNmsMethod::Gaussian,
            iou_threshold: 0.5,
            sigma: 0.5,
            score_floor: 0.001,
        }
    }
}

impl SoftNmsConfig {
    pub fn hard(iou_threshold: f64) -> Self {
        SoftNmsConfig {
            method: SoftNmsMethod::Hard,
            iou_threshold,
            score_floor: 0.0,
            ..Default::default()
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        SoftNmsConfig {
            method: SoftNmsMethod::Gaussian,
            sigma,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_threshold(self.iou_threshold)?;
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma", format!("must be positive, got {}", self.sigma)));
        }
        if !(0.0..1.0).contains(&self.score_floor) {
            return Err(Error::config(
                "score_floor",
                format!("must lie in [0, 1), got {}", self.score_floor),
            ));
        }
        Ok(())
    }

    /// Multiplicative score decay for a detection overlapping a kept one.
    pub fn decay(&self, overlap: f64) -> f64 {
        match self.method {
            SoftNmsMethod::Hard if overlap > self.iou_threshold => 0.0,
            SoftNmsMethod::Linear if overlap > self.iou_threshold => 1.0 - overlap,
            SoftNmsMethod::Hard | SoftNmsMethod::Linear => 1.0,
            SoftNmsMethod::Gaussian => (-overlap * overlap / self.sigma).exp(),
        }
    }
}

fn validate_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::config("iou_threshold", format!("must lie in (0, 1], got {t}")));
    }
    Ok(())
}

fn group_by_image_category(dets: &[Detection]) -> BTreeMap<(u64, u64), Vec<Detection>> {
    let mut groups: BTreeMap<(u64, u64), Vec<Detection>> = BTreeMap::new();
    for d in dets {
        groups.entry((d.image_id, d.category_id)).or_default().push(*d);
    }
    groups
}

fn sorted(mut out: Vec<Detection>) -> Vec<Detection> {
    out.sort_by(Detection::rank_cmp);
    out
}

/// Greedy hard NMS. Any detection overlapping an already kept detection of
/// the same image and category by IoU > `iou_threshold` is removed.
pub fn standard_nms(dets: &[Detection], iou_threshold: f64) -> Result<Vec<Detection>> {
    validate_threshold(iou_threshold)?;
    let mut out = Vec::with_capacity(dets.len());
    for (_, mut group) in group_by_image_category(dets) {
        group.sort_by(Detection::rank_cmp);
        let mut kept: Vec<Detection> = Vec::new();
        for d in group {
            if kept.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_threshold) {
                kept.push(d);
            }
        }
        out.extend(kept);
    }
    Ok(sorted(out))
}

/// Soft-NMS: repeatedly keeps the best remaining detection and decays the
/// scores of the rest by their overlap with it. Boxes are never modified and
/// scores never increase. A detection is discarded once its decay factor hits
/// zero or its score falls below `score_floor`.
pub fn soft_nms(dets: &[Detection], cfg: &SoftNmsConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(dets.len());
    for (_, group) in group_by_image_category(dets) {
        out.extend(soft_nms_group(group, cfg));
    }
    Ok(sorted(out))
}

fn soft_nms_group(mut remaining: Vec<Detection>, cfg: &SoftNmsConfig) -> Vec<Detection> {
    let mut kept = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let best = remaining
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.rank_cmp(b))
            .map(|(i, _)| i)
            .expect("non-empty");
        let top = remaining.swap_remove(best);
        remaining.retain_mut(|d| {
            let decay = cfg.decay(iou(&top.bbox, &d.bbox));
            // min() guards against any rounding above the original score.
            d.score = (d.score * decay).min(d.score);
            decay > 0.0 && d.score >= cfg.score_floor
        });
        kept.push(top);
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use proptest::prelude::*;

    fn det(c: [f64; 4], score: f64) -> Detection {
        Detection::new(BBox::new(c[0], c[1], c[2], c[3]).unwrap(), 1, score, 0).unwrap()
    }

    #[test]
    fn nms_empty() {
        assert!(standard_nms(&[], 0.5).unwrap().is_empty());
        assert!(soft_nms(&[], &SoftNmsConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn nms_identical_boxes() {
        let dets = [det([0.0, 0.0, 4.0, 4.0], 0.8), det([0.0, 0.0, 4.0, 4.0], 0.9)];
        let out = standard_nms(&dets, 0.5).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
    }

    #[test]
    fn nms_three_box_trace() {
        // #2 overlaps #1 at 6/10 = 0.6 (boxes of area 8, intersection 6).
        let one = det([0.0, 0.0, 4.0, 2.0], 0.9);
        let two = det([1.0, 0.0, 5.0, 2.0], 0.8);
        let three = det([10.0, 10.0, 12.0, 12.0], 0.7);
        assert!((iou(&one.bbox, &two.bbox) - 0.6).abs() < 1e-12);
        let out = standard_nms(&[two, three, one], 0.5).unwrap();
        assert_eq!(out, vec![one, three]);
    }

    #[test]
    fn nms_rejects_bad_threshold() {
        assert!(standard_nms(&[], 0.0).is_err());
        assert!(standard_nms(&[], 1.5).is_err());
        assert!(standard_nms(&[], f64::NAN).is_err());
    }

    #[test]
    fn soft_nms_rejects_bad_config() {
        let bad = [
            SoftNmsConfig { sigma: 0.0, ..Default::default() },
            SoftNmsConfig { score_floor: 1.0, ..Default::default() },
            SoftNmsConfig { iou_threshold: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(soft_nms(&[], &cfg).is_err());
        }
    }

    #[test]
    fn soft_nms_single_detection_unchanged() {
        let d = det([1.0, 1.0, 3.0, 3.0], 0.42);
        assert_eq!(soft_nms(&[d], &SoftNmsConfig::default()).unwrap(), vec![d]);
    }

    #[test]
    fn gaussian_decay_of_identical_boxes() {
        let dets = [det([0.0, 0.0, 4.0, 4.0], 0.9), det([0.0, 0.0, 4.0, 4.0], 0.8)];
        let out = soft_nms(&dets, &SoftNmsConfig::gaussian(0.5)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].score, 0.9);
        // 0.8 * e^-2, evaluated at 40 digits.
        assert!((out[1].score - 0.108_268_226_589_290_15).abs() < 1e-12);
    }

    #[test]
    fn linear_decay() {
        let one = det([0.0, 0.0, 4.0, 2.0], 0.9);
        let two = det([1.0, 0.0, 5.0, 2.0], 0.8);
        let cfg = SoftNmsConfig {
            method: SoftNmsMethod::Linear,
            iou_threshold: 0.5,
            ..Default::default()
        };
        let out = soft_nms(&[one, two], &cfg).unwrap();
        assert!((out[1].score - 0.8 * 0.4).abs() < 1e-12);
    }

    #[test]
    fn categories_do_not_suppress_each_other() {
        let a = det([0.0, 0.0, 4.0, 4.0], 0.9);
        let b = Detection { category_id: 2, ..a };
        assert_eq!(standard_nms(&[a, b], 0.5).unwrap().len(), 2);
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        prop::collection::vec(
            (0.0..20.0f64, 0.0..20.0f64, 1.0..10.0f64, 1.0..10.0f64, 0.0..=1.0f64, 0u64..3),
            0..12,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h, s, c)| {
                    Detection::new(BBox::from_xywh(x, y, w, h).unwrap(), c, s, 0).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn hard_soft_nms_matches_standard(dets in arb_dets(), t in 0.05..=1.0f64) {
            prop_assert_eq!(soft_nms(&dets, &SoftNmsConfig::hard(t)).unwrap(), standard_nms(&dets, t).unwrap());
        }

        #[test]
        fn standard_nms_output_pairwise_separated(dets in arb_dets(), t in 0.05..=1.0f64) {
            let out = standard_nms(&dets, t).unwrap();
            prop_assert!(out.len() <= dets.len());
            for (i, a) in out.iter().enumerate() {
                prop_assert!(dets.contains(a));
                for b in &out[i + 1..] {
                    prop_assert!(a.score >= b.score);
                    if a.category_id == b.category_id {
                        prop_assert!(iou(&a.bbox, &b.bbox) <= t);
                    }
                }
            }
        }

        #[test]
        fn soft_nms_never_raises_scores(dets in arb_dets(), sigma in 0.05..2.0f64) {
            let out = soft_nms(&dets, &SoftNmsConfig::gaussian(sigma)).unwrap();
            prop_assert!(out.len() <= dets.len());
            for d in &out {
                prop_assert!(dets.iter().any(|o| o.bbox == d.bbox
                    && o.category_id == d.category_id
                    && o.score >= d.score));
            }
        }

        #[test]
        fn permutation_invariant(dets in arb_dets(), seed in any::<u64>()) {
            let mut shuffled = dets.clone();
            let n = shuffled.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            let cfg = SoftNmsConfig::default();
            prop_assert_eq!(soft_nms(&dets, &cfg).unwrap(), soft_nms(&shuffled, &cfg).unwrap());
            prop_assert_eq!(standard_nms(&dets, 0.5).unwrap(), standard_nms(&shuffled, 0.5).unwrap());
        }
    }
}
