//! Cascade of box-refinement heads. Stage `k` refines the boxes produced by
//! stage `k - 1`, with the proposals themselves acting as stage 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// Center shift (in units of the box size) and side-length scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub scale_w: f64,
    pub scale_h: f64,
}

impl BoxDelta {
    pub const IDENTITY: BoxDelta = BoxDelta {
        dx: 0.0,
        dy: 0.0,
        scale_w: 1.0,
        scale_h: 1.0,
    };

    pub fn apply(&self, b: &BBox) -> BBox {
        let (w, h) = (b.width(), b.height());
        let cx = 0.5 * (b.x_min + b.x_max) + self.dx * w;
        let cy = 0.5 * (b.y_min + b.y_max) + self.dy * h;
        let (hw, hh) = (0.5 * w * self.scale_w, 0.5 * h * self.scale_h);
        BBox {
            x_min: cx - hw,
            y_min: cy - hh,
            x_max: cx + hw,
            y_max: cy + hh,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSpec {
    pub heads: Vec<BoxDelta>,
    /// Training-time matching threshold of each head, strictly increasing.
    pub iou_thresholds: Vec<f64>,
}

impl CascadeSpec {
    pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.5, 0.6, 0.7];

    pub fn identity() -> Self {
        CascadeSpec {
            heads: vec![BoxDelta::IDENTITY; 3],
            iou_thresholds: Self::DEFAULT_THRESHOLDS.to_vec(),
        }
    }

    /// Three heads with small random shifts (|d| <= 0.05) and scales in [0.95, 1.05].
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = (0..3)
            .map(|_| BoxDelta {
                dx: rng.gen_range(-0.05..=0.05),
                dy: rng.gen_range(-0.05..=0.05),
                scale_w: rng.gen_range(0.95..=1.05),
                scale_h: rng.gen_range(0.95..=1.05),
            })
            .collect();
        CascadeSpec {
            heads,
            iou_thresholds: Self::DEFAULT_THRESHOLDS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads.len() != self.iou_thresholds.len() {
            return Err(Error::config("iou_thresholds", "need one threshold per head"));
        }
        if self.iou_thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("iou_thresholds", "must be strictly increasing"));
        }
        if self
            .heads
            .iter()
            .any(|h| !(h.scale_w >= 0.0 && h.scale_h >= 0.0 && h.dx.is_finite() && h.dy.is_finite()))
        {
            return Err(Error::config("heads", "scales must be >= 0 and shifts finite"));
        }
        Ok(())
    }
}

/// Returns, for every proposal, the box produced by each head in order.
pub fn cascade_refine(proposals: &[BBox], spec: &CascadeSpec) -> Result<Vec<Vec<BBox>>> {
    spec.validate()?;
    proposals
        .iter()
        .map(|p| {
            p.validate()?;
            let mut current = *p;
            Ok(spec
                .heads
                .iter()
                .map(|h| {
                    current = h.apply(&current);
                    current
                })
                .collect())
        })
        .collect()
}

/// Whether each stage's box would be a positive for that stage's head, i.e.
/// overlaps some ground-truth box by at least the head's threshold.
pub fn stage_positives(refined: &[Vec<BBox>], gts: &[BBox], spec: &CascadeSpec) -> Vec<Vec<bool>> {
    refined
        .iter()
        .map(|stages| {
            stages
                .iter()
                .zip(&spec.iou_thresholds)
                .map(|(b, &t)| gts.iter().any(|g| iou(b, g) >= t))
                .collect()
        })
        .collect()
}
