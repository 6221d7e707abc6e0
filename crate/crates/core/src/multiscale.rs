//! Multi-scale resize planning and test-time fusion.
//!
//! Each scale resizes the image so its short side hits a target, unless that
//! would push the long side past the cap, in which case the long side is
//! pinned to the cap instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clip, BBox, Detection, ImageSize};
use crate::postprocess::{soft_nms, SoftNmsConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalePlan {
    pub short_side_targets: Vec<u32>,
    pub max_long_side: u32,
}

impl Default for ScalePlan {
    fn default() -> Self {
        default_plan()
    }
}

/// Short sides 800..=1100 in steps of 100 under a 1333 long-side cap.
pub fn default_plan() -> ScalePlan {
    ScalePlan {
        short_side_targets: vec![800, 900, 1000, 1100],
        max_long_side: 1333,
    }
}

impl ScalePlan {
    pub fn validate(&self) -> Result<()> {
        if self.max_long_side == 0 {
            return Err(Error::config("max_long_side", "must be positive"));
        }
        if self.short_side_targets.is_empty() {
            return Err(Error::config("short_side_targets", "must not be empty"));
        }
        if self.short_side_targets.contains(&0) {
            return Err(Error::config("short_side_targets", "targets must be positive"));
        }
        if self.short_side_targets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("short_side_targets", "must be strictly increasing"));
        }
        if let Some(t) = self.short_side_targets.iter().find(|t| **t > self.max_long_side) {
            return Err(Error::config(
                "short_side_targets",
                format!("target {t} exceeds max_long_side {}", self.max_long_side),
            ));
        }
        Ok(())
    }

    /// `(target, factor, resized size)` for every scale of the plan.
    pub fn resolve(&self, size: ImageSize) -> Result<Vec<ResolvedScale>> {
        self.validate()?;
        Ok(self
            .short_side_targets
            .iter()
            .map(|&target| {
                let factor = resize_factor(size, target, self.max_long_side);
                ResolvedScale {
                    target,
                    factor,
                    size: resized_size(size, factor),
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedScale {
    pub target: u32,
    pub factor: f64,
    pub size: ImageSize,
}

pub fn resize_factor(size: ImageSize, target_short: u32, max_long: u32) -> f64 {
    let by_short = f64::from(target_short) / f64::from(size.short_side());
    let by_long = f64::from(max_long) / f64::from(size.long_side());
    by_short.min(by_long)
}

/// Dimensions after scaling by `factor`, rounded half-to-even, at least 1.
pub fn resized_size(size: ImageSize, factor: f64) -> ImageSize {
    let scale = |d: u32| (f64::from(d) * factor).round_ties_even().max(1.0) as u32;
    ImageSize {
        width: scale(size.width),
        height: scale(size.height),
    }
}

fn check_factor(factor: f64) -> Result<()> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidInput(format!("scale factor must be positive, got {factor}")));
    }
    Ok(())
}

pub fn scale_boxes(boxes: &[BBox], factor: f64) -> Result<Vec<BBox>> {
    check_factor(factor)?;
    Ok(boxes.iter().map(|b| b.scaled(factor)).collect())
}

/// Inverse of [`scale_boxes`]: divides every coordinate by `factor`.
pub fn unscale_boxes(boxes: &[BBox], factor: f64) -> Result<Vec<BBox>> {
    check_factor(factor)?;
    Ok(boxes.iter().map(|b| unscale(b, factor)).collect())
}

fn unscale(b: &BBox, factor: f64) -> BBox {
    BBox {
        x_min: b.x_min / factor,
        y_min: b.y_min / factor,
        x_max: b.x_max / factor,
        y_max: b.y_max / factor,
    }
}

/// Detections produced on one resized copy of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledDetections {
    pub factor: f64,
    pub detections: Vec<Detection>,
}

/// Maps every scale's detections back to the original frame, clips them to
/// `original`, pools them and runs Soft-NMS per category.
pub fn fuse_multiscale(
    scales: &[ScaledDetections],
    original: ImageSize,
    cfg: &SoftNmsConfig,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let mut pooled = Vec::new();
    for s in scales {
        check_factor(s.factor)?;
        pooled.extend(s.detections.iter().map(|d| Detection {
            bbox: clip(&unscale(&d.bbox, s.factor), original),
            ..*d
        }));
    }
    soft_nms(&pooled, cfg)
}
