//! Axis-aligned boxes and the IoU overlap measure.
//!
//! Coordinates are continuous pixel positions: a box `[x_min, y_min, x_max, y_max]`
//! covers `(x_max - x_min) * (y_max - y_min)` square pixels, with no `+1`
//! pixel-inclusive convention.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Corner-corner box in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite coordinates and inverted corners.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = self.to_array();
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite coordinate in {coords:?}")));
        }
        if self.x_max < self.x_min || self.y_max < self.y_min {
            return Err(Error::InvalidBox(format!("inverted corners in {coords:?}")));
        }
        Ok(())
    }

    /// Converts a corner+size box (`[x, y, w, h]`, the annotation format).
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if w < 0.0 || h < 0.0 {
            return Err(Error::InvalidBox(format!("negative size w={w}, h={h}")));
        }
        BBox::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [
            self.x_min,
            self.y_min,
            self.x_max - self.x_min,
            self.y_max - self.y_min,
        ]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        area(self)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    pub fn clip(&self, size: ImageSize) -> BBox {
        clip(self, size)
    }

    /// Multiplies every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> BBox {
        BBox {
            x_min: self.x_min * factor,
            y_min: self.y_min * factor,
            x_max: self.x_max * factor,
            y_max: self.y_max * factor,
        }
    }

    /// Lexicographic total order on `(x_min, y_min, x_max, y_max)`.
    pub fn lexicographic_cmp(&self, other: &BBox) -> Ordering {
        self.to_array()
            .iter()
            .zip(other.to_array().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

/// Image dimensions in pixels, both at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        Ok(ImageSize { width, height })
    }

    pub fn short_side(&self) -> u32 {
        self.width.min(self.height)
    }

    pub fn long_side(&self) -> u32 {
        self.width.max(self.height)
    }
}

/// A scored, categorized box predicted for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub category_id: u64,
    pub score: f64,
    pub image_id: u64,
}

impl Detection {
    pub fn new(bbox: BBox, category_id: u64, score: f64, image_id: u64) -> Result<Self> {
        let d = Detection {
            bbox,
            category_id,
            score,
            image_id,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidInput(format!(
                "detection score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }

    /// Canonical ranking: descending score, then lower category id, then
    /// lexicographic box coordinates, then lower image id.
    pub fn rank_cmp(&self, other: &Detection) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.category_id.cmp(&other.category_id))
            .then_with(|| self.bbox.lexicographic_cmp(&other.bbox))
            .then(self.image_id.cmp(&other.image_id))
    }
}

/// An annotated object instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub bbox: BBox,
    pub category_id: u64,
    pub image_id: u64,
}

pub fn area(b: &BBox) -> f64 {
    (b.x_max - b.x_min).max(0.0) * (b.y_max - b.y_min).max(0.0)
}

/// Intersection over union. Two zero-area boxes have IoU 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn clip(b: &BBox, size: ImageSize) -> BBox {
    let w = f64::from(size.width);
    let h = f64::from(size.height);
    BBox {
        x_min: b.x_min.clamp(0.0, w),
        y_min: b.y_min.clamp(0.0, h),
        x_max: b.x_max.clamp(0.0, w),
        y_max: b.y_max.clamp(0.0, h),
    }
}

pub fn xywh_to_xyxy(x: f64, y: f64, w: f64, h: f64) -> Result<BBox> {
    BBox::from_xywh(x, y, w, h)
}

pub fn xyxy_to_xywh(b: &BBox) -> [f64; 4] {
    b.to_xywh()
}
