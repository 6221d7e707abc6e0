use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_json, read_to_string, validation, write_atomic};
use crate::error::Result;
use crate::geometry::{BBox, Detection};

/// One entry of a detection file. `scale` tags detections made on a resized
/// copy of the image (for multi-scale fusion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, w, h]`
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

impl DetectionRecord {
    pub fn to_detection(&self) -> Result<Detection> {
        let [x, y, w, h] = self.bbox;
        Detection::new(BBox::from_xywh(x, y, w, h)?, self.category_id, self.score, self.image_id)
    }

    pub fn from_detection(d: &Detection) -> Self {
        DetectionRecord {
            image_id: d.image_id,
            category_id: d.category_id,
            bbox: d.bbox.to_xywh(),
            score: d.score,
            scale: None,
        }
    }
}

pub fn parse_detections(text: &str, path: &Path) -> Result<Vec<DetectionRecord>> {
    let records: Vec<DetectionRecord> = parse_json(text, path)?;
    for (i, r) in records.iter().enumerate() {
        if let Err(e) = r.to_detection() {
            return Err(validation(path, format!("[{i}]"), e.to_string()));
        }
        if let Some(s) = r.scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(validation(
                    path,
                    format!("[{i}].scale"),
                    format!("scale factor must be positive, got {s}"),
                ));
            }
        }
    }
    Ok(records)
}

pub fn load_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    parse_detections(&read_to_string(path)?, path)
}

pub fn save_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(records).expect("detections serialize");
    write_atomic(path, text.as_bytes())
}

/// Rejects detections on images the annotation file does not know.
pub fn check_image_ids(records: &[DetectionRecord], known: &HashSet<u64>, path: &Path) -> Result<()> {
    match records.iter().enumerate().find(|(_, r)| !known.contains(&r.image_id)) {
        Some((i, r)) => Err(validation(
            path,
            format!("[{i}].image_id"),
            format!("unknown image {} (detection and annotation files do not match?)", r.image_id),
        )),
        None => Ok(()),
    }
}
