use std::collections::{HashMap, HashSet};
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

use super::{parse_json, read_to_string, validation, write_atomic};
use crate::error::Result;
use crate::geometry::{BBox, GroundTruthBox, ImageSize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, w, h]`
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<AnnotationRecord>,
    pub categories: Vec<CategoryRecord>,
}

fn duplicate_id(ids: impl Iterator<Item = (usize, u64)>) -> Option<(usize, u64)> {
    let mut seen = HashSet::new();
    ids.into_iter().find(|(_, id)| !seen.insert(*id))
}

fn is_plain_relative(name: &str) -> bool {
    let p = Path::new(name);
    !name.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)))
}

impl AnnotationFile {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    /// Parses and validates; `path` only labels error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let file: AnnotationFile = parse_json(text, path)?;
        file.validate(path)?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation file serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn validate(&self, path: &Path) -> Result<()> {
        if let Some((i, id)) = duplicate_id(self.images.iter().enumerate().map(|(i, r)| (i, r.id))) {
            return Err(validation(path, format!("images[{i}].id"), format!("duplicate image id {id}")));
        }
        if let Some((i, id)) = duplicate_id(self.annotations.iter().enumerate().map(|(i, r)| (i, r.id))) {
            return Err(validation(
                path,
                format!("annotations[{i}].id"),
                format!("duplicate annotation id {id}"),
            ));
        }
        if let Some((i, id)) = duplicate_id(self.categories.iter().enumerate().map(|(i, r)| (i, r.id))) {
            return Err(validation(
                path,
                format!("categories[{i}].id"),
                format!("duplicate category id {id}"),
            ));
        }
        for (i, img) in self.images.iter().enumerate() {
            if img.width == 0 || img.height == 0 {
                return Err(validation(
                    path,
                    format!("images[{i}].width"),
                    format!("image {} has zero size {}x{}", img.id, img.width, img.height),
                ));
            }
            if !is_plain_relative(&img.file_name) {
                return Err(validation(
                    path,
                    format!("images[{i}].file_name"),
                    format!("image {} file name {:?} must be a relative path", img.id, img.file_name),
                ));
            }
        }
        let images: HashSet<u64> = self.images.iter().map(|r| r.id).collect();
        let categories: HashSet<u64> = self.categories.iter().map(|r| r.id).collect();
        for (i, a) in self.annotations.iter().enumerate() {
            if !images.contains(&a.image_id) {
                return Err(validation(
                    path,
                    format!("annotations[{i}].image_id"),
                    format!("annotation {} references missing image {}", a.id, a.image_id),
                ));
            }
            if !categories.contains(&a.category_id) {
                return Err(validation(
                    path,
                    format!("annotations[{i}].category_id"),
                    format!("annotation {} references missing category {}", a.id, a.category_id),
                ));
            }
            let [x, y, w, h] = a.bbox;
            if let Err(e) = BBox::from_xywh(x, y, w, h) {
                return Err(validation(
                    path,
                    format!("annotations[{i}].bbox"),
                    format!("annotation {}: {e}", a.id),
                ));
            }
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthBox> {
        self.annotations
            .iter()
            .map(|a| {
                let [x, y, w, h] = a.bbox;
                GroundTruthBox {
                    bbox: BBox::from_xywh(x, y, w, h).expect("validated on load"),
                    category_id: a.category_id,
                    image_id: a.image_id,
                }
            })
            .collect()
    }

    pub fn image_sizes(&self) -> HashMap<u64, ImageSize> {
        self.images
            .iter()
            .map(|r| (r.id, ImageSize { width: r.width, height: r.height }))
            .collect()
    }

    pub fn category_name(&self, id: u64) -> Option<&str> {
        self.categories.iter().find(|c| c.id == id).map(|c| c.name.as_str())
    }
}
