//! Corrupting a whole dataset directory.
//!
//! A dataset directory holds `annotations.json` and an `images/` folder with
//! one PNG per image record. The output directory gets the same layout plus
//! `manifest.tsv` (one line per corrupted image) and `errors.tsv` (one line
//! per image that could not be processed).

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};

use super::CorruptionSpec;
use crate::error::{Error, Result};
use crate::io::{write_atomic, AnnotationFile, ImageRecord};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const IMAGES_DIR: &str = "images";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const ERRORS_FILE: &str = "errors.tsv";

/// splitmix64 finalizer over the master seed and image id.
pub fn derive_seed(master: u64, image_id: u64) -> u64 {
    let mut z = master ^ image_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image_id: u64,
    pub kind: &'static str,
    pub params: String,
    pub seed: u64,
}

impl ManifestEntry {
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.image_id, self.kind, self.params, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureEntry {
    pub image_id: u64,
    pub file_name: String,
    pub message: String,
}

impl FailureEntry {
    pub fn to_line(&self) -> String {
        let msg = self.message.replace(['\t', '\n'], " ");
        format!("{}\t{}\t{}", self.image_id, self.file_name, msg)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorruptionReport {
    pub manifest: Vec<ManifestEntry>,
    pub failures: Vec<FailureEntry>,
}

impl CorruptionReport {
    pub fn total(&self) -> usize {
        self.manifest.len() + self.failures.len()
    }
}

fn lines(items: impl Iterator<Item = String>) -> String {
    items.map(|l| l + "\n").collect()
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    Ok(img.to_rgb8())
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|source| Error::Image { path: PathBuf::from("<memory>"), source })?;
    Ok(buf.into_inner())
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

fn corrupt_one(
    dataset_dir: &Path,
    out_dir: &Path,
    rec: &ImageRecord,
    spec: &CorruptionSpec,
    seed: u64,
) -> Result<()> {
    let src = dataset_dir.join(IMAGES_DIR).join(&rec.file_name);
    let img = load_rgb(&src)?;
    if img.dimensions() != (rec.width, rec.height) {
        return Err(Error::InvalidInput(format!(
            "{} is {}x{} but annotations say {}x{}",
            src.display(),
            img.width(),
            img.height(),
            rec.width,
            rec.height
        )));
    }
    let out = spec.apply_with_seed(&img, seed)?;
    write_atomic(&out_dir.join(IMAGES_DIR).join(&rec.file_name), &encode_png(&out)?)
}

/// Corrupts every image of `dataset_dir` into `out_dir`. Image `i` (in
/// annotation file order) gets `specs[i % specs.len()]` with seed
/// `derive_seed(master_seed, image_id)`. The annotation file is copied byte
/// for byte. Per-image failures are collected in the report rather than
/// aborting the run.
pub fn corrupt_dataset(
    dataset_dir: &Path,
    specs: &[CorruptionSpec],
    master_seed: u64,
    out_dir: &Path,
) -> Result<CorruptionReport> {
    if specs.is_empty() {
        return Err(Error::config("corruption.suite", "must list at least one corruption"));
    }
    for spec in specs {
        spec.validate()?;
    }
    let ann_path = dataset_dir.join(ANNOTATIONS_FILE);
    let ann_bytes = std::fs::read(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let text = String::from_utf8(ann_bytes.clone())
        .map_err(|_| Error::InvalidInput(format!("{} is not UTF-8", ann_path.display())))?;
    let annotations = AnnotationFile::parse(&text, &ann_path)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if same_dir(dataset_dir, out_dir) {
        return Err(Error::InvalidInput(format!(
            "output directory {} must differ from the input dataset",
            out_dir.display()
        )));
    }
    write_atomic(&out_dir.join(ANNOTATIONS_FILE), &ann_bytes)?;

    let mut report = CorruptionReport::default();
    for (i, rec) in annotations.images.iter().enumerate() {
        let spec = &specs[i % specs.len()];
        let seed = derive_seed(master_seed, rec.id);
        match corrupt_one(dataset_dir, out_dir, rec, spec, seed) {
            Ok(()) => report.manifest.push(ManifestEntry {
                image_id: rec.id,
                kind: spec.kind(),
                params: spec.params_string(),
                seed,
            }),
            Err(e) => report.failures.push(FailureEntry {
                image_id: rec.id,
                file_name: rec.file_name.clone(),
                message: e.to_string(),
            }),
        }
    }
    write_atomic(
        &out_dir.join(MANIFEST_FILE),
        lines(report.manifest.iter().map(ManifestEntry::to_line)).as_bytes(),
    )?;
    write_atomic(
        &out_dir.join(ERRORS_FILE),
        lines(report.failures.iter().map(FailureEntry::to_line)).as_bytes(),
    )?;
    Ok(report)
}
