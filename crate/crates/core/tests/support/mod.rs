//! Shared helpers for integration tests: an independent brute-force mAP
//! reference, random instance generators and an on-disk fixture dataset.

#![allow(dead_code)]

use std::path::Path;

use image::{Rgb, RgbImage};
use logodet::augment::dataset::{encode_png, ANNOTATIONS_FILE, IMAGES_DIR};
use logodet::geometry::{BBox, Detection, GroundTruthBox};
use logodet::io::{AnnotationFile, AnnotationRecord, CategoryRecord, ImageRecord};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn ref_iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let union = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
    if inter <= 0.0 || union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// AP of one category at one threshold, computed the slow way: walk the
/// ranked detections, scan every ground truth box for the best free match,
/// then take the max precision at recall >= r for each of 101 recall points.
pub fn reference_ap(dets: &[Detection], gts: &[GroundTruthBox], category: u64, t: f64) -> Option<f64> {
    let cat_gts: Vec<&GroundTruthBox> = gts.iter().filter(|g| g.category_id == category).collect();
    if cat_gts.is_empty() {
        return None;
    }
    let mut ranked: Vec<&Detection> = dets.iter().filter(|d| d.category_id == category).collect();
    ranked.sort_by(|a, b| a.rank_cmp(b));
    let mut used = vec![false; cat_gts.len()];
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut fp) = (0.0, 0.0);
    for d in ranked {
        let mut best: Option<usize> = None;
        for (gi, g) in cat_gts.iter().enumerate() {
            if used[gi] || g.image_id != d.image_id {
                continue;
            }
            let v = ref_iou(&d.bbox, &g.bbox);
            if v >= t && best.is_none_or(|b| v > ref_iou(&d.bbox, &cat_gts[b].bbox)) {
                best = Some(gi);
            }
        }
        match best {
            Some(gi) => {
                used[gi] = true;
                tp += 1.0;
            }
            None => fp += 1.0,
        }
        points.push((tp / cat_gts.len() as f64, tp / (tp + fp)));
    }
    let mut total = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        total += best;
    }
    Some(total / 101.0)
}

/// Box on a coarse integer grid, so duplicates and exact ties are common.
pub fn grid_box(rng: &mut ChaCha8Rng, extent: i32) -> BBox {
    let x = rng.gen_range(0..extent) as f64;
    let y = rng.gen_range(0..extent) as f64;
    let w = rng.gen_range(1..=extent / 2) as f64;
    let h = rng.gen_range(1..=extent / 2) as f64;
    BBox::new(x, y, x + w, y + h).unwrap()
}

/// Scores from a small set, so score ties are common.
pub fn tie_prone_score(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(1..=10) as f64 / 10.0
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<GroundTruthBox>) {
    let images = rng.gen_range(1..=3u64);
    let categories = rng.gen_range(1..=3u64);
    let n_gt = rng.gen_range(0..=5);
    let gts = (0..n_gt)
        .map(|_| GroundTruthBox {
            bbox: grid_box(rng, 8),
            category_id: rng.gen_range(1..=categories),
            image_id: rng.gen_range(1..=images),
        })
        .collect::<Vec<_>>();
    let n_det = rng.gen_range(0..=8);
    let dets = (0..n_det)
        .map(|_| {
            let bbox = if !gts.is_empty() && rng.gen_bool(0.6) {
                let g = &gts[rng.gen_range(0..gts.len())];
                let dx = rng.gen_range(-1..=1) as f64;
                BBox::new(g.bbox.x_min + dx, g.bbox.y_min, g.bbox.x_max + dx, g.bbox.y_max).unwrap()
            } else {
                grid_box(rng, 8)
            };
            Detection {
                bbox,
                category_id: rng.gen_range(1..=categories),
                score: tie_prone_score(rng),
                image_id: rng.gen_range(1..=images),
            }
        })
        .collect();
    (dets, gts)
}

pub const FIXTURE_WIDTH: u32 = 64;
pub const FIXTURE_HEIGHT: u32 = 48;

/// Synthetic dataset: textured backgrounds with a bright rectangle per
/// object. Images are written with the library's PNG encoder.
pub fn write_fixture_dataset(dir: &Path, images: u64, rng: &mut ChaCha8Rng) -> AnnotationFile {
    std::fs::create_dir_all(dir.join(IMAGES_DIR)).unwrap();
    let mut ann = AnnotationFile::default();
    for (id, name) in [(1, "acme"), (2, "globex"), (3, "initech")] {
        ann.categories.push(CategoryRecord { id, name: name.into() });
    }
    let mut next_ann = 1;
    for id in 1..=images {
        let tint = rng.gen_range(0..60u8);
        let mut img = RgbImage::from_fn(FIXTURE_WIDTH, FIXTURE_HEIGHT, |x, y| {
            Rgb([tint + (x as u8 % 16) * 3, tint + (y as u8 % 12) * 4, 90])
        });
        for _ in 0..rng.gen_range(1..=3) {
            let w = rng.gen_range(8..20u32);
            let h = rng.gen_range(8..16u32);
            let x = rng.gen_range(0..FIXTURE_WIDTH - w);
            let y = rng.gen_range(0..FIXTURE_HEIGHT - h);
            for yy in y..y + h {
                for xx in x..x + w {
                    img.put_pixel(xx, yy, Rgb([240, 230, 200]));
                }
            }
            ann.annotations.push(AnnotationRecord {
                id: next_ann,
                image_id: id,
                category_id: rng.gen_range(1..=3),
                bbox: [x as f64, y as f64, w as f64, h as f64],
                area: Some((w * h) as f64),
            });
            next_ann += 1;
        }
        let file_name = format!("{id:03}.png");
        std::fs::write(dir.join(IMAGES_DIR).join(&file_name), encode_png(&img).unwrap()).unwrap();
        ann.images.push(ImageRecord { id, file_name, width: FIXTURE_WIDTH, height: FIXTURE_HEIGHT });
    }
    std::fs::write(dir.join(ANNOTATIONS_FILE), ann.to_json()).unwrap();
    ann
}
