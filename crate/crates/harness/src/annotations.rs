//! Annotation records.
//!
//! Line format, one image per line, `#` starts a comment:
//!
//! ```text
//! <image_id> <height> <width> [<category> <x_min> <y_min> <x_max> <y_max>]...
//! ```
//!
//! Coordinates are pixel indices: pixel `(x, y)` belongs to a box when
//! `x_min <= x <= x_max` and `y_min <= y <= y_max`. COCO boxes are continuous
//! `[x, y, w, h]` corners; [`coco_to_records`] converts them so that a pixel is
//! covered exactly when its centre lies inside the COCO box.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Deserialize;
use styleadapt_core::gating::{Annotation, BoundingBox};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub annotation: Annotation,
}

pub fn parse_records(text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| HarnessError::parse(format!("annotation line {}", i + 1), m);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 || (fields.len() - 3) % 5 != 0 {
            return Err(err(format!(
                "expected `id height width` followed by groups of 5 fields, got {} fields",
                fields.len()
            )));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("`{s}`: {e}")));
        let float = |s: &str| s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}")));
        let (height, width) = (int(fields[1])?, int(fields[2])?);
        let mut annotation = Annotation::default();
        for g in fields[3..].chunks(5) {
            let b = BoundingBox::new(float(g[1])?, float(g[2])?, float(g[3])?, float(g[4])?)
                .map_err(|e| err(e.to_string()))?;
            annotation.push(b, int(g[0])?);
        }
        out.push(AnnotationRecord {
            image_id: fields[0].to_owned(),
            height,
            width,
            annotation,
        });
    }
    Ok(out)
}

pub fn format_records(records: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        write!(out, "{} {} {}", r.image_id, r.height, r.width).unwrap();
        for (b, c) in r.annotation.boxes.iter().zip(&r.annotation.categories) {
            write!(out, " {c} {} {} {} {}", b.x_min, b.y_min, b.x_max, b.y_max).unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    height: usize,
    width: usize,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Debug, Deserialize)]
struct CocoCategory {
    id: u64,
}

/// Converts COCO-style JSON into records. Category ids are renumbered to
/// `0..n` in ascending id order; images keep file order.
pub fn coco_to_records(json: &str) -> Result<Vec<AnnotationRecord>> {
    let coco: CocoFile =
        serde_json::from_str(json).map_err(|e| HarnessError::parse("coco json", e.to_string()))?;
    let mut ids: Vec<u64> = coco.categories.iter().map(|c| c.id).collect();
    ids.extend(coco.annotations.iter().map(|a| a.category_id));
    ids.sort_unstable();
    ids.dedup();
    let remap: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let mut records: Vec<AnnotationRecord> = coco
        .images
        .iter()
        .map(|img| AnnotationRecord {
            image_id: img.id.to_string(),
            height: img.height,
            width: img.width,
            annotation: Annotation::default(),
        })
        .collect();
    let index: BTreeMap<u64, usize> = coco.images.iter().enumerate().map(|(i, img)| (img.id, i)).collect();
    for a in &coco.annotations {
        let &i = index.get(&a.image_id).ok_or_else(|| {
            HarnessError::parse("coco json", format!("annotation for unknown image {}", a.image_id))
        })?;
        let [x, y, w, h] = a.bbox;
        let b = BoundingBox::new(x - 0.5, y - 0.5, x + w - 0.5, y + h - 0.5)
            .map_err(|e| HarnessError::parse("coco json", e.to_string()))?;
        records[i].annotation.push(b, remap[&a.category_id]);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use styleadapt_core::gating::build_masks;

    #[test]
    fn line_format_round_trips() {
        let text = "# demo\nimg1 8 8 0 0 0 1 1 2 3.5 2 6 7\nimg2 4 4\n";
        let recs = parse_records(text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].annotation.categories, vec![0, 2]);
        assert_eq!(parse_records(&format_records(&recs)).unwrap(), recs);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_records("a 4 4 0 1 1").is_err());
        assert!(parse_records("a x 4").is_err());
        assert!(parse_records("a 4 4 0 3 3 1 1").is_err());
    }

    #[test]
    fn coco_boxes_cover_pixel_centres() {
        let json = r#"{
            "images": [{"id": 5, "height": 6, "width": 6, "file_name": "x.jpg"}],
            "annotations": [{"image_id": 5, "category_id": 17, "bbox": [1, 2, 2, 1]}],
            "categories": [{"id": 3, "name": "car"}, {"id": 17, "name": "bus"}]
        }"#;
        let recs = coco_to_records(json).unwrap();
        assert_eq!(recs[0].image_id, "5");
        assert_eq!(recs[0].annotation.categories, vec![1]);
        let m = build_masks(&recs[0].annotation, (6, 6), 2).unwrap();
        let covered: Vec<(usize, usize)> = (0..6)
            .flat_map(|y| (0..6).map(move |x| (y, x)))
            .filter(|&(y, x)| m.pixel(1, y, x))
            .collect();
        assert_eq!(covered, vec![(2, 1), (2, 2)]);
    }
}
