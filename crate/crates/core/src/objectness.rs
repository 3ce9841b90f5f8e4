//! Bounding-box objectness ground truth: box-union binary maps, the
//! foreground-fraction statistic used to drop uninformative images, and
//! the most-salient-object relabeling for multi-valued ground truths.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::GrayRaster;

/// Half-open pixel box [x0, x1) x [y0, y1), 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoundingBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        BoundingBox { x0, y0, x1, y1 }
    }

    /// Clamp to image extents; `None` when nothing remains.
    pub fn clamped(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let b = BoundingBox {
            x0: self.x0.min(width),
            y0: self.y0.min(height),
            x1: self.x1.min(width),
            y1: self.y1.min(height),
        };
        (b.x0 < b.x1 && b.y0 < b.y1).then_some(b)
    }

    /// Convert 1-based inclusive corners to the half-open convention.
    pub fn from_one_based_inclusive(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        BoundingBox {
            x0: x0.saturating_sub(1),
            y0: y0.saturating_sub(1),
            x1,
            y1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Voc,
    ImageNet,
    #[serde(untagged)]
    Other(String),
}

/// One manifest entry: raster path, extents, boxes, and the derived
/// foreground fraction and keep decision once computed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectnessRecord {
    #[serde(rename = "image")]
    pub image_path: String,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<[u32; 4]>,
    #[serde(rename = "gt", skip_serializing_if = "Option::is_none", default)]
    pub gt_path: Option<String>,
    pub source: Source,
    #[serde(skip)]
    pub alpha: Option<f64>,
    #[serde(skip)]
    pub kept: Option<bool>,
}

impl ObjectnessRecord {
    pub fn bounding_boxes(&self) -> Vec<BoundingBox> {
        self.boxes
            .iter()
            .map(|b| BoundingBox::new(b[0], b[1], b[2], b[3]))
            .collect()
    }
}

/// Union-of-boxes binary map: 255 inside at least one box, 0 elsewhere.
/// Degenerate boxes are dropped; their count is returned.
pub fn bbox_to_saliency(width: u32, height: u32, boxes: &[BoundingBox]) -> (GrayRaster, usize) {
    let mut map = GrayRaster::filled(width as usize, height as usize, 0);
    let mut dropped = 0;
    for b in boxes {
        match b.clamped(width, height) {
            Some(b) => {
                for y in b.y0..b.y1 {
                    let row = y as usize * width as usize;
                    for x in b.x0..b.x1 {
                        map.pixels[row + x as usize] = 255;
                    }
                }
            }
            None => dropped += 1,
        }
    }
    (map, dropped)
}

/// Foreground fraction of a binary map: the mean over all pixels.
pub fn alpha(map: &GrayRaster) -> Result<f64> {
    if map.pixels.is_empty() {
        return Err(Error::InvalidArgument(
            "alpha of an empty map is undefined".into(),
        ));
    }
    let mut ones = 0usize;
    for &v in &map.pixels {
        match v {
            255 => ones += 1,
            0 => {}
            other => {
                return Err(Error::InvalidArgument(format!(
                    "alpha expects a binary (0/255) map, found value {other}"
                )))
            }
        }
    }
    Ok(ones as f64 / map.pixels.len() as f64)
}

/// Split records into kept (alpha strictly below the threshold) and
/// rejected. Low-alpha records are kept. Records must have alpha set.
pub fn filter_manifest(
    records: Vec<ObjectnessRecord>,
    threshold: f64,
) -> Result<(Vec<ObjectnessRecord>, Vec<ObjectnessRecord>)> {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for mut record in records {
        let alpha = record.alpha.ok_or_else(|| {
            Error::Data(format!(
                "record `{}` has no alpha; derive its map first",
                record.image_path
            ))
        })?;
        let keep = alpha < threshold;
        record.kept = Some(keep);
        if keep {
            kept.push(record);
        } else {
            rejected.push(record);
        }
    }
    Ok((kept, rejected))
}

/// Keep only the most salient object of a multi-valued ground truth:
/// pixels at the maximum nonzero level become 255, everything else 0.
pub fn pascal_sod_relabel(gt: &GrayRaster) -> GrayRaster {
    let top = gt.pixels.iter().copied().max().unwrap_or(0);
    if top == 0 {
        return gt.clone();
    }
    let pixels = gt
        .pixels
        .iter()
        .map(|&v| if v == top { 255 } else { 0 })
        .collect();
    GrayRaster {
        width: gt.width,
        height: gt.height,
        pixels,
    }
}

/// Per-source record tally for merge accounting.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SourceCounts {
    pub voc: usize,
    pub imagenet: usize,
    pub other: usize,
}

impl SourceCounts {
    pub fn tally(records: &[ObjectnessRecord]) -> Self {
        let mut counts = SourceCounts::default();
        for r in records {
            match r.source {
                Source::Voc => counts.voc += 1,
                Source::ImageNet => counts.imagenet += 1,
                Source::Other(_) => counts.other += 1,
            }
        }
        counts
    }

    pub fn total(&self) -> usize {
        self.voc + self.imagenet + self.other
    }
}

/// Concatenate manifests in order.
pub fn merge_manifests(parts: Vec<Vec<ObjectnessRecord>>) -> Vec<ObjectnessRecord> {
    parts.into_iter().flatten().collect()
}

/// Read a JSON-lines manifest; blank lines are ignored.
pub fn read_manifest(path: &Path) -> Result<Vec<ObjectnessRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ObjectnessRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[ObjectnessRecord]) -> Result<()> {
    let mut bytes = Vec::new();
    for record in records {
        serde_json::to_writer(&mut bytes, record)
            .map_err(|e| Error::Data(format!("manifest encode: {e}")))?;
        bytes.write_all(b"\n").expect("vec write");
    }
    crate::formats::atomic_write(path, &bytes)
}
