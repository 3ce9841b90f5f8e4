use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rds_core::error::{Error, Result};
use rds_core::formats::{read_image, write_pgm};
use rds_core::objectness::{
    alpha, bbox_to_saliency, filter_manifest, write_manifest, BoundingBox, SourceCounts,
};

use crate::commands::{record_stem, resolve};
use crate::CoordConvention;

pub fn run(
    manifest_in: &Path,
    manifest_out: &Path,
    gt_dir: Option<&Path>,
    alpha_threshold: f64,
    coords: CoordConvention,
    check_images: bool,
) -> Result<()> {
    let records = rds_core::objectness::read_manifest(manifest_in)?;
    let gt_dir: PathBuf = match gt_dir {
        Some(d) => d.to_path_buf(),
        None => manifest_out
            .parent()
            .unwrap_or(Path::new("."))
            .join("gt"),
    };
    std::fs::create_dir_all(&gt_dir).map_err(|e| Error::io(&gt_dir, e))?;

    let mut seen_stems = HashSet::new();
    let mut prepared = Vec::new();
    let mut skipped = 0usize;
    let mut dropped_boxes = 0usize;
    let mut histogram = [0usize; 10];
    for mut record in records {
        if record.width == 0 || record.height == 0 {
            eprintln!(
                "warning: skipping `{}`: zero extents in manifest",
                record.image_path
            );
            skipped += 1;
            continue;
        }
        if check_images {
            match read_image(&resolve(manifest_in, &record.image_path)) {
                Ok(img) if (img.width as u32, img.height as u32) == (record.width, record.height) => {}
                Ok(img) => {
                    eprintln!(
                        "warning: skipping `{}`: raster is {}x{} but manifest says {}x{}",
                        record.image_path, img.width, img.height, record.width, record.height
                    );
                    skipped += 1;
                    continue;
                }
                Err(e) => {
                    eprintln!("warning: skipping `{}`: {e}", record.image_path);
                    skipped += 1;
                    continue;
                }
            }
        }
        let stem = record_stem(&record)?;
        if !seen_stems.insert(stem.clone()) {
            return Err(Error::Data(format!(
                "duplicate image stem `{stem}`; derived map names would collide"
            )));
        }
        let boxes: Vec<BoundingBox> = match coords {
            CoordConvention::ZeroHalfOpen => record.bounding_boxes(),
            CoordConvention::OneInclusive => record
                .boxes
                .iter()
                .map(|b| BoundingBox::from_one_based_inclusive(b[0], b[1], b[2], b[3]))
                .collect(),
        };
        let (map, dropped) = bbox_to_saliency(record.width, record.height, &boxes);
        dropped_boxes += dropped;
        let a = alpha(&map)?;
        let bin = ((a * 10.0) as usize).min(9);
        histogram[bin] += 1;

        let gt_path = gt_dir.join(format!("{stem}.pgm"));
        write_pgm(&gt_path, &map)?;
        // rewritten manifests carry absolute paths so they stay valid
        // wherever they land; gt_dir is cwd-relative, images are
        // manifest-relative
        record.image_path = crate::commands::absolutize(manifest_in, &record.image_path)?;
        let gt_abs = std::path::absolute(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
        record.gt_path = Some(gt_abs.to_string_lossy().into_owned());
        record.alpha = Some(a);
        prepared.push(record);
    }

    if prepared.is_empty() {
        eprintln!("warning: no usable records in {}", manifest_in.display());
    }
    let (kept, rejected) = filter_manifest(prepared, alpha_threshold)?;
    write_manifest(manifest_out, &kept)?;

    let counts = SourceCounts::tally(&kept);
    println!(
        "kept {} rejected {} skipped {skipped} dropped_boxes {dropped_boxes}",
        kept.len(),
        rejected.len()
    );
    println!(
        "kept by source: voc {} imagenet {} other {}",
        counts.voc, counts.imagenet, counts.other
    );
    print!("alpha histogram:");
    for (i, count) in histogram.iter().enumerate() {
        print!(" [{:.1},{:.1}):{}", i as f64 / 10.0, (i + 1) as f64 / 10.0, count);
    }
    println!();
    Ok(())
}
