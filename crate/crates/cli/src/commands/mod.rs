pub mod convert;
pub mod eval_cmd;
pub mod plot;
pub mod predict;
pub mod prepare;
pub mod topology;
pub mod train_cmd;

use std::path::Path;

use rds_core::error::{Error, Result};
use rds_core::formats::{gray_to_tensor, read_gray, read_image, rgb_to_tensor};
use rds_core::objectness::{bbox_to_saliency, ObjectnessRecord};
use rds_core::train::TrainingSample;

/// File stem of a record's image path, used to pair derived files.
pub fn record_stem(record: &ObjectnessRecord) -> Result<String> {
    Path::new(&record.image_path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Data(format!("record `{}` has no file stem", record.image_path)))
}

/// Resolve a possibly relative path against the manifest's directory.
pub fn resolve(manifest: &Path, path: &str) -> std::path::PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Absolute form of a manifest-relative path, so rewritten manifests
/// stay valid wherever they are written.
pub fn absolutize(manifest: &Path, path: &str) -> Result<String> {
    let resolved = resolve(manifest, path);
    let abs = std::path::absolute(&resolved).map_err(|e| Error::io(&resolved, e))?;
    Ok(abs.to_string_lossy().into_owned())
}

/// Load manifest records into training samples. Ground truth comes from
/// the record's map when present, else is derived from its boxes.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<TrainingSample>> {
    let records = rds_core::objectness::read_manifest(manifest_path)?;
    if records.is_empty() {
        return Err(Error::Data(format!(
            "manifest {} has no records",
            manifest_path.display()
        )));
    }
    let mut samples = Vec::with_capacity(records.len());
    for record in &records {
        let image = read_image(&resolve(manifest_path, &record.image_path))?;
        let gt = match &record.gt_path {
            Some(gt) => read_gray(&resolve(manifest_path, gt))?,
            None => {
                if record.boxes.is_empty() {
                    return Err(Error::Data(format!(
                        "record `{}` has neither a ground truth nor boxes",
                        record.image_path
                    )));
                }
                bbox_to_saliency(record.width, record.height, &record.bounding_boxes()).0
            }
        };
        if (gt.width, gt.height) != (image.width, image.height) {
            return Err(Error::Data(format!(
                "record `{}`: image is {}x{} but ground truth is {}x{}",
                record.image_path, image.width, image.height, gt.width, gt.height
            )));
        }
        samples.push(TrainingSample::new(
            rgb_to_tensor(&image),
            gray_to_tensor(&gt),
        )?);
    }
    Ok(samples)
}
