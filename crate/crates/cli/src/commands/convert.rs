use std::path::{Path, PathBuf};

use rds_core::error::{Error, Result};
use rds_core::formats::{read_gray, write_pgm};
use rds_core::objectness::{pascal_sod_relabel, write_manifest};

use crate::commands::{record_stem, resolve};

pub fn run(manifest_in: &Path, manifest_out: &Path, gt_dir: Option<&Path>) -> Result<()> {
    let records = rds_core::objectness::read_manifest(manifest_in)?;
    let gt_dir: PathBuf = match gt_dir {
        Some(d) => d.to_path_buf(),
        None => manifest_out
            .parent()
            .unwrap_or(Path::new("."))
            .join("gt-sod"),
    };
    std::fs::create_dir_all(&gt_dir).map_err(|e| Error::io(&gt_dir, e))?;

    let mut converted = Vec::new();
    let mut skipped = 0usize;
    for mut record in records {
        let Some(gt_path) = record.gt_path.clone() else {
            eprintln!(
                "warning: skipping `{}`: no ground truth to relabel",
                record.image_path
            );
            skipped += 1;
            continue;
        };
        let gt = match read_gray(&resolve(manifest_in, &gt_path)) {
            Ok(gt) => gt,
            Err(e) => {
                eprintln!("warning: skipping `{}`: {e}", record.image_path);
                skipped += 1;
                continue;
            }
        };
        let relabeled = pascal_sod_relabel(&gt);
        let out_path = gt_dir.join(format!("{}.pgm", record_stem(&record)?));
        write_pgm(&out_path, &relabeled)?;
        record.image_path = crate::commands::absolutize(manifest_in, &record.image_path)?;
        let gt_abs = std::path::absolute(&out_path).map_err(|e| Error::io(&out_path, e))?;
        record.gt_path = Some(gt_abs.to_string_lossy().into_owned());
        converted.push(record);
    }
    write_manifest(manifest_out, &converted)?;
    println!("converted {} skipped {skipped}", converted.len());
    Ok(())
}
