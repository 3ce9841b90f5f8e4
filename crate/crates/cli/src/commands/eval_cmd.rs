use std::path::Path;

use rds_core::error::{Error, Result};
use rds_core::formats::read_gray;
use rds_core::metrics::{evaluate, write_report_csv, write_summary_csv, Aggregation};

use crate::commands::{record_stem, resolve};
use crate::config::RunConfig;

pub fn run(
    config_path: Option<&Path>,
    manifest: &Path,
    pred_dir: &Path,
    out_dir: &Path,
    dataset: Option<&str>,
    verbose: bool,
    overrides: &[String],
) -> Result<()> {
    let config = RunConfig::load(config_path, overrides)?;
    let records = rds_core::objectness::read_manifest(manifest)?;
    if records.is_empty() {
        return Err(Error::Data(format!(
            "manifest {} has no records",
            manifest.display()
        )));
    }

    let mut preds = Vec::with_capacity(records.len());
    let mut gts = Vec::with_capacity(records.len());
    let mut unpaired = Vec::new();
    for record in &records {
        let stem = record_stem(record)?;
        let pred_path = pred_dir.join(format!("{stem}.pgm"));
        if !pred_path.exists() {
            unpaired.push(stem);
            continue;
        }
        let gt_path = record.gt_path.as_ref().ok_or_else(|| {
            Error::Data(format!("record `{}` has no ground truth", record.image_path))
        })?;
        preds.push(read_gray(&pred_path)?);
        gts.push(read_gray(&resolve(manifest, gt_path))?);
    }
    if !unpaired.is_empty() {
        return Err(Error::Data(format!(
            "missing predictions for: {}",
            unpaired.join(", ")
        )));
    }

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dataset_name = dataset
        .map(str::to_string)
        .or_else(|| {
            manifest
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
        })
        .unwrap_or_else(|| "dataset".into());

    let report = evaluate(&preds, &gts, &config.eval.metric_config(None))?;
    let mut bytes = Vec::new();
    write_report_csv(&mut bytes, &report)?;
    rds_core::formats::atomic_write(&out_dir.join("report.csv"), &bytes)?;
    let mut bytes = Vec::new();
    write_summary_csv(&mut bytes, &dataset_name, &report)?;
    rds_core::formats::atomic_write(&out_dir.join("summary.csv"), &bytes)?;
    println!(
        "{dataset_name}: images {} mae {:.6} max_f {:.6} @ threshold {}",
        report.image_count, report.mae, report.max_f, report.argmax_threshold
    );

    if verbose {
        let other = match config.eval.aggregation {
            Aggregation::PerImageMean => Aggregation::Pooled,
            Aggregation::Pooled => Aggregation::PerImageMean,
        };
        let alt = evaluate(&preds, &gts, &config.eval.metric_config(Some(other)))?;
        let suffix = match other {
            Aggregation::PerImageMean => "per-image",
            Aggregation::Pooled => "pooled",
        };
        let mut bytes = Vec::new();
        write_report_csv(&mut bytes, &alt)?;
        rds_core::formats::atomic_write(&out_dir.join(format!("report_{suffix}.csv")), &bytes)?;
        println!(
            "{dataset_name} ({suffix}): mae {:.6} max_f {:.6} @ threshold {}",
            alt.mae, alt.max_f, alt.argmax_threshold
        );
    }
    Ok(())
}
