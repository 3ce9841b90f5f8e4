use std::path::{Path, PathBuf};

use rds_core::error::{Error, Result};
use rds_core::formats::{atomic_write, render_pr_svg, PrSeries};
use rds_core::metrics::read_report_csv;

pub fn run(reports: &[PathBuf], labels: &[String], out: &Path, title: &str) -> Result<()> {
    if !labels.is_empty() && labels.len() != reports.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} reports",
            labels.len(),
            reports.len()
        )));
    }
    let mut series = Vec::with_capacity(reports.len());
    for (i, path) in reports.iter().enumerate() {
        let points = read_report_csv(path)?;
        let label = labels.get(i).cloned().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("series {i}"))
        });
        series.push(PrSeries {
            label,
            points: points.iter().map(|p| (p.recall, p.precision)).collect(),
        });
    }
    let svg = render_pr_svg(&series, title);
    atomic_write(out, svg.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}
