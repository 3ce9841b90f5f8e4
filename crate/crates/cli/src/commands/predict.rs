use std::path::Path;

use rds_core::error::{Error, Result};
use rds_core::formats::{read_image, rgb_to_tensor, tensor_to_gray, write_pgm};
use rds_core::graph::{dss_prediction, GraphKind};
use rds_core::tensor::{bilinear_resize, BnMode};
use rds_core::train::read_checkpoint;

use crate::commands::{record_stem, resolve};
use crate::config::RunConfig;

pub fn run(
    checkpoint_path: &Path,
    manifest: &Path,
    out_dir: &Path,
    apply_crf: bool,
    overrides: &[String],
) -> Result<()> {
    let checkpoint = read_checkpoint(checkpoint_path)?;
    // the embedded config reconstructs the topology; overrides may tune
    // crf/eval knobs but not the network shape
    let mut config: RunConfig = serde_json::from_value(checkpoint.meta.config.clone())
        .map_err(|e| Error::format(checkpoint_path, format!("embedded config: {e}")))?;
    if !overrides.is_empty() {
        let base = config.network.clone();
        let mut value = serde_json::to_value(&config)
            .map_err(|e| Error::Data(format!("config encode: {e}")))?;
        for entry in overrides {
            crate::config::apply_override(&mut value, entry)?;
        }
        config = serde_json::from_value(value)
            .map_err(|e| Error::InvalidArgument(format!("override: {e}")))?;
        if config.network != base {
            return Err(Error::InvalidArgument(
                "predict overrides cannot change the network section; \
                 it must match the checkpoint"
                    .into(),
            ));
        }
    }

    let mut graph = config.network.build_graph(config.train.seed)?;
    checkpoint.load_into(&mut graph)?;
    let selected = config.network.selected_outputs()?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records = rds_core::objectness::read_manifest(manifest)?;
    if records.is_empty() {
        return Err(Error::Data(format!(
            "manifest {} has no records",
            manifest.display()
        )));
    }
    let side = config.train.input_side;
    for record in &records {
        let image = read_image(&resolve(manifest, &record.image_path))?;
        let tensor = rgb_to_tensor(&image);
        let resized = bilinear_resize(&tensor, side, side)?;
        let pass = graph.forward(&resized, BnMode::Infer)?;
        let map = match graph.kind {
            GraphKind::Rds => graph.prediction(&pass),
            GraphKind::Dss => dss_prediction(&pass.tape, &pass.outputs, &selected)?,
        };
        // back to the source resolution for pairing with ground truth
        let mut map = bilinear_resize(&map, image.height, image.width)?;
        if apply_crf {
            let refined = rds_core::crf::refine(&image, map.data(), &config.crf)?;
            map = rds_core::tensor::Tensor4::from_vec(map.shape(), refined)?;
        }
        let raster = tensor_to_gray(&map)?;
        let out_path = out_dir.join(format!("{}.pgm", record_stem(record)?));
        write_pgm(&out_path, &raster)?;
    }
    println!("predicted {} maps into {}", records.len(), out_dir.display());
    Ok(())
}
