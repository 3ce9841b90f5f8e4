use std::path::Path;

use rds_core::error::{Error, Result};
use rds_core::train::{
    train, write_checkpoint, write_loss_trace, CheckpointMeta, TrainPhase, TrainRun,
};

use crate::commands::load_dataset;
use crate::config::RunConfig;

pub fn run(
    config_path: Option<&Path>,
    manifest: &Path,
    objectness_manifest: Option<&Path>,
    out_dir: &Path,
    overrides: &[String],
) -> Result<()> {
    let config = RunConfig::load(config_path, overrides)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    config.write_effective(out_dir)?;

    let mut graph = config.network.build_graph(config.train.seed)?;

    if let Some(objectness) = objectness_manifest {
        let dataset = load_dataset(objectness)?;
        let run = train(&mut graph, &dataset, &config.train, TrainPhase::Objectness)?;
        finish_phase(&config, out_dir, &graph, &run, "objectness")?;
        println!(
            "objectness phase: {} steps, final total loss {:.6}",
            run.trace.len(),
            run.trace.last().map_or(f64::NAN, |r| r.total)
        );
    }

    let dataset = load_dataset(manifest)?;
    let run = train(&mut graph, &dataset, &config.train, TrainPhase::Sod)?;
    finish_phase(&config, out_dir, &graph, &run, "sod")?;
    println!(
        "sod phase: {} epochs, {} steps, final total loss {:.6}",
        run.epochs_run,
        run.trace.len(),
        run.trace.last().map_or(f64::NAN, |r| r.total)
    );
    println!("checkpoint: {}", out_dir.join("checkpoint.rdsckpt").display());
    Ok(())
}

fn finish_phase(
    config: &RunConfig,
    out_dir: &Path,
    graph: &rds_core::graph::NetworkGraph,
    run: &TrainRun,
    phase: &str,
) -> Result<()> {
    let mut trace_bytes = Vec::new();
    write_loss_trace(&mut trace_bytes, &run.trace)?;
    rds_core::formats::atomic_write(&out_dir.join(format!("trace_{phase}.csv")), &trace_bytes)?;

    let meta = CheckpointMeta {
        phase: phase.to_string(),
        epochs_run: run.epochs_run,
        seed: config.train.seed,
        config: config.to_json(),
    };
    let name = if phase == "sod" {
        "checkpoint.rdsckpt".to_string()
    } else {
        format!("checkpoint_{phase}.rdsckpt")
    };
    write_checkpoint(&out_dir.join(name), graph, &run.optimizer, &meta)
}
