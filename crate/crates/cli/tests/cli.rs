//! End-to-end subcommand tests driving the built binary.

use std::path::Path;
use std::process::{Command, Output};

use rds_core::formats::{encode_pgm, encode_ppm, GrayRaster, RgbRaster};

fn rds() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rds"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_ppm(path: &Path, raster: &RgbRaster) {
    std::fs::write(path, encode_ppm(raster)).unwrap();
}

/// Manifest with boxes covering 20, 50, 80 and 100 of a 10x10 raster.
fn alpha_fixture(dir: &Path) -> std::path::PathBuf {
    let manifest = dir.join("objectness.jsonl");
    let rows = [
        (2, "a"),  // alpha 0.2
        (5, "b"),  // alpha 0.5
        (8, "c"),  // alpha 0.8
        (10, "d"), // alpha 1.0
    ];
    let mut text = String::new();
    for (rows_covered, name) in rows {
        text.push_str(&format!(
            r#"{{"image": "images/{name}.ppm", "width": 10, "height": 10, "boxes": [[0, 0, 10, {rows_covered}]], "source": "VOC"}}"#
        ));
        text.push('\n');
    }
    std::fs::write(&manifest, text).unwrap();
    manifest
}

#[test]
fn prepare_objectness_keeps_strictly_below_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = alpha_fixture(dir.path());
    let out_manifest = dir.path().join("prepared.jsonl");
    let out = run_ok(rds()
        .arg("prepare-objectness")
        .arg("--manifest-in")
        .arg(&manifest)
        .arg("--manifest-out")
        .arg(&out_manifest));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("kept 2 rejected 2"), "{stdout}");

    let kept = rds_core::objectness::read_manifest(&out_manifest).unwrap();
    assert_eq!(kept.len(), 2);
    for record in &kept {
        let gt = record.gt_path.as_ref().unwrap();
        assert!(Path::new(gt).exists(), "derived map {gt} missing");
    }
}

#[test]
fn prepare_objectness_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = alpha_fixture(dir.path());
    let first = dir.path().join("first.jsonl");
    run_ok(rds()
        .arg("prepare-objectness")
        .arg("--manifest-in")
        .arg(&manifest)
        .arg("--manifest-out")
        .arg(&first));
    let second = dir.path().join("second.jsonl");
    run_ok(rds()
        .arg("prepare-objectness")
        .arg("--manifest-in")
        .arg(&first)
        .arg("--manifest-out")
        .arg(&second));
    // records and derived maps unchanged modulo the manifest's own path
    let a = rds_core::objectness::read_manifest(&first).unwrap();
    let b = rds_core::objectness::read_manifest(&second).unwrap();
    assert_eq!(a.len(), b.len());
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(ra.image_path, rb.image_path);
        assert_eq!(ra.boxes, rb.boxes);
        let (ga, gb) = (ra.gt_path.as_ref().unwrap(), rb.gt_path.as_ref().unwrap());
        assert_eq!(
            std::fs::read(ga).unwrap(),
            std::fs::read(gb).unwrap(),
            "derived maps differ"
        );
    }
}

#[test]
fn prepare_objectness_empty_manifest_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("empty.jsonl");
    std::fs::write(&manifest, "").unwrap();
    let out = run_ok(rds()
        .arg("prepare-objectness")
        .arg("--manifest-in")
        .arg(&manifest)
        .arg("--manifest-out")
        .arg(dir.path().join("out.jsonl")));
    assert!(String::from_utf8(out.stdout).unwrap().contains("kept 0"));
    assert!(String::from_utf8(out.stderr).unwrap().contains("warning"));
}

#[test]
fn missing_manifest_exits_with_data_code() {
    let out = rds()
        .arg("prepare-objectness")
        .arg("--manifest-in")
        .arg("/nonexistent/m.jsonl")
        .arg("--manifest-out")
        .arg("/tmp/never.jsonl")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: data:"), "{stderr}");
}

#[test]
fn bad_override_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = rds()
        .arg("train")
        .arg("--manifest")
        .arg("/tmp/never.jsonl")
        .arg("--out-dir")
        .arg(dir.path())
        .arg("--set")
        .arg("train.bogus_knob=1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: usage:"), "{stderr}");
}

#[test]
fn compare_topology_json_carries_reference_numbers() {
    let out = run_ok(rds()
        .arg("compare-topology")
        .arg("--levels")
        .arg("6")
        .arg("--k")
        .arg("1")
        .arg("--json"));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let dss_conns = doc["dss"]["connections"].as_array().unwrap();
    assert_eq!(dss_conns.len(), 15);
    let deepest = dss_conns
        .iter()
        .find(|c| c["from_level"] == 6 && c["to_level"] == 1)
        .unwrap();
    assert_eq!(deepest["parameter_count"], 4096);
    assert_eq!(deepest["kernel"], 64);
}

#[test]
fn plot_pr_renders_polyline_per_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    std::fs::write(
        &report,
        "threshold,precision,recall,f\n0,0.5,1,0.55\n128,0.8,0.6,0.75\n255,1,0,0\n",
    )
    .unwrap();
    let svg_path = dir.path().join("pr.svg");
    run_ok(rds()
        .arg("plot-pr")
        .arg("--report")
        .arg(&report)
        .arg("--report")
        .arg(&report)
        .arg("--label")
        .arg("one")
        .arg("--label")
        .arg("two")
        .arg("--out")
        .arg(&svg_path));
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
}

/// Tiny end-to-end: train on rectangles, predict, eval; checks the file
/// plumbing rather than quality.
#[test]
fn train_predict_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir_all(&images).unwrap();
    let mut manifest_text = String::new();
    for i in 0..4 {
        let side = 32usize;
        let mut pixels = vec![0u8; side * side * 3];
        let mut gt = vec![0u8; side * side];
        for y in 4..16 {
            for x in (4 + i)..(20 + i) {
                let p = (y * side + x) * 3;
                pixels[p..p + 3].copy_from_slice(&[255, 255, 255]);
                gt[y * side + x] = 255;
            }
        }
        write_ppm(
            &images.join(format!("img{i}.ppm")),
            &RgbRaster::new(side, side, pixels).unwrap(),
        );
        std::fs::write(
            images.join(format!("img{i}.pgm")),
            encode_pgm(&GrayRaster::new(side, side, gt).unwrap()),
        )
        .unwrap();
        manifest_text.push_str(&format!(
            r#"{{"image": "images/img{i}.ppm", "width": 32, "height": 32, "boxes": [], "gt": "images/img{i}.pgm", "source": "other"}}"#
        ));
        manifest_text.push('\n');
    }
    let manifest = dir.path().join("data.jsonl");
    std::fs::write(&manifest, manifest_text).unwrap();

    let run_dir = dir.path().join("run");
    run_ok(rds()
        .arg("train")
        .arg("--manifest")
        .arg(&manifest)
        .arg("--out-dir")
        .arg(&run_dir)
        .args(["--set", "train.input_side=32"])
        .args(["--set", "train.epochs=2"])
        .args(["--set", "train.batch_size=4"])
        .args(["--set", "network.k=2"])
        .args(["--set", "network.branches=toy"]));
    assert!(run_dir.join("checkpoint.rdsckpt").exists());
    assert!(run_dir.join("trace_sod.csv").exists());
    assert!(run_dir.join("effective_config.json").exists());

    let preds = dir.path().join("preds");
    run_ok(rds()
        .arg("predict")
        .arg("--checkpoint")
        .arg(run_dir.join("checkpoint.rdsckpt"))
        .arg("--manifest")
        .arg(&manifest)
        .arg("--out-dir")
        .arg(&preds));
    for i in 0..4 {
        let map = rds_core::formats::read_pgm(&preds.join(format!("img{i}.pgm"))).unwrap();
        assert_eq!((map.width, map.height), (32, 32));
    }

    let eval_dir = dir.path().join("eval");
    let out = run_ok(rds()
        .arg("eval")
        .arg("--manifest")
        .arg(&manifest)
        .arg("--pred-dir")
        .arg(&preds)
        .arg("--out-dir")
        .arg(&eval_dir)
        .arg("--dataset")
        .arg("rects"));
    assert!(String::from_utf8(out.stdout).unwrap().contains("rects"));
    assert!(eval_dir.join("report.csv").exists());
    assert!(eval_dir.join("summary.csv").exists());

    // changing the network section at predict time must be refused
    let out = rds()
        .arg("predict")
        .arg("--checkpoint")
        .arg(run_dir.join("checkpoint.rdsckpt"))
        .arg("--manifest")
        .arg(&manifest)
        .arg("--out-dir")
        .arg(dir.path().join("p2"))
        .args(["--set", "network.k=4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_rejects_unpaired_predictions_naming_them() {
    let dir = tempfile::tempdir().unwrap();
    let gt = GrayRaster::filled(4, 4, 255);
    std::fs::write(dir.path().join("a.pgm"), encode_pgm(&gt)).unwrap();
    let manifest = dir.path().join("m.jsonl");
    std::fs::write(
        &manifest,
        format!(
            r#"{{"image": "missing_pred.ppm", "width": 4, "height": 4, "boxes": [], "gt": "{}", "source": "other"}}"#,
            dir.path().join("a.pgm").display()
        ) + "\n",
    )
    .unwrap();
    let out = rds()
        .arg("eval")
        .arg("--manifest")
        .arg(&manifest)
        .arg("--pred-dir")
        .arg(dir.path())
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("missing_pred"), "{stderr}");
}
