//! Property-based invariants: shape algebra, channel accounting,
//! box-union geometry, filter partitioning, and metric symmetries.

use proptest::prelude::*;

use rds_core::formats::GrayRaster;
use rds_core::graph::{
    dss_connection_param_count, rds_level_channels, rds_upsample_param_count, BackboneSpec,
    GraphBuilder, GraphKind,
};
use rds_core::metrics::{binarize, evaluate, mae, Aggregation, MetricConfig};
use rds_core::objectness::{alpha, bbox_to_saliency, filter_manifest, pascal_sod_relabel,
    BoundingBox, ObjectnessRecord, Source};
use rds_core::tensor::ConvSpec;
use rds_core::train::mirror_horizontal;
use rds_core::Tensor4;

proptest! {
    #[test]
    fn conv_output_extent_formula(
        input in 1usize..64,
        kernel_idx in 0usize..4,
        stride in 1usize..4,
        padding in 0usize..4,
    ) {
        let kernel = [1, 3, 5, 7][kernel_idx];
        let spec = ConvSpec::new(4, kernel, stride, padding).unwrap();
        let padded = input + 2 * padding;
        match spec.output_extent(input) {
            Some(out) => prop_assert_eq!(out, (padded - kernel) / stride + 1),
            None => prop_assert!(padded < kernel),
        }
    }

    #[test]
    fn channel_accounting_rule(m in 2usize..=6, k in 1usize..=64) {
        let graph = GraphBuilder::new(GraphKind::Rds, BackboneSpec::synthetic(m).unwrap(), k)
            .describe_only()
            .build()
            .unwrap();
        let summary = graph.summary();
        for level in 1..=m {
            prop_assert_eq!(
                summary.per_level[level - 1].concat_channels,
                (m - level + 1) * k
            );
        }
        // topology counts
        prop_assert_eq!(graph.connections.len(), m - 1);
        prop_assert!(graph.final_upsample.is_some());

        let dss = GraphBuilder::new(GraphKind::Dss, BackboneSpec::synthetic(m).unwrap(), k)
            .describe_only()
            .build()
            .unwrap();
        prop_assert_eq!(dss.connections.len(), m * (m - 1) / 2);
    }

    #[test]
    fn connection_parameters_grow_linearly_in_k(m in 2usize..=6, k in 1usize..=32) {
        // dense deepest connection: slope (2 * 2^(m-1))^2 per channel
        let deepest_slope = {
            let f = 1usize << (m - 1);
            (2 * f) * (2 * f)
        };
        prop_assert_eq!(dss_connection_param_count(m, 1, k), deepest_slope * k);
        // neighbor-only: slope 4 * sum of (m - level + 1) over levels
        let slope: usize = (1..=m).map(|level| 4 * (m - level + 1)).sum();
        let total: usize = (1..=m)
            .map(|level| rds_upsample_param_count(level, m, k))
            .sum();
        prop_assert_eq!(total, slope * k);
    }

    #[test]
    fn rds_levels_shrink_by_k(m in 2usize..=6, k in 1usize..=32) {
        for level in 1..m {
            prop_assert_eq!(
                rds_level_channels(level, m, k) - rds_level_channels(level + 1, m, k),
                k
            );
        }
    }

    #[test]
    fn box_union_matches_point_membership(
        w in 1u32..24,
        h in 1u32..24,
        raw_boxes in prop::collection::vec((0u32..30, 0u32..30, 0u32..30, 0u32..30), 0..6),
    ) {
        let boxes: Vec<BoundingBox> = raw_boxes
            .iter()
            .map(|&(a, b, c, d)| BoundingBox::new(a.min(c), b.min(d), a.max(c), b.max(d)))
            .collect();
        let (map, _) = bbox_to_saliency(w, h, &boxes);
        // point-in-box oracle
        let mut union_area = 0u64;
        for y in 0..h {
            for x in 0..w {
                let inside = boxes
                    .iter()
                    .any(|b| x >= b.x0 && x < b.x1.min(w) && y >= b.y0 && y < b.y1.min(h));
                let pixel = map.at(x as usize, y as usize);
                prop_assert_eq!(pixel == 255, inside);
                union_area += inside as u64;
            }
        }
        let a = alpha(&map).unwrap();
        prop_assert!((a - union_area as f64 / (w as f64 * h as f64)).abs() < 1e-15);
    }

    #[test]
    fn adding_a_box_is_monotone(
        w in 4u32..16,
        h in 4u32..16,
        seed_boxes in prop::collection::vec((0u32..16, 0u32..16, 1u32..16, 1u32..16), 1..4),
        extra in (0u32..16, 0u32..16, 1u32..16, 1u32..16),
    ) {
        let mk = |&(a, b, c, d): &(u32, u32, u32, u32)| {
            BoundingBox::new(a.min(c), b.min(d), a.max(c) + 1, b.max(d) + 1)
        };
        let base: Vec<BoundingBox> = seed_boxes.iter().map(mk).collect();
        let mut extended = base.clone();
        extended.push(mk(&extra));
        let (before, _) = bbox_to_saliency(w, h, &base);
        let (after, _) = bbox_to_saliency(w, h, &extended);
        for (b, a) in before.pixels.iter().zip(&after.pixels) {
            prop_assert!(!(*b == 255 && *a == 0), "a set pixel was cleared");
        }
    }

    #[test]
    fn filter_partitions_records(alphas in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let records: Vec<ObjectnessRecord> = alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| ObjectnessRecord {
                image_path: format!("r{i}"),
                width: 4,
                height: 4,
                boxes: vec![],
                gt_path: None,
                source: Source::Other("t".into()),
                alpha: Some(a),
                kept: None,
            })
            .collect();
        let n = records.len();
        let (kept, rejected) = filter_manifest(records, 0.8).unwrap();
        prop_assert_eq!(kept.len() + rejected.len(), n);
        prop_assert!(kept.iter().all(|r| r.alpha.unwrap() < 0.8));
        prop_assert!(rejected.iter().all(|r| r.alpha.unwrap() >= 0.8));
    }

    #[test]
    fn relabel_is_idempotent(pixels in prop::collection::vec(0u8..=255, 1..64)) {
        let w = pixels.len();
        let gt = GrayRaster::new(w, 1, pixels).unwrap();
        let once = pascal_sod_relabel(&gt);
        let twice = pascal_sod_relabel(&once);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn binarize_extremes(pixels in prop::collection::vec(1u8..=254, 4..32)) {
        let w = pixels.len();
        let map = GrayRaster::new(w, 1, pixels.clone()).unwrap();
        let min = *pixels.iter().min().unwrap();
        let max = *pixels.iter().max().unwrap();
        prop_assert!(binarize(&map, min - 1).iter().all(|&b| b));
        prop_assert!(binarize(&map, max).iter().all(|&b| !b));
    }

    #[test]
    fn mae_symmetry_and_flip_invariance(seed in 0u64..1000) {
        let pred = rds_testkit::random_raster(9, 7, seed);
        let gt = rds_testkit::random_binary_raster(9, 7, seed.wrapping_add(1));
        let forward = mae(&pred, &gt).unwrap();
        prop_assert_eq!(forward, mae(&gt, &pred).unwrap());

        let flip = |r: &GrayRaster| {
            let mut out = r.pixels.clone();
            for y in 0..r.height {
                for x in 0..r.width {
                    out[y * r.width + (r.width - 1 - x)] = r.pixels[y * r.width + x];
                }
            }
            GrayRaster::new(r.width, r.height, out).unwrap()
        };
        // summation order changes under the flip: equal up to round-off
        let flipped = mae(&flip(&pred), &flip(&gt)).unwrap();
        prop_assert!((forward - flipped).abs() < 1e-12);
    }

    #[test]
    fn pooled_recall_never_increases(seed in 0u64..200) {
        let preds = vec![
            rds_testkit::random_raster(8, 8, seed),
            rds_testkit::random_raster(8, 8, seed.wrapping_add(7)),
        ];
        let gts = vec![
            rds_testkit::random_binary_raster(8, 8, seed.wrapping_add(13)),
            rds_testkit::random_binary_raster(8, 8, seed.wrapping_add(23)),
        ];
        let config = MetricConfig {
            aggregation: Aggregation::Pooled,
            ..MetricConfig::default()
        };
        let report = evaluate(&preds, &gts, &config).unwrap();
        for pair in report.pr_points.windows(2) {
            prop_assert!(pair[1].recall <= pair[0].recall);
        }
    }
}

#[test]
fn mirror_is_involutive() {
    let t = rds_testkit::random_tensor(rds_core::tensor::Shape4::new(1, 2, 5, 6), -1.0, 1.0, 3);
    assert_eq!(mirror_horizontal(&mirror_horizontal(&t)), t);
}

#[test]
fn max_f_is_one_iff_exactly_reproducible() {
    // prediction that binarizes to gt at some threshold scores max_f 1
    let gt = GrayRaster::new(4, 1, vec![0, 255, 255, 0]).unwrap();
    let pred = GrayRaster::new(4, 1, vec![40, 200, 220, 10]).unwrap();
    let report = evaluate(
        std::slice::from_ref(&pred),
        std::slice::from_ref(&gt),
        &MetricConfig::default(),
    )
    .unwrap();
    assert_eq!(report.max_f, 1.0);

    // one irreparable false positive keeps it strictly below 1
    let bad = GrayRaster::new(4, 1, vec![250, 200, 220, 10]).unwrap();
    let report = evaluate(
        std::slice::from_ref(&bad),
        std::slice::from_ref(&gt),
        &MetricConfig::default(),
    )
    .unwrap();
    assert!(report.max_f < 1.0);
}

#[test]
fn forward_backward_bitwise_deterministic() {
    use rds_core::graph::SideBranchSpec;
    use rds_core::tensor::BnMode;
    use rds_core::train::{collect_grads, total_loss, LossMetric};

    let build = || {
        let backbone = BackboneSpec::synthetic(3).unwrap();
        let branches = (0..3).map(|_| SideBranchSpec::toy(2).unwrap()).collect();
        GraphBuilder::new(GraphKind::Rds, backbone, 2)
            .branches(branches)
            .seed(17)
            .build()
            .unwrap()
    };
    let batch = rds_testkit::random_tensor(rds_core::tensor::Shape4::new(2, 3, 16, 16), 0.0, 1.0, 5);
    let gt = rds_testkit::random_tensor(rds_core::tensor::Shape4::new(2, 1, 16, 16), 0.0, 1.0, 6);

    let run = || {
        let mut graph = build();
        let mut pass = graph.forward(&batch, BnMode::Train).unwrap();
        let gt_var = pass.tape.leaf(gt.clone(), false);
        let report = total_loss(&mut pass.tape, &pass.outputs, gt_var, LossMetric::MeanSquared)
            .unwrap();
        pass.tape.backward(report.total_var).unwrap();
        let grads = collect_grads(&pass).unwrap();
        (report.total, grads)
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1.to_bits(), l2.to_bits());
    for ((n1, t1), (n2, t2)) in g1.iter().zip(g2.iter()) {
        assert_eq!(n1, n2);
        let bits1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
        let bits2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits1, bits2, "gradient for {n1} differs between runs");
    }
}
