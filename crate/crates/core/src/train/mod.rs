//! Deep-supervision training: the summed side-output loss, SGD with
//! momentum and coupled weight decay, the step learning-rate schedule,
//! horizontal-flip augmentation, and the two-phase protocol (a single
//! objectness epoch at a fixed rate, then the full saliency schedule).

mod checkpoint;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, CheckpointData, CheckpointMeta, CHECKPOINT_MAGIC,
};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ForwardPass, NetworkGraph, ParamStore, SideOutputs};
use crate::tensor::{kernels, BnMode, Shape4, Tape, Tensor4, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMetric {
    #[serde(rename = "mean-squared")]
    MeanSquared,
    #[serde(rename = "binary-cross-entropy")]
    BinaryCrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GtResize {
    /// Resize ground truth bilinearly and train against the soft target.
    Bilinear,
    /// Keep targets strictly binary.
    Nearest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub input_side: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub flip_probability: f64,
    pub seed: u64,
    pub loss_metric: LossMetric,
    pub gt_resize: GtResize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            input_side: 320,
            epochs: 25,
            base_lr: 0.01,
            lr_decay_factor: 0.1,
            lr_decay_every: 10,
            weight_decay: 1e-4,
            momentum: 0.9,
            batch_size: 8,
            flip_probability: 0.5,
            seed: 0,
            loss_metric: LossMetric::MeanSquared,
            gt_resize: GtResize::Bilinear,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidArgument(format!(
                "flip_probability must be in [0, 1], got {}",
                self.flip_probability
            )));
        }
        for (name, v) in [
            ("input_side", self.input_side),
            ("epochs", self.epochs),
            ("lr_decay_every", self.lr_decay_every),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// One (image, ground truth) pair; image is (1, 3, H, W) in [0, 1] and
/// the ground truth a single-channel map with the same extents.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub image: Tensor4,
    pub ground_truth: Tensor4,
}

impl TrainingSample {
    pub fn new(image: Tensor4, ground_truth: Tensor4) -> Result<Self> {
        let (is, gs) = (image.shape(), ground_truth.shape());
        if is.n != 1 || is.c != 3 || gs.n != 1 || gs.c != 1 || (is.h, is.w) != (gs.h, gs.w) {
            return Err(Error::shape_mismatch("training sample", is, gs));
        }
        Ok(TrainingSample {
            image,
            ground_truth,
        })
    }
}

/// Per-side, fused, and total loss of one forward pass. The total is
/// accumulated on the tape as fused + l_1 + ... + l_M, in that order.
pub struct LossReport {
    pub per_side: Vec<f64>,
    pub fused: f64,
    pub total: f64,
    pub total_var: Var,
}

fn metric_loss(tape: &mut Tape, metric: LossMetric, pred: Var, gt: Var) -> Result<Var> {
    match metric {
        LossMetric::MeanSquared => tape.mse_loss(pred, gt),
        LossMetric::BinaryCrossEntropy => tape.bce_loss(pred, gt),
    }
}

/// Supervision on every side output plus the fused map against the same
/// ground truth.
pub fn total_loss(
    tape: &mut Tape,
    outputs: &SideOutputs,
    ground_truth: Var,
    metric: LossMetric,
) -> Result<LossReport> {
    let fused_var = metric_loss(tape, metric, outputs.fused, ground_truth)?;
    let fused = tape.value(fused_var).item()?;
    let mut per_side = Vec::with_capacity(outputs.side_maps.len());
    let mut total_var = fused_var;
    for &z in &outputs.side_maps {
        let side = metric_loss(tape, metric, z, ground_truth)?;
        per_side.push(tape.value(side).item()?);
        total_var = tape.add(total_var, side)?;
    }
    let total = tape.value(total_var).item()?;
    Ok(LossReport {
        per_side,
        fused,
        total,
        total_var,
    })
}

/// Momentum buffers, one per parameter, zero-initialized on first use.
#[derive(Clone, Debug, Default)]
pub struct SgdState {
    pub velocity: IndexMap<String, Tensor4>,
}

impl SgdState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Classic momentum with decay coupled into the gradient:
/// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &IndexMap<String, Tensor4>,
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let grad = grads
            .get(&name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing gradient for `{name}`")))?;
        if !grad.all_finite() {
            return Err(Error::NonFiniteGradient { name });
        }
        let param = params.get_mut(&name).expect("name from store");
        if grad.shape() != param.shape() {
            return Err(Error::shape_mismatch(
                format!("gradient for `{name}`"),
                grad.shape(),
                param.shape(),
            ));
        }
        let v = state
            .velocity
            .entry(name.clone())
            .or_insert_with(|| Tensor4::zeros(param.shape()));
        for ((v, g), p) in v
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(param.data_mut())
        {
            *v = momentum * *v + g + weight_decay * *p;
            *p -= lr * *v;
        }
    }
    Ok(())
}

/// Step schedule: base_lr scaled by decay_factor once per completed
/// decay window. Computed by repeated multiplication so the 0.01 -> 0.001
/// -> 0.0001 sequence is exact in doubles.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let steps = epoch / config.lr_decay_every;
    (0..steps).fold(config.base_lr, |lr, _| lr * config.lr_decay_factor)
}

/// Mirror a tensor about the vertical axis (column c -> W-1-c).
pub fn mirror_horizontal(t: &Tensor4) -> Tensor4 {
    let s = t.shape();
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let v = t.data()[s.at(n, c, y, x)];
                    out.data_mut()[s.at(n, c, y, s.w - 1 - x)] = v;
                }
            }
        }
    }
    out
}

/// With probability `flip_probability`, mirror image and ground truth
/// together. One uniform draw is consumed from `rng` either way.
pub fn augment_flip(
    sample: &TrainingSample,
    flip_probability: f64,
    rng: &mut impl Rng,
) -> TrainingSample {
    let flip = rng.gen::<f64>() < flip_probability;
    if !flip {
        return sample.clone();
    }
    TrainingSample {
        image: mirror_horizontal(&sample.image),
        ground_truth: mirror_horizontal(&sample.ground_truth),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainPhase {
    /// One epoch over box-derived ground truth at a fixed 0.001 rate.
    Objectness,
    /// The full schedule over pixel-annotated data.
    Sod,
}

/// Learning rate used by the objectness pre-training epoch, regardless
/// of the configured schedule.
pub const OBJECTNESS_LR: f64 = 0.001;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub step: usize,
    pub per_side: Vec<f64>,
    pub fused: f64,
    pub total: f64,
    pub lr: f64,
}

pub struct TrainRun {
    pub trace: Vec<TraceRow>,
    pub optimizer: SgdState,
    pub epochs_run: usize,
}

/// Resize a sample to side x side (bilinear image; ground truth per the
/// configured mode).
pub fn resize_sample(
    sample: &TrainingSample,
    side: usize,
    gt_resize: GtResize,
) -> Result<TrainingSample> {
    let image = kernels::bilinear_forward(&sample.image, side, side)?;
    let ground_truth = match gt_resize {
        GtResize::Bilinear => kernels::bilinear_forward(&sample.ground_truth, side, side)?,
        GtResize::Nearest => kernels::nearest_forward(&sample.ground_truth, side, side)?,
    };
    TrainingSample::new(image, ground_truth)
}

fn stack_batch(samples: &[TrainingSample]) -> (Tensor4, Tensor4) {
    let s = samples[0].image.shape();
    let g = samples[0].ground_truth.shape();
    let mut images = Tensor4::zeros(Shape4::new(samples.len(), s.c, s.h, s.w));
    let mut gts = Tensor4::zeros(Shape4::new(samples.len(), g.c, g.h, g.w));
    let ilen = s.count();
    let glen = g.count();
    for (i, sample) in samples.iter().enumerate() {
        images.data_mut()[i * ilen..(i + 1) * ilen].copy_from_slice(sample.image.data());
        gts.data_mut()[i * glen..(i + 1) * glen].copy_from_slice(sample.ground_truth.data());
    }
    (images, gts)
}

/// Gradients of one recorded pass, in parameter-store order.
pub fn collect_grads(pass: &ForwardPass) -> Result<IndexMap<String, Tensor4>> {
    let mut grads = IndexMap::new();
    for (name, var) in &pass.param_vars {
        let grad = pass.tape.grad(*var).ok_or_else(|| {
            Error::InvalidArgument(format!("parameter `{name}` received no gradient"))
        })?;
        grads.insert(name.clone(), grad);
    }
    Ok(grads)
}

/// Run one training phase. The dataset is shuffled per epoch from the
/// run seed and the last partial batch is kept.
pub fn train(
    graph: &mut NetworkGraph,
    dataset: &[TrainingSample],
    config: &TrainConfig,
    phase: TrainPhase,
) -> Result<TrainRun> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    let epochs = match phase {
        TrainPhase::Objectness => 1,
        TrainPhase::Sod => config.epochs,
    };
    let resized: Vec<TrainingSample> = dataset
        .iter()
        .map(|s| resize_sample(s, config.input_side, config.gt_resize))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = SgdState::new();
    let mut trace = Vec::new();
    for epoch in 0..epochs {
        let lr = match phase {
            TrainPhase::Objectness => OBJECTNESS_LR,
            TrainPhase::Sod => lr_at(epoch, config),
        };
        let mut order: Vec<usize> = (0..resized.len()).collect();
        order.shuffle(&mut rng);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<TrainingSample> = chunk
                .iter()
                .map(|&i| augment_flip(&resized[i], config.flip_probability, &mut rng))
                .collect();
            let (images, gts) = stack_batch(&batch);
            let mut pass = graph.forward(&images, BnMode::Train)?;
            let gt_var = pass.tape.leaf(gts, false);
            let report = total_loss(&mut pass.tape, &pass.outputs, gt_var, config.loss_metric)?;
            if !report.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            pass.tape.backward(report.total_var)?;
            let grads = collect_grads(&pass)?;
            sgd_step(
                graph.params_mut(),
                &grads,
                &mut state,
                lr,
                config.momentum,
                config.weight_decay,
            )?;
            trace.push(TraceRow {
                epoch,
                step,
                per_side: report.per_side,
                fused: report.fused,
                total: report.total,
                lr,
            });
        }
    }
    Ok(TrainRun {
        trace,
        optimizer: state,
        epochs_run: epochs,
    })
}

/// Loss trace CSV: header epoch,step,l1..lM,lfuse,total,lr.
pub fn write_loss_trace<W: std::io::Write>(out: W, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let m = trace.first().map_or(0, |r| r.per_side.len());
    let mut header = vec!["epoch".to_string(), "step".to_string()];
    header.extend((1..=m).map(|i| format!("l{i}")));
    header.push("lfuse".into());
    header.push("total".into());
    header.push("lr".into());
    w.write_record(&header)
        .map_err(|e| Error::Data(format!("loss trace write: {e}")))?;
    for row in trace {
        let mut rec = vec![row.epoch.to_string(), row.step.to_string()];
        rec.extend(row.per_side.iter().map(|v| v.to_string()));
        rec.push(row.fused.to_string());
        rec.push(row.total.to_string());
        rec.push(row.lr.to_string());
        w.write_record(&rec)
            .map_err(|e| Error::Data(format!("loss trace write: {e}")))?;
    }
    w.flush().map_err(|e| Error::Data(format!("loss trace flush: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, GraphKind, BackboneSpec, SideBranchSpec};

    fn config() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn schedule_hits_paper_values_exactly() {
        let c = config();
        assert_eq!(lr_at(0, &c), 0.01);
        assert_eq!(lr_at(9, &c), 0.01);
        assert_eq!(lr_at(10, &c), 0.001);
        assert_eq!(lr_at(19, &c), 0.001);
        assert_eq!(lr_at(20, &c), 0.0001);
    }

    #[test]
    fn schedule_is_non_increasing_with_step_breakpoints() {
        let c = config();
        let mut prev = f64::INFINITY;
        for epoch in 0..60 {
            let lr = lr_at(epoch, &c);
            assert!(lr <= prev);
            if epoch % c.lr_decay_every != 0 {
                assert_eq!(lr, lr_at(epoch - 1, &c), "piecewise constant inside windows");
            }
            prev = lr;
        }
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let mut params = ParamStore::new();
        params
            .insert("p", Tensor4::scalar(1.0))
            .unwrap();
        let mut grads = IndexMap::new();
        grads.insert("p".to_string(), Tensor4::scalar(0.5));
        let mut state = SgdState::new();
        sgd_step(&mut params, &grads, &mut state, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(params.get("p").unwrap().data()[0], 1.0 - 0.1 * 0.5);
    }

    #[test]
    fn decay_only_step_shrinks_parameter() {
        let mut params = ParamStore::new();
        params.insert("p", Tensor4::scalar(2.0)).unwrap();
        let mut grads = IndexMap::new();
        grads.insert("p".to_string(), Tensor4::scalar(0.0));
        let mut state = SgdState::new();
        sgd_step(&mut params, &grads, &mut state, 1.0, 0.0, 0.1).unwrap();
        assert!((params.get("p").unwrap().data()[0] - 2.0 * 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_steps_match_unrolled_recurrence() {
        let (g1, g2) = (0.3, -0.2);
        let (lr, mu, wd) = (0.05, 0.9, 0.01);
        let p0 = 1.5;

        let mut params = ParamStore::new();
        params.insert("p", Tensor4::scalar(p0)).unwrap();
        let mut state = SgdState::new();
        for g in [g1, g2] {
            let mut grads = IndexMap::new();
            grads.insert("p".to_string(), Tensor4::scalar(g));
            sgd_step(&mut params, &grads, &mut state, lr, mu, wd).unwrap();
        }

        // hand-unrolled
        let mut v = 0.0;
        let mut p = p0;
        for g in [g1, g2] {
            v = mu * v + g + wd * p;
            p -= lr * v;
        }
        assert!((params.get("p").unwrap().data()[0] - p).abs() < 1e-12);
    }

    #[test]
    fn sgd_aborts_on_non_finite_gradient() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor4::scalar(1.0)).unwrap();
        let mut grads = IndexMap::new();
        grads.insert("w".to_string(), Tensor4::scalar(f64::NAN));
        let mut state = SgdState::new();
        let err = sgd_step(&mut params, &grads, &mut state, 0.1, 0.9, 0.0).unwrap_err();
        assert!(err.to_string().contains("`w`"));
    }

    #[test]
    fn sgd_decreases_convex_quadratic() {
        // loss = p^2, grad = 2p; small lr strictly decreases the loss
        let mut p = 0.7;
        let mut params = ParamStore::new();
        params.insert("p", Tensor4::scalar(p)).unwrap();
        let mut state = SgdState::new();
        for _ in 0..5 {
            let mut grads = IndexMap::new();
            grads.insert("p".to_string(), Tensor4::scalar(2.0 * p));
            sgd_step(&mut params, &grads, &mut state, 0.05, 0.0, 0.0).unwrap();
            let next = params.get("p").unwrap().data()[0];
            assert!(next * next < p * p);
            p = next;
        }
    }

    #[test]
    fn flip_probability_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sample = sample_with_gradient(6, 4);
        let out = augment_flip(&sample, 0.0, &mut rng);
        assert_eq!(out.image, sample.image);
        assert_eq!(out.ground_truth, sample.ground_truth);
    }

    #[test]
    fn flip_probability_one_mirrors_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sample = sample_with_gradient(6, 4);
        let out = augment_flip(&sample, 1.0, &mut rng);
        let s = sample.image.shape();
        for c in 0..3 {
            for y in 0..s.h {
                for x in 0..s.w {
                    assert_eq!(out.image.at(0, c, y, x), sample.image.at(0, c, y, s.w - 1 - x));
                }
            }
        }
        let g = sample.ground_truth.shape();
        for y in 0..g.h {
            for x in 0..g.w {
                assert_eq!(
                    out.ground_truth.at(0, 0, y, x),
                    sample.ground_truth.at(0, 0, y, g.w - 1 - x)
                );
            }
        }
    }

    #[test]
    fn flip_decisions_are_seeded() {
        let sample = sample_with_gradient(4, 4);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..32)
                .map(|_| augment_flip(&sample, 0.5, &mut rng).image == sample.image)
                .collect::<Vec<bool>>()
        };
        assert_eq!(run(123), run(123));
        assert_ne!(run(123), run(124), "different seeds should differ somewhere");
    }

    #[test]
    fn flip_commutes_with_equivariant_predictor() {
        // elementwise "network": predict = image squared, channel 0
        let predict = |img: &Tensor4| {
            let mut out = img.clone();
            for v in out.data_mut() {
                *v = *v * *v;
            }
            out
        };
        let sample = sample_with_gradient(5, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flipped = augment_flip(&sample, 1.0, &mut rng);
        assert_eq!(
            predict(&flipped.image),
            mirror_horizontal(&predict(&sample.image))
        );
    }

    fn sample_with_gradient(h: usize, w: usize) -> TrainingSample {
        let mut img = Tensor4::zeros(Shape4::new(1, 3, h, w));
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i % 97) as f64 / 97.0;
        }
        let mut gt = Tensor4::zeros(Shape4::new(1, 1, h, w));
        for (i, v) in gt.data_mut().iter_mut().enumerate() {
            *v = ((i * 13) % 7) as f64 / 7.0;
        }
        TrainingSample::new(img, gt).unwrap()
    }

    fn tiny_graph(seed: u64) -> NetworkGraph {
        let backbone = BackboneSpec::new(
            (0..2)
                .map(|i| crate::graph::Tap {
                    name: format!("t{i}"),
                    stride: 2 << i,
                    channels: 4 << i,
                })
                .collect(),
        )
        .unwrap();
        let branches = (0..2).map(|_| SideBranchSpec::toy(2).unwrap()).collect();
        GraphBuilder::new(GraphKind::Rds, backbone, 2)
            .branches(branches)
            .seed(seed)
            .build()
            .unwrap()
    }

    fn tiny_dataset(n: usize) -> Vec<TrainingSample> {
        (0..n)
            .map(|i| {
                let mut img = Tensor4::zeros(Shape4::new(1, 3, 8, 8));
                for (j, v) in img.data_mut().iter_mut().enumerate() {
                    *v = ((i * 31 + j) % 11) as f64 / 11.0;
                }
                let mut gt = Tensor4::zeros(Shape4::new(1, 1, 8, 8));
                for y in 2..6 {
                    for x in 2..6 {
                        gt.set(0, 0, y, x, 1.0);
                    }
                }
                TrainingSample::new(img, gt).unwrap()
            })
            .collect()
    }

    #[test]
    fn loss_report_total_is_exact_bookkeeping() {
        let mut graph = tiny_graph(3);
        let data = tiny_dataset(2);
        let (images, gts) = stack_batch(&data);
        let mut pass = graph.forward(&images, BnMode::Train).unwrap();
        let gt = pass.tape.leaf(gts, false);
        let report =
            total_loss(&mut pass.tape, &pass.outputs, gt, LossMetric::MeanSquared).unwrap();
        let folded = report.per_side.iter().fold(report.fused, |a, l| a + l);
        assert_eq!(report.total, folded);
        assert_eq!(report.per_side.len(), 2);
    }

    #[test]
    fn equal_outputs_give_zero_loss_and_fixed_sum() {
        // six components each 0.1 sum to 0.6 (the Eq. 1 arithmetic);
        // exercised on plain scalars
        let parts = [0.1f64; 6];
        let total = parts.iter().skip(1).fold(parts[0], |a, l| a + l);
        assert!((total - 0.6).abs() < 1e-15);
    }

    #[test]
    fn objectness_phase_is_one_epoch_at_fixed_lr() {
        let mut graph = tiny_graph(5);
        let data = tiny_dataset(3);
        let cfg = TrainConfig {
            input_side: 8,
            epochs: 7,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let run = train(&mut graph, &data, &cfg, TrainPhase::Objectness).unwrap();
        assert_eq!(run.epochs_run, 1);
        assert!(run.trace.iter().all(|r| r.lr == 0.001 && r.epoch == 0));
    }

    #[test]
    fn training_is_reproducible_bitwise() {
        let cfg = TrainConfig {
            input_side: 8,
            epochs: 2,
            batch_size: 2,
            seed: 99,
            ..TrainConfig::default()
        };
        let data = tiny_dataset(4);
        let mut g1 = tiny_graph(7);
        let mut g2 = tiny_graph(7);
        let r1 = train(&mut g1, &data, &cfg, TrainPhase::Sod).unwrap();
        let r2 = train(&mut g2, &data, &cfg, TrainPhase::Sod).unwrap();
        assert_eq!(r1.trace, r2.trace);
        for ((n1, p1), (n2, p2)) in g1.params().iter().zip(g2.params().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(p1.data(), p2.data());
        }
    }

    #[test]
    fn train_rejects_empty_dataset() {
        let mut graph = tiny_graph(1);
        let cfg = TrainConfig {
            input_side: 8,
            ..TrainConfig::default()
        };
        assert!(train(&mut graph, &[], &cfg, TrainPhase::Sod).is_err());
    }

    #[test]
    fn loss_trace_csv_has_expected_header() {
        let rows = vec![TraceRow {
            epoch: 0,
            step: 1,
            per_side: vec![0.5, 0.25],
            fused: 0.125,
            total: 0.875,
            lr: 0.01,
        }];
        let mut buf = Vec::new();
        write_loss_trace(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,step,l1,l2,lfuse,total,lr");
        assert_eq!(lines.next().unwrap(), "0,1,0.5,0.25,0.125,0.875,0.01");
    }
}
