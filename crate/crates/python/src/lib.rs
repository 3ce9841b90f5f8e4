//! Python extension module exposing the main types and operations:
//! network construction and inference, training steps, the evaluation
//! metrics, objectness data derivation, and CRF refinement.

use numpy::{
    PyArray1, PyArray2, PyArray3, PyArray4, PyArrayMethods, PyReadonlyArray2, PyReadonlyArray3,
    PyReadonlyArray4,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rds_core::crf::CrfParams;
use rds_core::formats::{GrayRaster, RgbRaster};
use rds_core::graph::{
    dss_prediction, GraphBuilder, GraphKind, NetworkGraph, OutputSel, SideBranchSpec,
};
use rds_core::metrics::{Aggregation, MetricConfig};
use rds_core::objectness::BoundingBox;
use rds_core::tensor::{BnMode, Shape4, Tensor4};
use rds_core::train::{collect_grads, sgd_step, total_loss, LossMetric, SgdState, TrainConfig};

fn err(e: rds_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tensor_from_nchw(array: PyReadonlyArray4<'_, f64>) -> PyResult<Tensor4> {
    let a = array.as_array();
    let d = a.shape();
    let shape = Shape4::new(d[0], d[1], d[2], d[3]);
    let mut t = Tensor4::zeros(shape);
    for n in 0..d[0] {
        for c in 0..d[1] {
            for y in 0..d[2] {
                for x in 0..d[3] {
                    t.set(n, c, y, x, a[[n, c, y, x]]);
                }
            }
        }
    }
    Ok(t)
}

fn gray_from_array(array: PyReadonlyArray2<'_, u8>) -> PyResult<GrayRaster> {
    let a = array.as_array();
    let (h, w) = (a.shape()[0], a.shape()[1]);
    let mut pixels = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            pixels.push(a[[y, x]]);
        }
    }
    GrayRaster::new(w, h, pixels).map_err(err)
}

fn gray_to_array<'py>(py: Python<'py>, raster: &GrayRaster) -> Bound<'py, PyArray2<u8>> {
    let arr = PyArray2::<u8>::zeros(py, (raster.height, raster.width), false);
    {
        let mut rw = unsafe { arr.as_array_mut() };
        for y in 0..raster.height {
            for x in 0..raster.width {
                rw[[y, x]] = raster.at(x, y);
            }
        }
    }
    arr
}

/// A built side-output network with its parameters.
#[pyclass]
struct SaliencyNet {
    graph: NetworkGraph,
    selected: Vec<OutputSel>,
}

#[pymethods]
impl SaliencyNet {
    /// kind: "rds" or "dss"; backbone: "toy"; branches: "toy" or
    /// "table1"; selected picks the maps averaged by predict() for the
    /// dense baseline ("z2".."z6", "fuse").
    #[new]
    #[pyo3(signature = (kind="rds", k=8, branches="toy", seed=0, selected=None))]
    fn new(
        kind: &str,
        k: usize,
        branches: &str,
        seed: u64,
        selected: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let kind = match kind {
            "rds" => GraphKind::Rds,
            "dss" => GraphKind::Dss,
            other => {
                return Err(PyValueError::new_err(format!(
                    "kind must be \"rds\" or \"dss\", got {other:?}"
                )))
            }
        };
        let backbone = rds_core::graph::BackboneSpec::toy();
        let branch_specs = match branches {
            "toy" => (0..backbone.levels())
                .map(|_| SideBranchSpec::toy(k))
                .collect::<rds_core::Result<Vec<_>>>(),
            "table1" => (0..backbone.levels())
                .map(|i| SideBranchSpec::table1(i, k))
                .collect(),
            other => {
                return Err(PyValueError::new_err(format!(
                    "branches must be \"toy\" or \"table1\", got {other:?}"
                )))
            }
        }
        .map_err(err)?;
        let graph = GraphBuilder::new(kind, backbone, k)
            .branches(branch_specs)
            .seed(seed)
            .build()
            .map_err(err)?;
        let selected = selected
            .unwrap_or_else(|| vec!["z2".into(), "z3".into(), "z4".into(), "fuse".into()])
            .iter()
            .map(|s| match s.as_str() {
                "fuse" => Ok(OutputSel::Fused),
                other => other
                    .strip_prefix('z')
                    .and_then(|n| n.parse().ok())
                    .map(OutputSel::Level)
                    .ok_or_else(|| {
                        PyValueError::new_err(format!("bad output selector {other:?}"))
                    }),
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(SaliencyNet { graph, selected })
    }

    fn levels(&self) -> usize {
        self.graph.levels()
    }

    fn parameter_count(&self) -> usize {
        self.graph.params().total_elements()
    }

    fn summary_json(&self) -> String {
        self.graph.summary().to_json()
    }

    fn connection_report_json(&self) -> String {
        serde_json::to_string_pretty(&self.graph.connection_param_count())
            .expect("report serializes")
    }

    /// Run inference on an (N, 3, H, W) batch in [0, 1]; returns
    /// (side_maps (N, M, H, W), fused (N, H, W)).
    fn forward<'py>(
        &mut self,
        py: Python<'py>,
        images: PyReadonlyArray4<'py, f64>,
    ) -> PyResult<(Bound<'py, PyArray4<f64>>, Bound<'py, PyArray3<f64>>)> {
        let batch = tensor_from_nchw(images)?;
        let bs = batch.shape();
        let pass = self.graph.forward(&batch, BnMode::Infer).map_err(err)?;
        let m = self.graph.levels();
        let sides = PyArray4::<f64>::zeros(py, (bs.n, m, bs.h, bs.w), false);
        {
            let mut rw = unsafe { sides.as_array_mut() };
            for (level, &z) in pass.outputs.side_maps.iter().enumerate() {
                let t = pass.tape.value(z);
                for n in 0..bs.n {
                    for y in 0..bs.h {
                        for x in 0..bs.w {
                            rw[[n, level, y, x]] = t.at(n, 0, y, x);
                        }
                    }
                }
            }
        }
        let fused = PyArray3::<f64>::zeros(py, (bs.n, bs.h, bs.w), false);
        {
            let mut rw = unsafe { fused.as_array_mut() };
            let t = pass.tape.value(pass.outputs.fused);
            for n in 0..bs.n {
                for y in 0..bs.h {
                    for x in 0..bs.w {
                        rw[[n, y, x]] = t.at(n, 0, y, x);
                    }
                }
            }
        }
        Ok((sides, fused))
    }

    /// Final prediction per image: the fused map for the neighbor-only
    /// network, the selected-output average for the dense baseline.
    fn predict<'py>(
        &mut self,
        py: Python<'py>,
        images: PyReadonlyArray4<'py, f64>,
    ) -> PyResult<Bound<'py, PyArray3<f64>>> {
        let batch = tensor_from_nchw(images)?;
        let bs = batch.shape();
        let pass = self.graph.forward(&batch, BnMode::Infer).map_err(err)?;
        let map = match self.graph.kind {
            GraphKind::Rds => self.graph.prediction(&pass),
            GraphKind::Dss => {
                dss_prediction(&pass.tape, &pass.outputs, &self.selected).map_err(err)?
            }
        };
        let out = PyArray3::<f64>::zeros(py, (bs.n, bs.h, bs.w), false);
        {
            let mut rw = unsafe { out.as_array_mut() };
            for n in 0..bs.n {
                for y in 0..bs.h {
                    for x in 0..bs.w {
                        rw[[n, y, x]] = map.at(n, 0, y, x);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Full-batch supervision steps; returns the total loss per step.
    #[pyo3(signature = (images, ground_truths, steps=1, lr=0.01, momentum=0.9, weight_decay=1e-4, metric="mean-squared"))]
    #[allow(clippy::too_many_arguments)]
    fn train_steps<'py>(
        &mut self,
        images: PyReadonlyArray4<'py, f64>,
        ground_truths: PyReadonlyArray4<'py, f64>,
        steps: usize,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
        metric: &str,
    ) -> PyResult<Vec<f64>> {
        let batch = tensor_from_nchw(images)?;
        let gts = tensor_from_nchw(ground_truths)?;
        let metric = match metric {
            "mean-squared" => LossMetric::MeanSquared,
            "binary-cross-entropy" => LossMetric::BinaryCrossEntropy,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown loss metric {other:?}"
                )))
            }
        };
        let mut state = SgdState::new();
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut pass = self.graph.forward(&batch, BnMode::Train).map_err(err)?;
            let gt_var = pass.tape.leaf(gts.clone(), false);
            let report = total_loss(&mut pass.tape, &pass.outputs, gt_var, metric).map_err(err)?;
            pass.tape.backward(report.total_var).map_err(err)?;
            let grads = collect_grads(&pass).map_err(err)?;
            sgd_step(
                self.graph.params_mut(),
                &grads,
                &mut state,
                lr,
                momentum,
                weight_decay,
            )
            .map_err(err)?;
            losses.push(report.total);
        }
        Ok(losses)
    }
}

/// Mean absolute error of two 8-bit maps rescaled to [0, 1].
#[pyfunction]
fn mae(pred: PyReadonlyArray2<'_, u8>, gt: PyReadonlyArray2<'_, u8>) -> PyResult<f64> {
    rds_core::metrics::mae(&gray_from_array(pred)?, &gray_from_array(gt)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (precision, recall, beta_squared=0.3))]
fn f_measure(precision: f64, recall: f64, beta_squared: f64) -> f64 {
    rds_core::metrics::f_measure(precision, recall, beta_squared)
}

/// Threshold-swept evaluation of paired 8-bit maps. Returns a dict with
/// mae, max_f, argmax_threshold, and per-threshold precision/recall/f.
#[pyfunction]
#[pyo3(signature = (preds, gts, beta_squared=0.3, aggregation="per-image-mean"))]
fn evaluate<'py>(
    py: Python<'py>,
    preds: Vec<PyReadonlyArray2<'py, u8>>,
    gts: Vec<PyReadonlyArray2<'py, u8>>,
    beta_squared: f64,
    aggregation: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let preds = preds
        .into_iter()
        .map(gray_from_array)
        .collect::<PyResult<Vec<_>>>()?;
    let gts = gts
        .into_iter()
        .map(gray_from_array)
        .collect::<PyResult<Vec<_>>>()?;
    let aggregation = match aggregation {
        "per-image-mean" => Aggregation::PerImageMean,
        "pooled" => Aggregation::Pooled,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown aggregation {other:?}"
            )))
        }
    };
    let config = MetricConfig {
        beta_squared,
        aggregation,
        ..MetricConfig::default()
    };
    let report = rds_core::metrics::evaluate(&preds, &gts, &config).map_err(err)?;
    let dict = PyDict::new(py);
    dict.set_item("mae", report.mae)?;
    dict.set_item("max_f", report.max_f)?;
    dict.set_item("argmax_threshold", report.argmax_threshold)?;
    dict.set_item("image_count", report.image_count)?;
    let n = report.pr_points.len();
    let (thresholds, precisions, recalls, fs) = (
        PyArray1::<u8>::zeros(py, n, false),
        PyArray1::<f64>::zeros(py, n, false),
        PyArray1::<f64>::zeros(py, n, false),
        PyArray1::<f64>::zeros(py, n, false),
    );
    {
        let mut t = unsafe { thresholds.as_array_mut() };
        let mut p = unsafe { precisions.as_array_mut() };
        let mut r = unsafe { recalls.as_array_mut() };
        let mut f = unsafe { fs.as_array_mut() };
        for (i, point) in report.pr_points.iter().enumerate() {
            t[i] = point.threshold;
            p[i] = point.precision;
            r[i] = point.recall;
            f[i] = point.f;
        }
    }
    dict.set_item("thresholds", thresholds)?;
    dict.set_item("precision", precisions)?;
    dict.set_item("recall", recalls)?;
    dict.set_item("f", fs)?;
    Ok(dict)
}

/// Union-of-boxes binary map (255 inside, 0 outside); boxes are
/// half-open [x0, x1) x [y0, y1).
#[pyfunction]
fn bbox_to_saliency<'py>(
    py: Python<'py>,
    width: u32,
    height: u32,
    boxes: Vec<(u32, u32, u32, u32)>,
) -> (Bound<'py, PyArray2<u8>>, usize) {
    let boxes: Vec<BoundingBox> = boxes
        .iter()
        .map(|&(x0, y0, x1, y1)| BoundingBox::new(x0, y0, x1, y1))
        .collect();
    let (map, dropped) = rds_core::objectness::bbox_to_saliency(width, height, &boxes);
    (gray_to_array(py, &map), dropped)
}

/// Foreground fraction of a binary (0/255) map.
#[pyfunction]
fn alpha_of(map: PyReadonlyArray2<'_, u8>) -> PyResult<f64> {
    rds_core::objectness::alpha(&gray_from_array(map)?).map_err(err)
}

/// Keep only the most salient level of a multi-valued ground truth.
#[pyfunction]
fn pascal_sod_relabel<'py>(
    py: Python<'py>,
    map: PyReadonlyArray2<'py, u8>,
) -> PyResult<Bound<'py, PyArray2<u8>>> {
    let out = rds_core::objectness::pascal_sod_relabel(&gray_from_array(map)?);
    Ok(gray_to_array(py, &out))
}

/// Dense-CRF refinement of a saliency map in [0, 1] against its
/// (H, W, 3) uint8 image.
#[pyfunction]
#[pyo3(signature = (image, saliency, bilateral_weight=4.0, spatial_weight=3.0,
    theta_alpha=60.0, theta_beta=10.0, theta_gamma=3.0, iterations=5, max_pixels=16384))]
#[allow(clippy::too_many_arguments)]
fn crf_refine<'py>(
    py: Python<'py>,
    image: PyReadonlyArray3<'py, u8>,
    saliency: PyReadonlyArray2<'py, f64>,
    bilateral_weight: f64,
    spatial_weight: f64,
    theta_alpha: f64,
    theta_beta: f64,
    theta_gamma: f64,
    iterations: usize,
    max_pixels: usize,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let img = image.as_array();
    let d = img.shape();
    if d[2] != 3 {
        return Err(PyValueError::new_err("image must be (H, W, 3) uint8"));
    }
    let (h, w) = (d[0], d[1]);
    let mut pixels = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                pixels.push(img[[y, x, c]]);
            }
        }
    }
    let raster = RgbRaster::new(w, h, pixels).map_err(err)?;
    let sal = saliency.as_array();
    if sal.shape() != [h, w] {
        return Err(PyValueError::new_err(format!(
            "saliency shape {:?} does not match image {h}x{w}",
            sal.shape()
        )));
    }
    let mut plane = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            plane.push(sal[[y, x]]);
        }
    }
    let params = CrfParams {
        bilateral_weight,
        spatial_weight,
        theta_alpha,
        theta_beta,
        theta_gamma,
        iterations,
        max_pixels,
    };
    let refined = rds_core::crf::refine(&raster, &plane, &params).map_err(err)?;
    let out = PyArray2::<f64>::zeros(py, (h, w), false);
    {
        let mut rw = unsafe { out.as_array_mut() };
        for y in 0..h {
            for x in 0..w {
                rw[[y, x]] = refined[y * w + x];
            }
        }
    }
    Ok(out)
}

/// Step learning-rate schedule value at an epoch.
#[pyfunction]
#[pyo3(signature = (epoch, base_lr=0.01, decay_factor=0.1, decay_every=10))]
fn lr_at(epoch: usize, base_lr: f64, decay_factor: f64, decay_every: usize) -> f64 {
    let config = TrainConfig {
        base_lr,
        lr_decay_factor: decay_factor,
        lr_decay_every: decay_every,
        ..TrainConfig::default()
    };
    rds_core::train::lr_at(epoch, &config)
}

/// Connection parameter count of the dense topology from one level down
/// to another, carrying k channels.
#[pyfunction]
fn dss_connection_params(from_level: usize, to_level: usize, k: usize) -> usize {
    rds_core::graph::dss_connection_param_count(from_level, to_level, k)
}

/// Parameter count of the grouped up-sample applied to a level's block
/// in the neighbor-only topology.
#[pyfunction]
fn rds_upsample_params(level: usize, levels: usize, k: usize) -> usize {
    rds_core::graph::rds_upsample_param_count(level, levels, k)
}

#[pymodule]
fn rds_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<SaliencyNet>()?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(f_measure, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(bbox_to_saliency, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_of, m)?)?;
    m.add_function(wrap_pyfunction!(pascal_sod_relabel, m)?)?;
    m.add_function(wrap_pyfunction!(crf_refine, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(dss_connection_params, m)?)?;
    m.add_function(wrap_pyfunction!(rds_upsample_params, m)?)?;
    Ok(())
}
