//! Brute-force reference implementations and synthetic fixtures used to
//! verify the main crate. Everything here is written independently of
//! the production code paths it checks: direct nested loops, no shared
//! kernels.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rds_core::crf::{CrfParams, UNARY_CLAMP};
use rds_core::formats::{GrayRaster, RgbRaster};
use rds_core::metrics::{f_measure, Aggregation, MetricConfig};
use rds_core::tensor::{ConvSpec, Shape4, Tensor4};
use rds_core::train::TrainingSample;

/// Direct convolution: six nested loops over output and kernel
/// coordinates, plus batch and channel.
pub fn conv2d_oracle(x: &Tensor4, w: &Tensor4, bias: Option<&[f64]>, spec: &ConvSpec) -> Tensor4 {
    let xs = x.shape();
    let oh = (xs.h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
    let ow = (xs.w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
    let groups = if spec.grouped { xs.c } else { 1 };
    let cig = xs.c / groups;
    let cog = spec.out_channels / groups;
    let mut out = Tensor4::zeros(Shape4::new(xs.n, spec.out_channels, oh, ow));
    for n in 0..xs.n {
        for co in 0..spec.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[co]);
                    for ky in 0..spec.kernel {
                        for kx in 0..spec.kernel {
                            for c in 0..cig {
                                let ci = (co / cog) * cig + c;
                                let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += x.at(n, ci, iy as usize, ix as usize)
                                    * w.at(co, c, ky, kx);
                            }
                        }
                    }
                    out.set(n, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Scatter-accumulate transposed convolution: every input pixel deposits
/// its kernel-weighted stamp into the output.
pub fn tconv_grouped_oracle(x: &Tensor4, w: &Tensor4, kernel: usize, stride: usize) -> Tensor4 {
    let xs = x.shape();
    let mut out = Tensor4::zeros(Shape4::new(xs.n, xs.c, xs.h * stride, xs.w * stride));
    for n in 0..xs.n {
        for c in 0..xs.c {
            for iy in 0..xs.h {
                for ix in 0..xs.w {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let prev = out.at(n, c, iy * stride + ky, ix * stride + kx);
                            out.set(
                                n,
                                c,
                                iy * stride + ky,
                                ix * stride + kx,
                                prev + x.at(n, c, iy, ix) * w.at(c, 0, ky, kx),
                            );
                        }
                    }
                }
            }
        }
    }
    out
}

/// Scatter-accumulate full transposed convolution with cropping padding.
pub fn tconv_full_oracle(x: &Tensor4, w: &Tensor4, stride: usize, padding: usize) -> Tensor4 {
    let xs = x.shape();
    let ws = w.shape();
    let k = ws.h;
    let oh = (xs.h - 1) * stride + k - 2 * padding;
    let ow = (xs.w - 1) * stride + k - 2 * padding;
    let mut out = Tensor4::zeros(Shape4::new(xs.n, ws.c, oh, ow));
    for n in 0..xs.n {
        for ci in 0..xs.c {
            for co in 0..ws.c {
                for iy in 0..xs.h {
                    for ix in 0..xs.w {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * stride + ky) as isize - padding as isize;
                                let ox = (ix * stride + kx) as isize - padding as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                let prev = out.at(n, co, oy as usize, ox as usize);
                                out.set(
                                    n,
                                    co,
                                    oy as usize,
                                    ox as usize,
                                    prev + x.at(n, ci, iy, ix) * w.at(ci, co, ky, kx),
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Elementwise mean-squared difference.
pub fn mse_oracle(p: &[f64], g: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..p.len() {
        acc += (p[i] - g[i]) * (p[i] - g[i]);
    }
    acc / p.len() as f64
}

/// Elementwise mean absolute difference of 8-bit maps rescaled to [0,1].
pub fn mae_oracle(pred: &GrayRaster, gt: &GrayRaster) -> f64 {
    let mut acc = 0.0;
    for i in 0..pred.pixels.len() {
        acc += (pred.pixels[i] as f64 / 255.0 - gt.pixels[i] as f64 / 255.0).abs();
    }
    acc / pred.pixels.len() as f64
}

/// Confusion counts of one pair at one threshold by direct pixel loop.
pub fn confusion_oracle(pred: &GrayRaster, gt: &GrayRaster, threshold: u8) -> (u64, u64, u64) {
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for i in 0..pred.pixels.len() {
        let pos = pred.pixels[i] > threshold;
        let truth = gt.pixels[i] > 127;
        match (pos, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    (tp, fp, fneg)
}

/// Reference per-threshold precision/recall/F sweep with both
/// aggregations and the guarded zero-denominator conventions.
pub fn evaluate_oracle(
    preds: &[GrayRaster],
    gts: &[GrayRaster],
    config: &MetricConfig,
) -> (f64, Vec<(u8, f64, f64, f64)>, f64, u8) {
    let mut mae_sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        mae_sum += mae_oracle(p, g);
    }
    let mut points = Vec::new();
    for &t in &config.thresholds {
        let (precision, recall) = match config.aggregation {
            Aggregation::PerImageMean => {
                let mut ps = 0.0;
                let mut rs = 0.0;
                for (p, g) in preds.iter().zip(gts) {
                    let (tp, fp, fneg) = confusion_oracle(p, g, t);
                    let gt_empty = tp + fneg == 0;
                    ps += if tp + fp == 0 {
                        if gt_empty {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        tp as f64 / (tp + fp) as f64
                    };
                    rs += if gt_empty {
                        1.0
                    } else {
                        tp as f64 / (tp + fneg) as f64
                    };
                }
                (ps / preds.len() as f64, rs / preds.len() as f64)
            }
            Aggregation::Pooled => {
                let (mut tp, mut fp, mut fneg) = (0, 0, 0);
                for (p, g) in preds.iter().zip(gts) {
                    let (a, b, c) = confusion_oracle(p, g, t);
                    tp += a;
                    fp += b;
                    fneg += c;
                }
                let gt_empty = tp + fneg == 0;
                let precision = if tp + fp == 0 {
                    if gt_empty {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    tp as f64 / (tp + fp) as f64
                };
                let recall = if gt_empty {
                    1.0
                } else {
                    tp as f64 / (tp + fneg) as f64
                };
                (precision, recall)
            }
        };
        points.push((t, precision, recall, f_measure(precision, recall, config.beta_squared)));
    }
    let (mut max_f, mut argmax) = (f64::NEG_INFINITY, 0);
    for &(t, _, _, f) in &points {
        if f > max_f {
            max_f = f;
            argmax = t;
        }
    }
    (mae_sum / preds.len() as f64, points, max_f, argmax)
}

/// Textbook dense mean-field in the log domain: unaries as -log of the
/// clamped probabilities, messages from the current distribution, update
/// by max-shifted softmax of (-unary - compatibility-weighted message).
pub fn crf_oracle(image: &RgbRaster, saliency: &[f64], params: &CrfParams) -> Vec<f64> {
    let n = image.width * image.height;
    let us: Vec<f64> = saliency
        .iter()
        .map(|&p| -(p.clamp(UNARY_CLAMP, 1.0 - UNARY_CLAMP)).ln())
        .collect();
    let ub: Vec<f64> = saliency
        .iter()
        .map(|&p| -((1.0 - p).clamp(UNARY_CLAMP, 1.0 - UNARY_CLAMP)).ln())
        .collect();

    let kernel = |i: usize, j: usize| -> f64 {
        let (xi, yi) = ((i % image.width) as f64, (i / image.width) as f64);
        let (xj, yj) = ((j % image.width) as f64, (j / image.width) as f64);
        let d2 = (xi - xj).powi(2) + (yi - yj).powi(2);
        let ci = image.at(i % image.width, i / image.width);
        let cj = image.at(j % image.width, j / image.width);
        let c2 = (0..3).map(|k| (ci[k] as f64 - cj[k] as f64).powi(2)).sum::<f64>();
        params.bilateral_weight
            * (-d2 / (2.0 * params.theta_alpha.powi(2)) - c2 / (2.0 * params.theta_beta.powi(2)))
                .exp()
            + params.spatial_weight * (-d2 / (2.0 * params.theta_gamma.powi(2))).exp()
    };

    // init: per-pixel softmax of the negated unaries
    let mut qs = vec![0.0; n];
    let mut qb = vec![0.0; n];
    for i in 0..n {
        let mx = (-us[i]).max(-ub[i]);
        let es = (-us[i] - mx).exp();
        let eb = (-ub[i] - mx).exp();
        qs[i] = es / (es + eb);
        qb[i] = eb / (es + eb);
    }
    for _ in 0..params.iterations {
        let mut next_s = vec![0.0; n];
        let mut next_b = vec![0.0; n];
        for i in 0..n {
            let mut ms = 0.0;
            let mut mb = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let k = kernel(i, j);
                ms += k * qs[j];
                mb += k * qb[j];
            }
            // Potts: each label pays the other label's message
            let as_ = -us[i] - mb;
            let ab = -ub[i] - ms;
            let mx = as_.max(ab);
            let es = (as_ - mx).exp();
            let eb = (ab - mx).exp();
            next_s[i] = es / (es + eb);
            next_b[i] = eb / (es + eb);
        }
        qs = next_s;
        qb = next_b;
    }
    qs
}

/// White axis-aligned rectangle on black, image and matching ground
/// truth; rectangles vary with the index.
pub fn rectangle_sample(index: usize, side: usize) -> TrainingSample {
    let mut image = Tensor4::zeros(Shape4::new(1, 3, side, side));
    let mut gt = Tensor4::zeros(Shape4::new(1, 1, side, side));
    let q = side / 4;
    let x0 = (index * 3) % (side / 2);
    let y0 = (index * 5) % (side / 2);
    let w = q + (index * 7) % (side / 4).max(1);
    let h = q + (index * 11) % (side / 4).max(1);
    for y in y0..(y0 + h).min(side) {
        for x in x0..(x0 + w).min(side) {
            for c in 0..3 {
                image.set(0, c, y, x, 1.0);
            }
            gt.set(0, 0, y, x, 1.0);
        }
    }
    TrainingSample::new(image, gt).unwrap()
}

pub fn rectangle_dataset(count: usize, side: usize) -> Vec<TrainingSample> {
    (0..count).map(|i| rectangle_sample(i, side)).collect()
}

/// Uniform random tensor in [lo, hi] from a fixed-seed generator.
pub fn random_tensor(shape: Shape4, lo: f64, hi: f64, seed: u64) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::rand_uniform(shape, lo, hi, &mut rng)
}

/// Random gray raster from a fixed seed.
pub fn random_raster(width: usize, height: usize, seed: u64) -> GrayRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GrayRaster::new(
        width,
        height,
        (0..width * height).map(|_| rng.gen()).collect(),
    )
    .unwrap()
}

/// Random binary (0/255) raster from a fixed seed.
pub fn random_binary_raster(width: usize, height: usize, seed: u64) -> GrayRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GrayRaster::new(
        width,
        height,
        (0..width * height)
            .map(|_| if rng.gen::<bool>() { 255 } else { 0 })
            .collect(),
    )
    .unwrap()
}

/// Random RGB raster from a fixed seed.
pub fn random_rgb(width: usize, height: usize, seed: u64) -> RgbRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbRaster::new(
        width,
        height,
        (0..width * height * 3).map(|_| rng.gen()).collect(),
    )
    .unwrap()
}
