//! Forward and backward math for the tape ops.
//!
//! All loops run in a fixed order (batch, channel, kernel-row-major) so
//! repeated runs are bitwise identical.

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Shape4, Tensor4};

pub(crate) fn conv2d_forward(
    x: &Tensor4,
    w: &Tensor4,
    b: Option<&Tensor4>,
    spec: &ConvSpec,
) -> Result<Tensor4> {
    let xs = x.shape();
    let ws = w.shape();
    let groups = if spec.grouped { xs.c } else { 1 };
    if spec.grouped && spec.out_channels != xs.c {
        return Err(Error::InvalidArgument(format!(
            "grouped convolution requires out_channels == in_channels, got {} vs {}",
            spec.out_channels, xs.c
        )));
    }
    let ci_per_group = xs.c / groups;
    let expected_w = Shape4::new(spec.out_channels, ci_per_group, spec.kernel, spec.kernel);
    if ws != expected_w {
        return Err(Error::shape_mismatch("conv2d weights", ws, expected_w));
    }
    if let Some(b) = b {
        let expected_b = Shape4::new(1, spec.out_channels, 1, 1);
        if b.shape() != expected_b {
            return Err(Error::shape_mismatch("conv2d bias", b.shape(), expected_b));
        }
    }
    let (oh, ow) = match (spec.output_extent(xs.h), spec.output_extent(xs.w)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "conv2d produces empty output for input {} with kernel {}, stride {}, padding {}",
                xs, spec.kernel, spec.stride, spec.padding
            )))
        }
    };

    let os = Shape4::new(xs.n, spec.out_channels, oh, ow);
    let mut out = Tensor4::zeros(os);
    let co_per_group = spec.out_channels / groups;
    let k = spec.kernel;
    let xd = x.data();
    let wd = w.data();
    let od = out.data_mut();
    for n in 0..xs.n {
        for co in 0..spec.out_channels {
            let g = co / co_per_group;
            let bias = b.map_or(0.0, |b| b.data()[co]);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias;
                    for cig in 0..ci_per_group {
                        let ci = g * ci_per_group + cig;
                        for ky in 0..k {
                            let iy = oy * spec.stride + ky;
                            if iy < spec.padding || iy - spec.padding >= xs.h {
                                continue;
                            }
                            let iy = iy - spec.padding;
                            let xrow = xs.at(n, ci, iy, 0);
                            let wrow = ws.at(co, cig, ky, 0);
                            for kx in 0..k {
                                let ix = ox * spec.stride + kx;
                                if ix < spec.padding || ix - spec.padding >= xs.w {
                                    continue;
                                }
                                acc += xd[xrow + (ix - spec.padding)] * wd[wrow + kx];
                            }
                        }
                    }
                    od[os.at(n, co, oy, ox)] = acc;
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &Tensor4,
    w: &Tensor4,
    spec: &ConvSpec,
    gout: &[f64],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Tensor4>, Option<Tensor4>, Option<Tensor4>) {
    let xs = x.shape();
    let ws = w.shape();
    let groups = if spec.grouped { xs.c } else { 1 };
    let ci_per_group = xs.c / groups;
    let co_per_group = spec.out_channels / groups;
    let oh = spec.output_extent(xs.h).unwrap();
    let ow = spec.output_extent(xs.w).unwrap();
    let os = Shape4::new(xs.n, spec.out_channels, oh, ow);
    let k = spec.kernel;

    let mut dx = need_dx.then(|| Tensor4::zeros(xs));
    let mut dw = need_dw.then(|| Tensor4::zeros(ws));
    let mut db = need_db.then(|| Tensor4::zeros(Shape4::new(1, spec.out_channels, 1, 1)));

    let xd = x.data();
    let wd = w.data();
    for n in 0..xs.n {
        for co in 0..spec.out_channels {
            let g = co / co_per_group;
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = gout[os.at(n, co, oy, ox)];
                    if let Some(db) = db.as_mut() {
                        db.data_mut()[co] += go;
                    }
                    for cig in 0..ci_per_group {
                        let ci = g * ci_per_group + cig;
                        for ky in 0..k {
                            let iy = oy * spec.stride + ky;
                            if iy < spec.padding || iy - spec.padding >= xs.h {
                                continue;
                            }
                            let iy = iy - spec.padding;
                            for kx in 0..k {
                                let ix = ox * spec.stride + kx;
                                if ix < spec.padding || ix - spec.padding >= xs.w {
                                    continue;
                                }
                                let ix = ix - spec.padding;
                                if let Some(dx) = dx.as_mut() {
                                    dx.data_mut()[xs.at(n, ci, iy, ix)] +=
                                        wd[ws.at(co, cig, ky, kx)] * go;
                                }
                                if let Some(dw) = dw.as_mut() {
                                    dw.data_mut()[ws.at(co, cig, ky, kx)] +=
                                        xd[xs.at(n, ci, iy, ix)] * go;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Per-channel transposed convolution with non-overlapping stamps
/// (stride == kernel side). Weights are (C, 1, k, k).
pub(crate) fn conv_t_grouped_forward(x: &Tensor4, w: &Tensor4, kernel: usize) -> Result<Tensor4> {
    let xs = x.shape();
    let expected_w = Shape4::new(xs.c, 1, kernel, kernel);
    if w.shape() != expected_w {
        return Err(Error::shape_mismatch(
            "grouped transposed conv weights",
            w.shape(),
            expected_w,
        ));
    }
    let os = Shape4::new(xs.n, xs.c, xs.h * kernel, xs.w * kernel);
    let mut out = Tensor4::zeros(os);
    let ws = w.shape();
    let xd = x.data();
    let wd = w.data();
    let od = out.data_mut();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for iy in 0..xs.h {
                for ix in 0..xs.w {
                    let v = xd[xs.at(n, c, iy, ix)];
                    for ky in 0..kernel {
                        let orow = os.at(n, c, iy * kernel + ky, ix * kernel);
                        let wrow = ws.at(c, 0, ky, 0);
                        for kx in 0..kernel {
                            od[orow + kx] = v * wd[wrow + kx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn conv_t_grouped_backward(
    x: &Tensor4,
    w: &Tensor4,
    kernel: usize,
    gout: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor4>, Option<Tensor4>) {
    let xs = x.shape();
    let ws = w.shape();
    let os = Shape4::new(xs.n, xs.c, xs.h * kernel, xs.w * kernel);
    let mut dx = need_dx.then(|| Tensor4::zeros(xs));
    let mut dw = need_dw.then(|| Tensor4::zeros(ws));
    let xd = x.data();
    let wd = w.data();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for iy in 0..xs.h {
                for ix in 0..xs.w {
                    let mut acc = 0.0;
                    for ky in 0..kernel {
                        let orow = os.at(n, c, iy * kernel + ky, ix * kernel);
                        let wrow = ws.at(c, 0, ky, 0);
                        for kx in 0..kernel {
                            let go = gout[orow + kx];
                            acc += wd[wrow + kx] * go;
                            if let Some(dw) = dw.as_mut() {
                                dw.data_mut()[wrow + kx] += xd[xs.at(n, c, iy, ix)] * go;
                            }
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        dx.data_mut()[xs.at(n, c, iy, ix)] = acc;
                    }
                }
            }
        }
    }
    (dx, dw)
}

/// Full transposed convolution. Weights are (C_in, C_out, k, k); output
/// spatial extent is (H-1)*stride + k - 2*padding.
pub(crate) fn conv_t_full_forward(
    x: &Tensor4,
    w: &Tensor4,
    stride: usize,
    padding: usize,
) -> Result<Tensor4> {
    let xs = x.shape();
    let ws = w.shape();
    if ws.n != xs.c {
        return Err(Error::shape_mismatch(
            "transposed conv weights (in-channel extent)",
            ws,
            format!("(in={}, out, k, k)", xs.c),
        ));
    }
    let k = ws.h;
    if ws.w != k {
        return Err(Error::InvalidArgument(format!(
            "transposed conv kernel must be square, got {}x{}",
            ws.h, ws.w
        )));
    }
    let full_h = (xs.h - 1) * stride + k;
    let full_w = (xs.w - 1) * stride + k;
    if full_h < 2 * padding + 1 || full_w < 2 * padding + 1 {
        return Err(Error::InvalidArgument(format!(
            "transposed conv padding {padding} swallows the whole output ({full_h}x{full_w})"
        )));
    }
    let os = Shape4::new(xs.n, ws.c, full_h - 2 * padding, full_w - 2 * padding);
    let mut out = Tensor4::zeros(os);
    let xd = x.data();
    let wd = w.data();
    let od = out.data_mut();
    for n in 0..xs.n {
        for ci in 0..xs.c {
            for iy in 0..xs.h {
                for ix in 0..xs.w {
                    let v = xd[xs.at(n, ci, iy, ix)];
                    for co in 0..os.c {
                        for ky in 0..k {
                            let oy = iy * stride + ky;
                            if oy < padding || oy - padding >= os.h {
                                continue;
                            }
                            for kx in 0..k {
                                let ox = ix * stride + kx;
                                if ox < padding || ox - padding >= os.w {
                                    continue;
                                }
                                od[os.at(n, co, oy - padding, ox - padding)] +=
                                    v * wd[ws.at(ci, co, ky, kx)];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn conv_t_full_backward(
    x: &Tensor4,
    w: &Tensor4,
    stride: usize,
    padding: usize,
    gout: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor4>, Option<Tensor4>) {
    let xs = x.shape();
    let ws = w.shape();
    let k = ws.h;
    let os = Shape4::new(
        xs.n,
        ws.c,
        (xs.h - 1) * stride + k - 2 * padding,
        (xs.w - 1) * stride + k - 2 * padding,
    );
    let mut dx = need_dx.then(|| Tensor4::zeros(xs));
    let mut dw = need_dw.then(|| Tensor4::zeros(ws));
    let xd = x.data();
    let wd = w.data();
    for n in 0..xs.n {
        for ci in 0..xs.c {
            for iy in 0..xs.h {
                for ix in 0..xs.w {
                    let v = xd[xs.at(n, ci, iy, ix)];
                    let mut acc = 0.0;
                    for co in 0..os.c {
                        for ky in 0..k {
                            let oy = iy * stride + ky;
                            if oy < padding || oy - padding >= os.h {
                                continue;
                            }
                            for kx in 0..k {
                                let ox = ix * stride + kx;
                                if ox < padding || ox - padding >= os.w {
                                    continue;
                                }
                                let go = gout[os.at(n, co, oy - padding, ox - padding)];
                                acc += wd[ws.at(ci, co, ky, kx)] * go;
                                if let Some(dw) = dw.as_mut() {
                                    dw.data_mut()[ws.at(ci, co, ky, kx)] += v * go;
                                }
                            }
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        dx.data_mut()[xs.at(n, ci, iy, ix)] = acc;
                    }
                }
            }
        }
    }
    (dx, dw)
}

/// Per-channel mean and biased variance over (n, h, w), two-pass.
pub(crate) fn channel_stats(x: &Tensor4) -> (Vec<f64>, Vec<f64>) {
    let xs = x.shape();
    let m = (xs.n * xs.h * xs.w) as f64;
    let mut mean = vec![0.0; xs.c];
    let mut var = vec![0.0; xs.c];
    let xd = x.data();
    for c in 0..xs.c {
        let mut sum = 0.0;
        for n in 0..xs.n {
            let base = xs.at(n, c, 0, 0);
            for i in 0..xs.h * xs.w {
                sum += xd[base + i];
            }
        }
        mean[c] = sum / m;
        let mut sq = 0.0;
        for n in 0..xs.n {
            let base = xs.at(n, c, 0, 0);
            for i in 0..xs.h * xs.w {
                let d = xd[base + i] - mean[c];
                sq += d * d;
            }
        }
        var[c] = sq / m;
    }
    (mean, var)
}

pub(crate) fn batchnorm_normalize(
    x: &Tensor4,
    gamma: &Tensor4,
    beta: &Tensor4,
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Tensor4 {
    let xs = x.shape();
    let mut out = Tensor4::zeros(xs);
    let xd = x.data();
    let od = out.data_mut();
    let plane = xs.h * xs.w;
    for c in 0..xs.c {
        let ivar = 1.0 / (var[c] + eps).sqrt();
        let g = gamma.data()[c];
        let b = beta.data()[c];
        for n in 0..xs.n {
            let base = xs.at(n, c, 0, 0);
            for i in 0..plane {
                od[base + i] = g * (xd[base + i] - mean[c]) * ivar + b;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_backward(
    x: &Tensor4,
    gamma: &Tensor4,
    mean: &[f64],
    var: &[f64],
    eps: f64,
    through_stats: bool,
    gout: &[f64],
    need_dx: bool,
) -> (Option<Tensor4>, Tensor4, Tensor4) {
    let xs = x.shape();
    let m = (xs.n * xs.h * xs.w) as f64;
    let plane = xs.h * xs.w;
    let xd = x.data();
    let mut dx = need_dx.then(|| Tensor4::zeros(xs));
    let mut dgamma = Tensor4::zeros(Shape4::new(1, xs.c, 1, 1));
    let mut dbeta = Tensor4::zeros(Shape4::new(1, xs.c, 1, 1));
    for c in 0..xs.c {
        let ivar = 1.0 / (var[c] + eps).sqrt();
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for n in 0..xs.n {
            let base = xs.at(n, c, 0, 0);
            for i in 0..plane {
                let g = gout[base + i];
                sum_g += g;
                sum_gx += g * (xd[base + i] - mean[c]) * ivar;
            }
        }
        dgamma.data_mut()[c] = sum_gx;
        dbeta.data_mut()[c] = sum_g;
        if let Some(dx) = dx.as_mut() {
            let gam = gamma.data()[c];
            let dxd = dx.data_mut();
            for n in 0..xs.n {
                let base = xs.at(n, c, 0, 0);
                for i in 0..plane {
                    let g = gout[base + i];
                    let xhat = (xd[base + i] - mean[c]) * ivar;
                    dxd[base + i] = if through_stats {
                        gam * ivar * (g - sum_g / m - xhat * sum_gx / m)
                    } else {
                        gam * ivar * g
                    };
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn maxpool2_forward(x: &Tensor4) -> (Tensor4, Vec<usize>) {
    let xs = x.shape();
    let os = Shape4::new(xs.n, xs.c, xs.h / 2, xs.w / 2);
    let mut out = Tensor4::zeros(os);
    let mut argmax = vec![0usize; os.count()];
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut best_idx = xs.at(n, c, 2 * oy, 2 * ox);
                    let mut best = xd[best_idx];
                    for (dy, dx_) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = xs.at(n, c, 2 * oy + dy, 2 * ox + dx_);
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                    let o = os.at(n, c, oy, ox);
                    od[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    (out, argmax)
}

/// Bilinear interpolation weights for one output coordinate
/// (half-pixel-center convention).
#[inline]
pub(crate) fn bilinear_axis(src: usize, dst: usize, o: usize) -> (usize, usize, f64) {
    let scale = src as f64 / dst as f64;
    let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(src - 1);
    (lo, hi, s - lo as f64)
}

pub(crate) fn bilinear_forward(x: &Tensor4, th: usize, tw: usize) -> Result<Tensor4> {
    let xs = x.shape();
    if th == 0 || tw == 0 {
        return Err(Error::InvalidArgument(
            "bilinear resize target extents must be >= 1".into(),
        ));
    }
    let os = Shape4::new(xs.n, xs.c, th, tw);
    let mut out = Tensor4::zeros(os);
    let xd = x.data();
    let od = out.data_mut();
    for oy in 0..th {
        let (y0, y1, fy) = bilinear_axis(xs.h, th, oy);
        for ox in 0..tw {
            let (x0, x1, fx) = bilinear_axis(xs.w, tw, ox);
            let w00 = (1.0 - fy) * (1.0 - fx);
            let w01 = (1.0 - fy) * fx;
            let w10 = fy * (1.0 - fx);
            let w11 = fy * fx;
            for n in 0..xs.n {
                for c in 0..xs.c {
                    let v = w00 * xd[xs.at(n, c, y0, x0)]
                        + w01 * xd[xs.at(n, c, y0, x1)]
                        + w10 * xd[xs.at(n, c, y1, x0)]
                        + w11 * xd[xs.at(n, c, y1, x1)];
                    od[os.at(n, c, oy, ox)] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbor resize with half-pixel centers; used for strictly
/// binary ground-truth maps.
pub(crate) fn nearest_forward(x: &Tensor4, th: usize, tw: usize) -> Result<Tensor4> {
    let xs = x.shape();
    if th == 0 || tw == 0 {
        return Err(Error::InvalidArgument(
            "nearest resize target extents must be >= 1".into(),
        ));
    }
    let os = Shape4::new(xs.n, xs.c, th, tw);
    let mut out = Tensor4::zeros(os);
    let od = out.data_mut();
    let sy = xs.h as f64 / th as f64;
    let sx = xs.w as f64 / tw as f64;
    for oy in 0..th {
        let iy = (((oy as f64 + 0.5) * sy).floor() as usize).min(xs.h - 1);
        for ox in 0..tw {
            let ix = (((ox as f64 + 0.5) * sx).floor() as usize).min(xs.w - 1);
            for n in 0..xs.n {
                for c in 0..xs.c {
                    od[os.at(n, c, oy, ox)] = x.data()[xs.at(n, c, iy, ix)];
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn bilinear_backward(xs: Shape4, th: usize, tw: usize, gout: &[f64]) -> Tensor4 {
    let os = Shape4::new(xs.n, xs.c, th, tw);
    let mut dx = Tensor4::zeros(xs);
    let dxd = dx.data_mut();
    for oy in 0..th {
        let (y0, y1, fy) = bilinear_axis(xs.h, th, oy);
        for ox in 0..tw {
            let (x0, x1, fx) = bilinear_axis(xs.w, tw, ox);
            let w00 = (1.0 - fy) * (1.0 - fx);
            let w01 = (1.0 - fy) * fx;
            let w10 = fy * (1.0 - fx);
            let w11 = fy * fx;
            for n in 0..xs.n {
                for c in 0..xs.c {
                    let g = gout[os.at(n, c, oy, ox)];
                    dxd[xs.at(n, c, y0, x0)] += w00 * g;
                    dxd[xs.at(n, c, y0, x1)] += w01 * g;
                    dxd[xs.at(n, c, y1, x0)] += w10 * g;
                    dxd[xs.at(n, c, y1, x1)] += w11 * g;
                }
            }
        }
    }
    dx
}
