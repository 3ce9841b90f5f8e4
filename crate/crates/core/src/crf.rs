//! Exact two-label mean-field inference on a fully connected pairwise
//! field, used to sharpen saliency maps against image evidence.
//!
//! The pairwise pass is the literal O(N^2) double sum, guarded by a
//! pixel budget; there is no lattice approximation. Per destination
//! pixel the source summation order is fixed, so results do not depend
//! on thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::RgbRaster;

/// Probabilities are clamped to [CLAMP, 1-CLAMP] before the unaries are
/// formed.
pub const UNARY_CLAMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrfParams {
    /// Appearance kernel weight (w1).
    pub bilateral_weight: f64,
    /// Smoothness kernel weight (w2).
    pub spatial_weight: f64,
    /// Bilateral spatial bandwidth, pixels.
    pub theta_alpha: f64,
    /// Bilateral color bandwidth, 8-bit color units.
    pub theta_beta: f64,
    /// Smoothness spatial bandwidth, pixels.
    pub theta_gamma: f64,
    pub iterations: usize,
    /// Exact pairwise passes refuse images above this pixel count.
    pub max_pixels: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            bilateral_weight: 4.0,
            spatial_weight: 3.0,
            theta_alpha: 60.0,
            theta_beta: 10.0,
            theta_gamma: 3.0,
            iterations: 5,
            max_pixels: 128 * 128,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta_alpha", self.theta_alpha),
            ("theta_beta", self.theta_beta),
            ("theta_gamma", self.theta_gamma),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.bilateral_weight < 0.0 || self.spatial_weight < 0.0 {
            return Err(Error::InvalidArgument(
                "kernel weights must be non-negative".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Refine a saliency map in [0, 1] against its image; returns the
/// salient-label marginal per pixel.
pub fn refine(image: &RgbRaster, saliency: &[f64], params: &CrfParams) -> Result<Vec<f64>> {
    refine_inspect(image, saliency, params, |_, _, _| {})
}

/// As [`refine`], invoking `inspect(iteration, q_salient, q_background)`
/// after each mean-field update.
pub fn refine_inspect(
    image: &RgbRaster,
    saliency: &[f64],
    params: &CrfParams,
    inspect: impl FnMut(usize, &[f64], &[f64]),
) -> Result<Vec<f64>> {
    let n = image.width * image.height;
    if saliency.len() != n {
        return Err(Error::shape_mismatch(
            "crf saliency extents",
            saliency.len(),
            format!("{}x{} = {n}", image.width, image.height),
        ));
    }
    // unary beliefs exp(-u) = clamped probabilities
    let bel_s: Vec<f64> = saliency
        .iter()
        .map(|&p| p.clamp(UNARY_CLAMP, 1.0 - UNARY_CLAMP))
        .collect();
    let bel_b: Vec<f64> = saliency
        .iter()
        .map(|&p| (1.0 - p).clamp(UNARY_CLAMP, 1.0 - UNARY_CLAMP))
        .collect();
    mean_field_two_label(image, &bel_s, &bel_b, params, inspect)
}

/// Mean-field inference given the unary beliefs exp(-u) of both labels
/// directly; returns the first label's marginal.
pub fn mean_field_two_label(
    image: &RgbRaster,
    bel_s: &[f64],
    bel_b: &[f64],
    params: &CrfParams,
    mut inspect: impl FnMut(usize, &[f64], &[f64]),
) -> Result<Vec<f64>> {
    params.validate()?;
    let n = image.width * image.height;
    if bel_s.len() != n || bel_b.len() != n {
        return Err(Error::shape_mismatch(
            "crf belief extents",
            bel_s.len(),
            format!("{}x{} = {n}", image.width, image.height),
        ));
    }
    if n > params.max_pixels {
        return Err(Error::InvalidArgument(format!(
            "image has {n} pixels; exact pairwise passes are guarded at {} \
             (raise max_pixels to override)",
            params.max_pixels
        )));
    }

    // feature vectors: position and color per pixel
    let mut px = vec![0.0f64; n];
    let mut py = vec![0.0f64; n];
    let mut color = vec![[0.0f64; 3]; n];
    for y in 0..image.height {
        for x in 0..image.width {
            let i = y * image.width + x;
            px[i] = x as f64;
            py[i] = y as f64;
            let [r, g, b] = image.at(x, y);
            color[i] = [r as f64, g as f64, b as f64];
        }
    }

    let inv2a = 1.0 / (2.0 * params.theta_alpha * params.theta_alpha);
    let inv2b = 1.0 / (2.0 * params.theta_beta * params.theta_beta);
    let inv2g = 1.0 / (2.0 * params.theta_gamma * params.theta_gamma);
    let (w1, w2) = (params.bilateral_weight, params.spatial_weight);

    // init: normalized unary
    let mut qs: Vec<f64> = bel_s
        .iter()
        .zip(bel_b)
        .map(|(&s, &b)| s / (s + b))
        .collect();
    let mut qb: Vec<f64> = bel_s
        .iter()
        .zip(bel_b)
        .map(|(&s, &b)| b / (s + b))
        .collect();

    for iter in 0..params.iterations {
        let pairs: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                // message: kernel-weighted mass of each label over all
                // other pixels, in source index order
                let mut ms = 0.0;
                let mut mb = 0.0;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let dx = px[i] - px[j];
                    let dy = py[i] - py[j];
                    let d2 = dx * dx + dy * dy;
                    let dr = color[i][0] - color[j][0];
                    let dg = color[i][1] - color[j][1];
                    let db = color[i][2] - color[j][2];
                    let c2 = dr * dr + dg * dg + db * db;
                    let k = w1 * (-d2 * inv2a - c2 * inv2b).exp() + w2 * (-d2 * inv2g).exp();
                    ms += k * qs[j];
                    mb += k * qb[j];
                }
                // Potts compatibility: each label is penalized by the
                // other label's message; shift by the smaller penalty so
                // a zero-kernel run multiplies the unary by exactly 1.0
                let shift = ms.min(mb);
                let new_s = bel_s[i] * (-(mb - shift)).exp();
                let new_b = bel_b[i] * (-(ms - shift)).exp();
                let z = new_s + new_b;
                (new_s / z, new_b / z)
            })
            .collect();
        for (i, (s, b)) in pairs.into_iter().enumerate() {
            qs[i] = s;
            qb[i] = b;
        }
        inspect(iter, &qs, &qb);
    }
    Ok(qs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_image(width: usize, height: usize, rgb: [u8; 3]) -> RgbRaster {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        RgbRaster::new(width, height, pixels).unwrap()
    }

    #[test]
    fn zero_pairwise_weights_return_normalized_unary_exactly() {
        let image = flat_image(4, 3, [10, 200, 30]);
        let saliency: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let params = CrfParams {
            bilateral_weight: 0.0,
            spatial_weight: 0.0,
            iterations: 7,
            ..CrfParams::default()
        };
        let out = refine(&image, &saliency, &params).unwrap();
        for (o, &p) in out.iter().zip(&saliency) {
            let s = p.clamp(UNARY_CLAMP, 1.0 - UNARY_CLAMP);
            let b = (1.0 - p).clamp(UNARY_CLAMP, 1.0 - UNARY_CLAMP);
            assert_eq!(*o, s / (s + b));
        }
    }

    #[test]
    fn uniform_inputs_stay_uniform() {
        let image = flat_image(5, 5, [128, 128, 128]);
        let saliency = vec![0.5; 25];
        let params = CrfParams {
            iterations: 3,
            ..CrfParams::default()
        };
        let out = refine(&image, &saliency, &params).unwrap();
        for &v in &out {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn distributions_normalize_each_iteration() {
        let image = flat_image(6, 6, [40, 90, 160]);
        let saliency: Vec<f64> = (0..36).map(|i| ((i * 7) % 36) as f64 / 35.0).collect();
        let params = CrfParams {
            iterations: 4,
            ..CrfParams::default()
        };
        let mut checked = 0;
        refine_inspect(&image, &saliency, &params, |_, qs, qb| {
            for (s, b) in qs.iter().zip(qb) {
                assert!((s + b - 1.0).abs() <= 1e-12);
            }
            checked += 1;
        })
        .unwrap();
        assert_eq!(checked, 4);
    }

    #[test]
    fn mirror_equivariance() {
        let width = 6;
        let height = 4;
        let mut pixels = Vec::new();
        for i in 0..width * height {
            pixels.extend_from_slice(&[(i * 11 % 256) as u8, (i * 29 % 256) as u8, (i * 53 % 256) as u8]);
        }
        let image = RgbRaster::new(width, height, pixels).unwrap();
        let saliency: Vec<f64> = (0..width * height).map(|i| (i % 9) as f64 / 8.0).collect();

        let mirror_rgb = |img: &RgbRaster| {
            let mut out = img.pixels.clone();
            for y in 0..img.height {
                for x in 0..img.width {
                    let src = (y * img.width + x) * 3;
                    let dst = (y * img.width + (img.width - 1 - x)) * 3;
                    out[dst..dst + 3].copy_from_slice(&img.pixels[src..src + 3]);
                }
            }
            RgbRaster::new(img.width, img.height, out).unwrap()
        };
        let mirror_map = |map: &[f64]| {
            let mut out = map.to_vec();
            for y in 0..height {
                for x in 0..width {
                    out[y * width + (width - 1 - x)] = map[y * width + x];
                }
            }
            out
        };

        let params = CrfParams {
            iterations: 3,
            ..CrfParams::default()
        };
        let direct = refine(&image, &saliency, &params).unwrap();
        let mirrored = refine(&mirror_rgb(&image), &mirror_map(&saliency), &params).unwrap();
        let back = mirror_map(&mirrored);
        for (a, b) in direct.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unary_shift_invariance() {
        // adding a constant c to both labels' unaries scales both
        // beliefs by exp(-c); the marginal must not move beyond round-off
        let image = flat_image(4, 4, [77, 77, 77]);
        let bel_s: Vec<f64> = (0..16).map(|i| 0.1 + 0.05 * i as f64).collect();
        let bel_b: Vec<f64> = bel_s.iter().map(|s| 1.0 - s).collect();
        let params = CrfParams {
            iterations: 2,
            ..CrfParams::default()
        };
        let base = mean_field_two_label(&image, &bel_s, &bel_b, &params, |_, _, _| {}).unwrap();
        let c = 1.7f64;
        let scaled_s: Vec<f64> = bel_s.iter().map(|v| v * (-c).exp()).collect();
        let scaled_b: Vec<f64> = bel_b.iter().map(|v| v * (-c).exp()).collect();
        let shifted =
            mean_field_two_label(&image, &scaled_s, &scaled_b, &params, |_, _, _| {}).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn guard_rejects_large_inputs_naming_limit() {
        let image = flat_image(10, 10, [0, 0, 0]);
        let saliency = vec![0.5; 100];
        let params = CrfParams {
            max_pixels: 64,
            ..CrfParams::default()
        };
        let err = refine(&image, &saliency, &params).unwrap_err().to_string();
        assert!(err.contains("64"), "{err}");
    }

    #[test]
    fn extent_mismatch_is_rejected() {
        let image = flat_image(4, 4, [0, 0, 0]);
        let saliency = vec![0.5; 15];
        assert!(refine(&image, &saliency, &CrfParams::default()).is_err());
    }

    #[test]
    fn params_validation() {
        let mut p = CrfParams::default();
        p.iterations = 0;
        assert!(p.validate().is_err());
        p = CrfParams::default();
        p.theta_beta = 0.0;
        assert!(p.validate().is_err());
        p = CrfParams::default();
        p.bilateral_weight = -1.0;
        assert!(p.validate().is_err());
    }
}
