//! Minimal deterministic differentiable tensor engine.
//!
//! Exactly the layer vocabulary the saliency graphs need: convolution,
//! grouped/full transposed convolution, batch normalization, ReLU, max
//! pooling, bilinear resize, channel concatenation, elementwise add,
//! sigmoid, and the pixelwise losses, each with reverse-mode gradients
//! recorded on a [`Tape`].
//!
//! Everything is `f64` and every reduction runs in a fixed order, so two
//! runs from the same seed are bitwise identical.

mod gradcheck;
pub(crate) mod kernels;
mod tape;

pub use gradcheck::{central_diff, check_indices, relative_error, GradCheckReport};
pub use tape::{BnMode, BnStats, Tape, Var};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extents of a rank-4 tensor in (batch, channel, height, width) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Row-major flat index of (n, c, y, x).
    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    pub fn to_vec(&self) -> Vec<usize> {
        vec![self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Standalone bilinear resize (no gradient tracking).
pub fn bilinear_resize(t: &Tensor4, target_h: usize, target_w: usize) -> Result<Tensor4> {
    kernels::bilinear_forward(t, target_h, target_w)
}

/// Standalone nearest-neighbor resize (no gradient tracking).
pub fn nearest_resize(t: &Tensor4, target_h: usize, target_w: usize) -> Result<Tensor4> {
    kernels::nearest_forward(t, target_h, target_w)
}

/// Dense rank-4 array, row-major in (n, c, h, w).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: Shape4) -> Self {
        Tensor4 {
            shape,
            data: vec![0.0; shape.count()],
        }
    }

    pub fn filled(shape: Shape4, value: f64) -> Self {
        Tensor4 {
            shape,
            data: vec![value; shape.count()],
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.count() {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match shape {} (= {} elements)",
                data.len(),
                shape,
                shape.count()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    /// Scalar tensor of shape (1, 1, 1, 1).
    pub fn scalar(value: f64) -> Self {
        Tensor4 {
            shape: Shape4::new(1, 1, 1, 1),
            data: vec![value],
        }
    }

    /// Uniform samples in [lo, hi), drawn in index order from `rng`.
    pub fn rand_uniform(shape: Shape4, lo: f64, hi: f64, rng: &mut impl rand::Rng) -> Self {
        let data = (0..shape.count())
            .map(|_| lo + (hi - lo) * rng.gen::<f64>())
            .collect();
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.at(n, c, y, x)]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f64) {
        let idx = self.shape.at(n, c, y, x);
        self.data[idx] = value;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape.count() != 1 {
            return Err(Error::InvalidArgument(format!(
                "item() on non-scalar tensor of shape {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }
}

/// Configuration of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Depthwise: one kernel per channel, out_channels must equal
    /// in_channels at bind time.
    pub grouped: bool,
}

impl ConvSpec {
    pub fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if !matches!(kernel, 1 | 3 | 5 | 7) {
            return Err(Error::InvalidArgument(format!(
                "convolution kernel side must be 1, 3, 5 or 7, got {kernel}"
            )));
        }
        if out_channels == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "convolution out_channels and stride must be positive".into(),
            ));
        }
        Ok(ConvSpec {
            out_channels,
            kernel,
            stride,
            padding,
            grouped: false,
        })
    }

    /// Resolution-preserving convolution: stride 1, padding (kernel-1)/2.
    pub fn same(out_channels: usize, kernel: usize) -> Result<Self> {
        ConvSpec::new(out_channels, kernel, 1, (kernel - 1) / 2)
    }

    pub fn grouped(mut self) -> Self {
        self.grouped = true;
        self
    }

    /// Output spatial extent for one dimension; `None` when empty.
    pub fn output_extent(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_indexing_is_row_major() {
        let s = Shape4::new(2, 3, 4, 5);
        assert_eq!(s.count(), 120);
        assert_eq!(s.at(0, 0, 0, 0), 0);
        assert_eq!(s.at(0, 0, 0, 1), 1);
        assert_eq!(s.at(0, 0, 1, 0), 5);
        assert_eq!(s.at(0, 1, 0, 0), 20);
        assert_eq!(s.at(1, 0, 0, 0), 60);
        assert_eq!(s.at(1, 2, 3, 4), 119);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Tensor4::from_vec(Shape4::new(1, 1, 2, 2), vec![0.0; 3]);
        assert!(err.is_err());
    }

    #[test]
    fn conv_spec_rejects_even_kernels() {
        assert!(ConvSpec::new(8, 2, 1, 0).is_err());
        assert!(ConvSpec::new(8, 9, 1, 4).is_err());
        assert!(ConvSpec::new(8, 7, 1, 3).is_ok());
    }

    #[test]
    fn conv_spec_output_extent() {
        let spec = ConvSpec::same(4, 3).unwrap();
        assert_eq!(spec.output_extent(32), Some(32));
        let strided = ConvSpec::new(4, 3, 2, 1).unwrap();
        assert_eq!(strided.output_extent(32), Some(16));
        let shrinking = ConvSpec::new(4, 7, 1, 0).unwrap();
        assert_eq!(shrinking.output_extent(4), None);
    }
}
