use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{BnStats, Shape4, Tensor4};

/// Named trainable tensors in a fixed (insertion) order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    map: IndexMap<String, Tensor4>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor4) -> Result<()> {
        let name = name.into();
        if self.map.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.map.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor4> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor4> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor4)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor4)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_elements(&self) -> usize {
        self.map.values().map(|t| t.shape().count()).sum()
    }
}

/// Batch-norm running statistics, keyed like the parameter store.
#[derive(Clone, Debug, Default)]
pub struct BufferStore {
    map: IndexMap<String, BnStats>,
}

impl BufferStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, stats: BnStats) -> Result<()> {
        let name = name.into();
        if self.map.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate buffer name `{name}`"
            )));
        }
        self.map.insert(name, stats);
        Ok(())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut BnStats> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BnStats)> {
        self.map.iter()
    }

    pub fn get(&self, name: &str) -> Option<&BnStats> {
        self.map.get(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }
}

/// Xavier-uniform bound for a convolution weight tensor.
fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Convolution weight (out, in, k, k), uniform in +-sqrt(6/(fan_in+fan_out)).
pub fn init_conv_weight(
    out_c: usize,
    in_c: usize,
    kernel: usize,
    rng: &mut impl Rng,
) -> Tensor4 {
    let bound = xavier_bound(in_c * kernel * kernel, out_c * kernel * kernel);
    Tensor4::rand_uniform(
        Shape4::new(out_c, in_c, kernel, kernel),
        -bound,
        bound,
        rng,
    )
}

/// Full transposed-convolution weight (in, out, k, k), Xavier-uniform.
pub fn init_tconv_weight(in_c: usize, out_c: usize, kernel: usize, rng: &mut impl Rng) -> Tensor4 {
    let bound = xavier_bound(in_c * kernel * kernel, out_c * kernel * kernel);
    Tensor4::rand_uniform(
        Shape4::new(in_c, out_c, kernel, kernel),
        -bound,
        bound,
        rng,
    )
}

/// Grouped 2x2 transposed-convolution weight: constant 0.25 per tap
/// (the bilinear-equivalent stamp for stride-2 doubling).
pub fn init_grouped_tconv_weight(channels: usize, kernel: usize) -> Tensor4 {
    Tensor4::filled(
        Shape4::new(channels, 1, kernel, kernel),
        1.0 / (kernel * kernel) as f64,
    )
}
