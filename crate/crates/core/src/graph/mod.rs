//! Side-output network topologies over a pluggable backbone.
//!
//! Two kinds are built: the neighbor-only topology, where each side
//! output connects only to the one directly above it through a grouped
//! 2x2 stride-2 transposed convolution, and the dense baseline, where
//! every deeper side output reaches every shallower one through a full
//! transposed convolution with kernel side twice its stride.

mod forward;
mod params;

pub use forward::{dss_prediction, ForwardPass, OutputSel, SideOutputs};
pub use params::{
    init_conv_weight, init_grouped_tconv_weight, init_tconv_weight, BufferStore, ParamStore,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BnStats, ConvSpec, Shape4, Tensor4};

/// One backbone layer a side branch reads from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tap {
    pub name: String,
    pub stride: usize,
    pub channels: usize,
}

/// Ordered backbone taps, shallowest first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub taps: Vec<Tap>,
}

impl BackboneSpec {
    pub fn new(taps: Vec<Tap>) -> Result<Self> {
        let spec = BackboneSpec { taps };
        spec.validate()?;
        Ok(spec)
    }

    /// Desk-scale trainable backbone: a plain conv3/bn/relu/maxpool2
    /// stack producing taps at strides 2..32.
    pub fn toy() -> Self {
        let channels = [16, 32, 64, 128, 256];
        BackboneSpec {
            taps: channels
                .iter()
                .enumerate()
                .map(|(i, &c)| Tap {
                    name: format!("conv{}", i + 1),
                    stride: 2 << i,
                    channels: c,
                })
                .collect(),
        }
    }

    /// The five ResNet taps of the reference configuration. Describe-only:
    /// summaries and parameter arithmetic, not a runnable backbone.
    pub fn resnet() -> Self {
        let taps = [
            ("conv1", 2, 64),
            ("res2c", 4, 256),
            ("res3d", 8, 512),
            ("res4f", 16, 1024),
            ("res5c", 32, 2048),
        ];
        BackboneSpec {
            taps: taps
                .iter()
                .map(|&(name, stride, channels)| Tap {
                    name: name.to_string(),
                    stride,
                    channels,
                })
                .collect(),
        }
    }

    /// Small synthetic spec with `m` taps, for topology arithmetic.
    pub fn synthetic(m: usize) -> Result<Self> {
        BackboneSpec::new(
            (0..m)
                .map(|i| Tap {
                    name: format!("tap{}", i + 1),
                    stride: 2 << i,
                    channels: 8 << i,
                })
                .collect(),
        )
    }

    pub fn levels(&self) -> usize {
        self.taps.len()
    }

    pub fn deepest_stride(&self) -> usize {
        self.taps.last().map_or(1, |t| t.stride)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.taps.len();
        if !(2..=6).contains(&m) {
            return Err(Error::InvalidArgument(format!(
                "backbone must have between 2 and 6 taps, got {m}"
            )));
        }
        for (i, tap) in self.taps.iter().enumerate() {
            if !tap.stride.is_power_of_two() {
                return Err(Error::InvalidArgument(format!(
                    "tap `{}` stride {} is not a power of two",
                    tap.name, tap.stride
                )));
            }
            if tap.channels == 0 {
                return Err(Error::InvalidArgument(format!(
                    "tap `{}` has zero channels",
                    tap.name
                )));
            }
            if i > 0 && tap.stride != 2 * self.taps[i - 1].stride {
                return Err(Error::InvalidArgument(format!(
                    "tap `{}` stride {} must be exactly twice the previous stride {}",
                    tap.name,
                    tap.stride,
                    self.taps[i - 1].stride
                )));
            }
        }
        Ok(())
    }
}

/// Filter stack of one side branch: two feature convolutions followed by
/// the 1x1 encoding convolution into k channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideBranchSpec {
    pub layer1: ConvSpec,
    pub layer2: ConvSpec,
    pub layer3: ConvSpec,
    pub k: usize,
}

impl SideBranchSpec {
    pub fn new(layer1: ConvSpec, layer2: ConvSpec, k: usize) -> Result<Self> {
        Ok(SideBranchSpec {
            layer1,
            layer2,
            layer3: ConvSpec::same(k, 1)?,
            k,
        })
    }

    /// Reference filter stack for the given level (0-based, shallowest
    /// first). Levels beyond the fifth repeat the deepest row.
    pub fn table1(level: usize, k: usize) -> Result<Self> {
        let rows = [(3, 128), (5, 256), (5, 256), (5, 512), (7, 512)];
        let (kernel, channels) = rows[level.min(rows.len() - 1)];
        SideBranchSpec::new(
            ConvSpec::same(channels, kernel)?,
            ConvSpec::same(channels, kernel)?,
            k,
        )
    }

    /// Small stack for desk-scale training runs.
    pub fn toy(k: usize) -> Result<Self> {
        SideBranchSpec::new(ConvSpec::same(8, 3)?, ConvSpec::same(8, 3)?, k)
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.layer3.kernel != 1 || self.layer3.out_channels != self.k || self.k != k {
            return Err(Error::InvalidArgument(format!(
                "side branch layer 3 must be a 1x1 convolution into k={k} channels"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Rds,
    Dss,
}

/// One inter-level pathway and its parameter cost.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Connection {
    pub from_level: usize,
    pub to_level: usize,
    pub upsample_factor: usize,
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel: usize,
    pub grouped: bool,
    pub parameter_count: usize,
}

/// Concatenated channel count of level `m` (1-based, shallowest first)
/// in the neighbor-only topology: (M - m + 1) * k.
pub fn rds_level_channels(level: usize, m: usize, k: usize) -> usize {
    (m - level + 1) * k
}

/// Parameters of the grouped 2x2 up-sample applied to level `m`'s block.
pub fn rds_upsample_param_count(level: usize, m: usize, k: usize) -> usize {
    4 * rds_level_channels(level, m, k)
}

/// Parameters of the dense-topology connection from `from_level` down to
/// `to_level`, carrying k channels into one: k * (2 * 2^(from-to))^2.
pub fn dss_connection_param_count(from_level: usize, to_level: usize, k: usize) -> usize {
    let factor = 1usize << (from_level - to_level);
    let kernel = 2 * factor;
    k * kernel * kernel
}

/// The headline parameter comparison: dense deepest connection over six
/// side outputs at one channel (4096) versus the neighbor-only final
/// up-sample over five levels at k=32 (640).
pub fn paper_scale_ratio() -> f64 {
    dss_connection_param_count(6, 1, 1) as f64 / rds_upsample_param_count(1, 5, 32) as f64
}

/// A built topology: immutable structure plus its named parameter store.
#[derive(Clone, Debug)]
pub struct NetworkGraph {
    pub kind: GraphKind,
    pub backbone: BackboneSpec,
    pub branches: Vec<SideBranchSpec>,
    pub k: usize,
    pub connections: Vec<Connection>,
    /// Neighbor-only topology: the ``x2`` stage lifting the shallowest
    /// block to full input resolution.
    pub final_upsample: Option<Connection>,
    pub(crate) params: ParamStore,
    pub(crate) buffers: BufferStore,
    pub(crate) runnable: bool,
}

pub struct GraphBuilder {
    kind: GraphKind,
    backbone: BackboneSpec,
    k: usize,
    branches: Option<Vec<SideBranchSpec>>,
    seed: u64,
    describe_only: bool,
}

impl GraphBuilder {
    pub fn new(kind: GraphKind, backbone: BackboneSpec, k: usize) -> Self {
        GraphBuilder {
            kind,
            backbone,
            k,
            branches: None,
            seed: 0,
            describe_only: false,
        }
    }

    pub fn branches(mut self, branches: Vec<SideBranchSpec>) -> Self {
        self.branches = Some(branches);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Build topology and counts only; no parameters are allocated and
    /// the graph cannot run a forward pass.
    pub fn describe_only(mut self) -> Self {
        self.describe_only = true;
        self
    }

    pub fn build(self) -> Result<NetworkGraph> {
        if self.k == 0 {
            return Err(Error::InvalidArgument(
                "side-encoding channel count k must be >= 1".into(),
            ));
        }
        self.backbone.validate()?;
        let m = self.backbone.levels();
        if self.kind == GraphKind::Rds && self.backbone.taps[0].stride != 2 {
            return Err(Error::InvalidArgument(format!(
                "neighbor-only topology needs a shallowest tap at stride 2 so one final x2 \
                 up-sample reaches input resolution, got stride {}",
                self.backbone.taps[0].stride
            )));
        }
        let branches = match self.branches {
            Some(b) => {
                if b.len() != m {
                    return Err(Error::InvalidArgument(format!(
                        "got {} branch specs for {} taps",
                        b.len(),
                        m
                    )));
                }
                for spec in &b {
                    spec.validate(self.k)?;
                }
                b
            }
            None => (0..m)
                .map(|i| SideBranchSpec::table1(i, self.k))
                .collect::<Result<Vec<_>>>()?,
        };

        let (connections, final_upsample) = match self.kind {
            GraphKind::Rds => {
                let conns = (2..=m)
                    .map(|j| Connection {
                        from_level: j,
                        to_level: j - 1,
                        upsample_factor: 2,
                        channels_in: rds_level_channels(j, m, self.k),
                        channels_out: rds_level_channels(j, m, self.k),
                        kernel: 2,
                        grouped: true,
                        parameter_count: rds_upsample_param_count(j, m, self.k),
                    })
                    .collect();
                let final_up = Connection {
                    from_level: 1,
                    to_level: 0,
                    upsample_factor: 2,
                    channels_in: rds_level_channels(1, m, self.k),
                    channels_out: rds_level_channels(1, m, self.k),
                    kernel: 2,
                    grouped: true,
                    parameter_count: rds_upsample_param_count(1, m, self.k),
                };
                (conns, Some(final_up))
            }
            GraphKind::Dss => {
                let mut conns = Vec::new();
                for to in 1..=m {
                    for from in (to + 1)..=m {
                        let factor = 1usize << (from - to);
                        conns.push(Connection {
                            from_level: from,
                            to_level: to,
                            upsample_factor: factor,
                            channels_in: self.k,
                            channels_out: 1,
                            kernel: 2 * factor,
                            grouped: false,
                            parameter_count: dss_connection_param_count(from, to, self.k),
                        });
                    }
                }
                (conns, None)
            }
        };

        let mut graph = NetworkGraph {
            kind: self.kind,
            backbone: self.backbone,
            branches,
            k: self.k,
            connections,
            final_upsample,
            params: ParamStore::new(),
            buffers: BufferStore::new(),
            runnable: !self.describe_only,
        };
        if !self.describe_only {
            graph.allocate_parameters(self.seed)?;
        }
        Ok(graph)
    }
}

pub fn build_rds(backbone: BackboneSpec, k: usize, seed: u64) -> Result<NetworkGraph> {
    GraphBuilder::new(GraphKind::Rds, backbone, k).seed(seed).build()
}

pub fn build_dss(backbone: BackboneSpec, k: usize, seed: u64) -> Result<NetworkGraph> {
    GraphBuilder::new(GraphKind::Dss, backbone, k).seed(seed).build()
}

impl NetworkGraph {
    pub fn levels(&self) -> usize {
        self.backbone.levels()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn buffers(&self) -> &BufferStore {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut BufferStore {
        &mut self.buffers
    }

    pub fn is_runnable(&self) -> bool {
        self.runnable
    }

    fn add_conv_block(
        &mut self,
        prefix: &str,
        in_c: usize,
        spec: &ConvSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        self.params.insert(
            format!("{prefix}.weight"),
            init_conv_weight(spec.out_channels, in_c, spec.kernel, rng),
        )?;
        self.params.insert(
            format!("{prefix}.bn.gamma"),
            Tensor4::filled(Shape4::new(1, spec.out_channels, 1, 1), 1.0),
        )?;
        self.params.insert(
            format!("{prefix}.bn.beta"),
            Tensor4::zeros(Shape4::new(1, spec.out_channels, 1, 1)),
        )?;
        self.buffers
            .insert(format!("{prefix}.bn"), BnStats::new(spec.out_channels))?;
        Ok(())
    }

    fn allocate_parameters(&mut self, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.levels();

        // trainable toy backbone: conv3/bn/relu/maxpool2 per tap
        let mut in_c = 3;
        for i in 0..m {
            let tap = self.backbone.taps[i].clone();
            let spec = ConvSpec::same(tap.channels, 3)?;
            self.add_conv_block(&format!("backbone.{}", tap.name), in_c, &spec, &mut rng)?;
            in_c = tap.channels;
        }

        // side branches
        for (i, branch) in self.branches.clone().iter().enumerate() {
            let level = i + 1;
            let tap_c = self.backbone.taps[i].channels;
            self.add_conv_block(
                &format!("side{level}.layer1"),
                tap_c,
                &branch.layer1.clone(),
                &mut rng,
            )?;
            self.add_conv_block(
                &format!("side{level}.layer2"),
                branch.layer1.out_channels,
                &branch.layer2.clone(),
                &mut rng,
            )?;
            self.add_conv_block(
                &format!("side{level}.layer3"),
                branch.layer2.out_channels,
                &branch.layer3.clone(),
                &mut rng,
            )?;
        }

        // inter-level pathways
        match self.kind {
            GraphKind::Rds => {
                for level in (1..=m).rev() {
                    let channels = rds_level_channels(level, m, self.k);
                    let name = format!("up{level}");
                    self.params.insert(
                        format!("{name}.weight"),
                        init_grouped_tconv_weight(channels, 2),
                    )?;
                    self.params.insert(
                        format!("{name}.bn.gamma"),
                        Tensor4::filled(Shape4::new(1, channels, 1, 1), 1.0),
                    )?;
                    self.params.insert(
                        format!("{name}.bn.beta"),
                        Tensor4::zeros(Shape4::new(1, channels, 1, 1)),
                    )?;
                    self.buffers.insert(name, BnStats::new(channels))?;
                }
            }
            GraphKind::Dss => {
                for conn in self.connections.clone() {
                    let name = format!("conn{}to{}", conn.from_level, conn.to_level);
                    self.params.insert(
                        format!("{name}.weight"),
                        init_tconv_weight(self.k, 1, conn.kernel, &mut rng),
                    )?;
                    self.params.insert(
                        format!("{name}.bn.gamma"),
                        Tensor4::filled(Shape4::new(1, 1, 1, 1), 1.0),
                    )?;
                    self.params
                        .insert(format!("{name}.bn.beta"), Tensor4::scalar(0.0))?;
                    self.buffers.insert(name, BnStats::new(1))?;
                }
            }
        }

        // prediction heads and fusion scalars
        for level in 1..=m {
            let head_in = match self.kind {
                GraphKind::Rds => rds_level_channels(level, m, self.k),
                GraphKind::Dss => self.k + (m - level),
            };
            self.params.insert(
                format!("side{level}.head.weight"),
                init_conv_weight(1, head_in, 1, &mut rng),
            )?;
            self.params
                .insert(format!("side{level}.head.bias"), Tensor4::scalar(0.0))?;
        }
        for level in 1..=m {
            self.params
                .insert(format!("fuse.w{level}"), Tensor4::scalar(1.0))?;
        }
        Ok(())
    }

    /// Total connection-parameter count with the per-connection breakdown.
    pub fn connection_param_count(&self) -> ConnectionReport {
        let total = self
            .connections
            .iter()
            .chain(self.final_upsample.iter())
            .map(|c| c.parameter_count)
            .sum();
        ConnectionReport {
            per_connection: self.connections.clone(),
            final_upsample: self.final_upsample.clone(),
            total,
        }
    }

    pub fn summary(&self) -> GraphSummary {
        let m = self.levels();
        let per_level = (1..=m)
            .map(|level| {
                let tap = &self.backbone.taps[level - 1];
                let (concat_channels, resolution_divisor) = match self.kind {
                    // channels after concatenation, resolution after the
                    // level's x2 up-sample
                    GraphKind::Rds => (rds_level_channels(level, m, self.k), tap.stride / 2),
                    GraphKind::Dss => (self.k + (m - level), tap.stride),
                };
                LevelSummary {
                    level,
                    tap: tap.name.clone(),
                    stride: tap.stride,
                    tap_channels: tap.channels,
                    concat_channels,
                    resolution_divisor,
                }
            })
            .collect();
        let report = self.connection_param_count();
        GraphSummary {
            kind: self.kind,
            levels: m,
            k: self.k,
            per_level,
            connections: report.per_connection,
            final_upsample: report.final_upsample,
            total_connection_parameters: report.total,
            total_parameters: self.params.total_elements(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConnectionReport {
    pub per_connection: Vec<Connection>,
    pub final_upsample: Option<Connection>,
    pub total: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelSummary {
    pub level: usize,
    pub tap: String,
    pub stride: usize,
    pub tap_channels: usize,
    pub concat_channels: usize,
    /// Input resolution divided by this gives the level's block
    /// resolution (post-up-sample for the neighbor-only topology).
    pub resolution_divisor: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GraphSummary {
    pub kind: GraphKind,
    pub levels: usize,
    pub k: usize,
    pub per_level: Vec<LevelSummary>,
    pub connections: Vec<Connection>,
    pub final_upsample: Option<Connection>,
    pub total_connection_parameters: usize,
    pub total_parameters: usize,
}

impl GraphSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    /// Plain-text table, one line per level then one per connection.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let kind = match self.kind {
            GraphKind::Rds => "rds",
            GraphKind::Dss => "dss",
        };
        writeln!(
            out,
            "{} topology: {} levels, k={}, {} connection parameters",
            kind, self.levels, self.k, self.total_connection_parameters
        )
        .unwrap();
        writeln!(out, "{:<8} {:<8} {:>7} {:>9} {:>12}", "level", "tap", "stride", "channels", "resolution").unwrap();
        for l in &self.per_level {
            writeln!(
                out,
                "{:<8} {:<8} {:>7} {:>9} {:>12}",
                l.level,
                l.tap,
                l.stride,
                l.concat_channels,
                if l.resolution_divisor == 1 {
                    "(H, W)".to_string()
                } else {
                    format!("(H/{0}, W/{0})", l.resolution_divisor)
                }
            )
            .unwrap();
        }
        writeln!(out, "{:<14} {:>7} {:>8} {:>9} {:>7}", "connection", "factor", "kernel", "channels", "params").unwrap();
        for c in &self.connections {
            writeln!(
                out,
                "{:<14} {:>7} {:>8} {:>9} {:>7}",
                format!("{} -> {}", c.from_level, c.to_level),
                c.upsample_factor,
                format!("{0}x{0}", c.kernel),
                c.channels_in,
                c.parameter_count
            )
            .unwrap();
        }
        if let Some(f) = &self.final_upsample {
            writeln!(
                out,
                "{:<14} {:>7} {:>8} {:>9} {:>7}",
                "1 -> out",
                f.upsample_factor,
                format!("{0}x{0}", f.kernel),
                f.channels_in,
                f.parameter_count
            )
            .unwrap();
        }
        out
    }
}
