//! Run configuration: a fixed JSON schema with defaults, loaded from a
//! file and patched by `--set key.path=value` overrides. Unknown keys
//! are rejected, not ignored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use rds_core::crf::CrfParams;
use rds_core::error::{Error, Result};
use rds_core::graph::{
    BackboneSpec, GraphBuilder, GraphKind, NetworkGraph, OutputSel, SideBranchSpec, Tap,
};
use rds_core::metrics::{Aggregation, MetricConfig};
use rds_core::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackboneChoice {
    Preset(String),
    Taps(Vec<Tap>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub kind: GraphKind,
    pub k: usize,
    pub backbone: BackboneChoice,
    /// "table1" for the reference filter stacks, "toy" for small ones.
    pub branches: String,
    /// Outputs averaged by the dense-baseline prediction: "z1".."z6"
    /// and "fuse".
    pub dss_selected: Vec<String>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            kind: GraphKind::Rds,
            k: 32,
            backbone: BackboneChoice::Preset("toy".into()),
            branches: "table1".into(),
            dss_selected: vec!["z2".into(), "z3".into(), "z4".into(), "fuse".into()],
        }
    }
}

impl NetworkConfig {
    pub fn backbone_spec(&self) -> Result<BackboneSpec> {
        match &self.backbone {
            BackboneChoice::Preset(name) => match name.as_str() {
                "toy" => Ok(BackboneSpec::toy()),
                "resnet" => Ok(BackboneSpec::resnet()),
                other => Err(Error::InvalidArgument(format!(
                    "unknown backbone preset `{other}` (use \"toy\", \"resnet\", or explicit taps)"
                ))),
            },
            BackboneChoice::Taps(taps) => BackboneSpec::new(taps.clone()),
        }
    }

    pub fn branch_specs(&self, levels: usize) -> Result<Vec<SideBranchSpec>> {
        match self.branches.as_str() {
            "table1" => (0..levels).map(|i| SideBranchSpec::table1(i, self.k)).collect(),
            "toy" => (0..levels).map(|_| SideBranchSpec::toy(self.k)).collect(),
            other => Err(Error::InvalidArgument(format!(
                "unknown branch preset `{other}` (use \"table1\" or \"toy\")"
            ))),
        }
    }

    pub fn build_graph(&self, seed: u64) -> Result<NetworkGraph> {
        let backbone = self.backbone_spec()?;
        let branches = self.branch_specs(backbone.levels())?;
        GraphBuilder::new(self.kind, backbone, self.k)
            .branches(branches)
            .seed(seed)
            .build()
    }

    pub fn selected_outputs(&self) -> Result<Vec<OutputSel>> {
        self.dss_selected
            .iter()
            .map(|s| match s.as_str() {
                "fuse" => Ok(OutputSel::Fused),
                other => other
                    .strip_prefix('z')
                    .and_then(|n| n.parse::<usize>().ok())
                    .map(OutputSel::Level)
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "unknown output selector `{other}` (use \"z<level>\" or \"fuse\")"
                        ))
                    }),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub beta_squared: f64,
    pub aggregation: Aggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            beta_squared: 0.3,
            aggregation: Aggregation::PerImageMean,
        }
    }
}

impl EvalConfig {
    pub fn metric_config(&self, aggregation: Option<Aggregation>) -> MetricConfig {
        MetricConfig {
            beta_squared: self.beta_squared,
            aggregation: aggregation.unwrap_or(self.aggregation),
            ..MetricConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub crf: CrfParams,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Load from an optional file, then apply `key.path=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?
            }
            None => RunConfig::default(),
        };
        if !overrides.is_empty() {
            let mut value = serde_json::to_value(&config)
                .map_err(|e| Error::Data(format!("config encode: {e}")))?;
            for entry in overrides {
                apply_override(&mut value, entry)?;
            }
            config = serde_json::from_value(value)
                .map_err(|e| Error::InvalidArgument(format!("override: {e}")))?;
        }
        config.train.validate()?;
        config.crf.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        let pretty = serde_json::to_string_pretty(&self.to_json())
            .expect("config serializes")
            + "\n";
        rds_core::formats::atomic_write(&dir.join("effective_config.json"), pretty.as_bytes())
    }
}

/// Set one dotted path in the config tree. The path must already exist
/// in the schema; the value is parsed as JSON, falling back to a string.
pub fn apply_override(root: &mut serde_json::Value, entry: &str) -> Result<()> {
    let (path, raw) = entry.split_once('=').ok_or_else(|| {
        Error::InvalidArgument(format!("override `{entry}` is not of the form key.path=value"))
    })?;
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        let object = cursor.as_object_mut().ok_or_else(|| {
            Error::InvalidArgument(format!("config key `{}` is not a section", segments[..i].join(".")))
        })?;
        let slot = object.get_mut(*segment).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown config key `{}`", segments[..=i].join(".")))
        })?;
        if i + 1 == segments.len() {
            *slot = value;
            return Ok(());
        }
        cursor = slot;
    }
    unreachable!("loop returns on the last segment")
}
