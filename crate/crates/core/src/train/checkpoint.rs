//! Versioned binary checkpoints: magic "RDSCKPT1", a little-endian
//! length-prefixed JSON manifest of (name, kind, shape, dtype, offset)
//! entries, then the raw f64 arrays.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::formats::atomic_write;
use crate::graph::NetworkGraph;
use crate::tensor::{BnStats, Shape4, Tensor4};
use crate::train::SgdState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RDSCKPT1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub phase: String,
    pub epochs_run: usize,
    pub seed: u64,
    /// Effective run configuration, embedded for provenance.
    pub config: serde_json::Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EntryKind {
    Param,
    Velocity,
    RunningMean,
    RunningVar,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    kind: EntryKind,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config_fingerprint: String,
    meta: CheckpointMeta,
    entries: Vec<Entry>,
}

/// Everything stored in a checkpoint, decoded.
pub struct CheckpointData {
    pub meta: CheckpointMeta,
    pub config_fingerprint: String,
    pub params: IndexMap<String, Tensor4>,
    pub running_mean: IndexMap<String, Vec<f64>>,
    pub running_var: IndexMap<String, Vec<f64>>,
    pub velocities: IndexMap<String, Tensor4>,
}

/// Hex SHA-256 of the canonical (sorted-key) JSON of a config value.
pub fn config_fingerprint(config: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_checkpoint(
    path: &Path,
    graph: &NetworkGraph,
    optimizer: &SgdState,
    meta: &CheckpointMeta,
) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |name: String, kind: EntryKind, shape: Vec<usize>, data: &[f64]| {
        let offset = payload.len();
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(Entry {
            name,
            kind,
            shape,
            dtype: "f64".into(),
            offset,
            len: data.len(),
        });
    };

    for (name, t) in graph.params().iter() {
        push(
            name.clone(),
            EntryKind::Param,
            t.shape().to_vec(),
            t.data(),
        );
    }
    for (name, stats) in graph.buffers().iter() {
        push(
            name.clone(),
            EntryKind::RunningMean,
            vec![1, stats.mean.len(), 1, 1],
            &stats.mean,
        );
        push(
            name.clone(),
            EntryKind::RunningVar,
            vec![1, stats.var.len(), 1, 1],
            &stats.var,
        );
    }
    for (name, v) in &optimizer.velocity {
        push(
            name.clone(),
            EntryKind::Velocity,
            v.shape().to_vec(),
            v.data(),
        );
    }

    let manifest = Manifest {
        version: 1,
        config_fingerprint: config_fingerprint(&meta.config),
        meta: meta.clone(),
        entries,
    };
    let manifest_json =
        serde_json::to_vec(&manifest).map_err(|e| Error::Data(format!("manifest encode: {e}")))?;

    let mut bytes = Vec::with_capacity(12 + manifest_json.len() + payload.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&manifest_json);
    bytes.extend_from_slice(&payload);
    atomic_write(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint file (bad magic)"));
    }
    let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let manifest_end = 12 + manifest_len;
    let manifest: Manifest = serde_json::from_slice(
        bytes
            .get(12..manifest_end)
            .ok_or_else(|| Error::format(path, "truncated manifest"))?,
    )
    .map_err(|e| Error::format(path, format!("manifest decode: {e}")))?;
    if manifest.version != 1 {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {}", manifest.version),
        ));
    }
    let payload = &bytes[manifest_end..];

    let mut data = CheckpointData {
        meta: manifest.meta,
        config_fingerprint: manifest.config_fingerprint,
        params: IndexMap::new(),
        running_mean: IndexMap::new(),
        running_var: IndexMap::new(),
        velocities: IndexMap::new(),
    };
    for e in manifest.entries {
        if e.dtype != "f64" {
            return Err(Error::format(
                path,
                format!("entry `{}` has unsupported dtype {}", e.name, e.dtype),
            ));
        }
        let start = e.offset;
        let end = start + e.len * 8;
        let raw = payload
            .get(start..end)
            .ok_or_else(|| Error::format(path, format!("entry `{}` out of bounds", e.name)))?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        match e.kind {
            EntryKind::Param | EntryKind::Velocity => {
                if e.shape.len() != 4 {
                    return Err(Error::format(
                        path,
                        format!("entry `{}` has non-rank-4 shape", e.name),
                    ));
                }
                let shape = Shape4::new(e.shape[0], e.shape[1], e.shape[2], e.shape[3]);
                let tensor = Tensor4::from_vec(shape, values)
                    .map_err(|err| Error::format(path, err.to_string()))?;
                if e.kind == EntryKind::Param {
                    data.params.insert(e.name, tensor);
                } else {
                    data.velocities.insert(e.name, tensor);
                }
            }
            EntryKind::RunningMean => {
                data.running_mean.insert(e.name, values);
            }
            EntryKind::RunningVar => {
                data.running_var.insert(e.name, values);
            }
        }
    }
    Ok(data)
}

impl CheckpointData {
    /// Restore parameters and running stats into a graph built with the
    /// same topology; returns the restored optimizer state.
    pub fn load_into(&self, graph: &mut NetworkGraph) -> Result<SgdState> {
        let names: Vec<String> = graph.params().names().cloned().collect();
        for name in &names {
            let stored = self.params.get(name).ok_or_else(|| {
                Error::Data(format!("checkpoint is missing parameter `{name}`"))
            })?;
            let param = graph.params_mut().get_mut(name).expect("name from store");
            if stored.shape() != param.shape() {
                return Err(Error::shape_mismatch(
                    format!("checkpoint parameter `{name}`"),
                    stored.shape(),
                    param.shape(),
                ));
            }
            *param = stored.clone();
        }
        let buffer_names: Vec<String> =
            graph.buffers().iter().map(|(n, _)| n.clone()).collect();
        for name in &buffer_names {
            let mean = self
                .running_mean
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing buffer `{name}`")))?;
            let var = self
                .running_var
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing buffer `{name}`")))?;
            let stats = graph.buffers_mut().get_mut(name).expect("name from store");
            if stats.mean.len() != mean.len() || stats.var.len() != var.len() {
                return Err(Error::shape_mismatch(
                    format!("checkpoint buffer `{name}`"),
                    mean.len(),
                    stats.mean.len(),
                ));
            }
            *stats = BnStats {
                mean: mean.clone(),
                var: var.clone(),
            };
        }
        let mut state = SgdState::new();
        for (name, v) in &self.velocities {
            state.velocity.insert(name.clone(), v.clone());
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{BackboneSpec, GraphBuilder, GraphKind, SideBranchSpec};

    fn tiny_graph(seed: u64) -> NetworkGraph {
        let backbone = BackboneSpec::new(
            (0..2)
                .map(|i| crate::graph::Tap {
                    name: format!("t{i}"),
                    stride: 2 << i,
                    channels: 4,
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

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            phase: "sod".into(),
            epochs_run: 2,
            seed: 7,
            config: serde_json::json!({"train": {"epochs": 2}}),
        }
    }

    #[test]
    fn round_trip_restores_graph_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rdsckpt");
        let graph = tiny_graph(11);
        let mut opt = SgdState::new();
        opt.velocity
            .insert("fuse.w1".into(), Tensor4::scalar(0.25));
        write_checkpoint(&path, &graph, &opt, &meta()).unwrap();

        let data = read_checkpoint(&path).unwrap();
        assert_eq!(data.meta.phase, "sod");
        assert_eq!(data.meta.epochs_run, 2);

        let mut restored = tiny_graph(999); // different init, same topology
        let opt2 = data.load_into(&mut restored).unwrap();
        for ((n1, p1), (n2, p2)) in graph.params().iter().zip(restored.params().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(p1.data(), p2.data());
        }
        assert_eq!(opt2.velocity["fuse.w1"].data(), &[0.25]);
    }

    #[test]
    fn same_state_writes_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let graph = tiny_graph(3);
        let opt = SgdState::new();
        write_checkpoint(&p1, &graph, &opt, &meta()).unwrap();
        write_checkpoint(&p2, &graph, &opt, &meta()).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn magic_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPT____").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }

    #[test]
    fn fingerprint_is_stable_across_key_order() {
        let a: serde_json::Value =
            serde_json::from_str(r#"{"b": 1, "a": {"y": 2, "x": 3}}"#).unwrap();
        let b: serde_json::Value =
            serde_json::from_str(r#"{"a": {"x": 3, "y": 2}, "b": 1}"#).unwrap();
        assert_eq!(config_fingerprint(&a), config_fingerprint(&b));
    }

    #[test]
    fn loading_into_mismatched_topology_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rdsckpt");
        let graph = tiny_graph(1);
        write_checkpoint(&path, &graph, &SgdState::new(), &meta()).unwrap();
        let data = read_checkpoint(&path).unwrap();

        let backbone = BackboneSpec::toy();
        let branches = (0..5).map(|_| SideBranchSpec::toy(2).unwrap()).collect();
        let mut other = GraphBuilder::new(GraphKind::Rds, backbone, 2)
            .branches(branches)
            .build()
            .unwrap();
        assert!(data.load_into(&mut other).is_err());
    }
}
