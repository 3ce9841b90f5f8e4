use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::graph::{GraphKind, NetworkGraph};
use crate::tensor::{BnMode, ConvSpec, Tape, Tensor4, Var};

/// Batch-norm epsilon used throughout the graphs.
pub const BN_EPS: f64 = 1e-5;
/// Running-stat momentum for the exponential moving average.
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-level predicted maps z_1..z_M plus the fused map, all
/// single-channel at input resolution with values in [0, 1].
pub struct SideOutputs {
    pub side_maps: Vec<Var>,
    pub fused: Var,
}

/// One recorded forward pass: the tape, the outputs, and the tape
/// handle of every named parameter (for gradient collection).
pub struct ForwardPass {
    pub tape: Tape,
    pub outputs: SideOutputs,
    pub param_vars: IndexMap<String, Var>,
}

/// Selects side maps for averaging in the dense-baseline prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputSel {
    /// 1-based side-output level, shallowest first.
    Level(usize),
    Fused,
}

impl NetworkGraph {
    /// Run the network on a (N, 3, H, W) batch. H and W must be
    /// divisible by the deepest tap stride.
    pub fn forward(&mut self, batch: &Tensor4, mode: BnMode) -> Result<ForwardPass> {
        if !self.runnable {
            return Err(Error::InvalidArgument(
                "graph was built describe-only and has no parameters to run".into(),
            ));
        }
        let bs = batch.shape();
        if bs.c != 3 {
            return Err(Error::shape_mismatch(
                "forward input channels",
                bs,
                "(n, 3, h, w)",
            ));
        }
        let divisor = self.backbone.deepest_stride();
        if bs.h % divisor != 0 || bs.w % divisor != 0 {
            return Err(Error::InvalidArgument(format!(
                "input extents {}x{} must be divisible by the deepest stride {divisor}",
                bs.h, bs.w
            )));
        }

        let mut tape = Tape::new();
        let mut vars: IndexMap<String, Var> = IndexMap::new();
        for (name, value) in self.params.iter() {
            vars.insert(name.clone(), tape.leaf(value.clone(), true));
        }
        let m = self.levels();
        let x = tape.leaf(batch.clone(), false);

        // backbone stack, tapping after each block
        let mut taps = Vec::with_capacity(m);
        let mut cur = x;
        for tap in &self.backbone.taps {
            let prefix = format!("backbone.{}", tap.name);
            let y = conv_bn_relu(
                &mut tape,
                &vars,
                &mut self.buffers,
                cur,
                &prefix,
                &ConvSpec::same(tap.channels, 3)?,
                mode,
            )?;
            cur = tape.maxpool2(y)?;
            taps.push(cur);
        }

        // side branches encode each tap into k channels
        let mut enc = Vec::with_capacity(m);
        for (i, branch) in self.branches.clone().iter().enumerate() {
            let level = i + 1;
            let mut y = taps[i];
            for (layer, spec) in [
                ("layer1", &branch.layer1),
                ("layer2", &branch.layer2),
                ("layer3", &branch.layer3),
            ] {
                y = conv_bn_relu(
                    &mut tape,
                    &vars,
                    &mut self.buffers,
                    y,
                    &format!("side{level}.{layer}"),
                    spec,
                    mode,
                )?;
            }
            enc.push(y);
        }

        // inter-level pathways; head_in[i] is what level i+1's head reads
        let mut head_in = vec![None; m];
        match self.kind {
            GraphKind::Rds => {
                // deepest block is its own encoding; every block is
                // up-sampled x2 and concatenated into the next-shallower
                let mut block = enc[m - 1];
                for level in (1..=m).rev() {
                    let name = format!("up{level}");
                    let w = vars[&format!("{name}.weight")];
                    let up = tape.conv_transpose2d_grouped(block, w, 2, 2)?;
                    let gamma = vars[&format!("{name}.bn.gamma")];
                    let beta = vars[&format!("{name}.bn.beta")];
                    let stats = self.buffers.get_mut(&name).expect("buffer allocated");
                    let up = tape.batchnorm(up, gamma, beta, mode, stats, BN_EPS, BN_MOMENTUM)?;
                    let up = tape.relu(up);
                    head_in[level - 1] = Some(up);
                    if level > 1 {
                        block = tape.concat_channels(&[enc[level - 2], up])?;
                    }
                }
            }
            GraphKind::Dss => {
                for level in 1..=m {
                    let mut parts = vec![enc[level - 1]];
                    for from in (level + 1)..=m {
                        let name = format!("conn{from}to{level}");
                        let factor = self.backbone.taps[from - 1].stride
                            / self.backbone.taps[level - 1].stride;
                        let w = vars[&format!("{name}.weight")];
                        let y = tape.conv_transpose2d(enc[from - 1], w, factor, factor / 2)?;
                        let gamma = vars[&format!("{name}.bn.gamma")];
                        let beta = vars[&format!("{name}.bn.beta")];
                        let stats = self.buffers.get_mut(&name).expect("buffer allocated");
                        let y = tape.batchnorm(y, gamma, beta, mode, stats, BN_EPS, BN_MOMENTUM)?;
                        parts.push(tape.relu(y));
                    }
                    head_in[level - 1] = Some(tape.concat_channels(&parts)?);
                }
            }
        }

        // 1x1 prediction heads, resized to input resolution
        let head_spec = ConvSpec::same(1, 1)?;
        let mut pre = Vec::with_capacity(m);
        let mut side_maps = Vec::with_capacity(m);
        for level in 1..=m {
            let w = vars[&format!("side{level}.head.weight")];
            let b = vars[&format!("side{level}.head.bias")];
            let y = tape.conv2d(head_in[level - 1].unwrap(), w, Some(b), &head_spec)?;
            let y = tape.bilinear_resize(y, bs.h, bs.w)?;
            pre.push(y);
            side_maps.push(tape.sigmoid(y));
        }

        // fused map: learnable-scalar-weighted sum of the pre-sigmoid maps
        let mut acc = tape.scalar_mul(pre[0], vars["fuse.w1"])?;
        for level in 2..=m {
            let term = tape.scalar_mul(pre[level - 1], vars[&format!("fuse.w{level}")])?;
            acc = tape.add(acc, term)?;
        }
        let fused = tape.sigmoid(acc);

        Ok(ForwardPass {
            tape,
            outputs: SideOutputs { side_maps, fused },
            param_vars: vars,
        })
    }

    /// The final output of the neighbor-only network: the fused map.
    pub fn prediction(&self, pass: &ForwardPass) -> Tensor4 {
        pass.tape.value(pass.outputs.fused).clone()
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_bn_relu(
    tape: &mut Tape,
    vars: &IndexMap<String, Var>,
    buffers: &mut super::BufferStore,
    x: Var,
    prefix: &str,
    spec: &ConvSpec,
    mode: BnMode,
) -> Result<Var> {
    let w = vars[&format!("{prefix}.weight")];
    let y = tape.conv2d(x, w, None, spec)?;
    let gamma = vars[&format!("{prefix}.bn.gamma")];
    let beta = vars[&format!("{prefix}.bn.beta")];
    let stats = buffers
        .get_mut(&format!("{prefix}.bn"))
        .ok_or_else(|| Error::InvalidArgument(format!("missing buffer `{prefix}.bn`")))?;
    let y = tape.batchnorm(y, gamma, beta, mode, stats, BN_EPS, BN_MOMENTUM)?;
    Ok(tape.relu(y))
}

/// Elementwise arithmetic mean of the selected output maps.
pub fn dss_prediction(
    tape: &Tape,
    outputs: &SideOutputs,
    selected: &[OutputSel],
) -> Result<Tensor4> {
    if selected.is_empty() {
        return Err(Error::InvalidArgument(
            "prediction requires at least one selected output".into(),
        ));
    }
    let pick = |sel: &OutputSel| -> Result<&Tensor4> {
        match sel {
            OutputSel::Fused => Ok(tape.value(outputs.fused)),
            OutputSel::Level(level) => {
                if *level == 0 || *level > outputs.side_maps.len() {
                    return Err(Error::InvalidArgument(format!(
                        "selected side output {level} does not exist (1..{})",
                        outputs.side_maps.len()
                    )));
                }
                Ok(tape.value(outputs.side_maps[level - 1]))
            }
        }
    };
    let first = pick(&selected[0])?;
    let mut acc = first.clone();
    for sel in &selected[1..] {
        let t = pick(sel)?;
        if t.shape() != acc.shape() {
            return Err(Error::shape_mismatch(
                "prediction average",
                t.shape(),
                acc.shape(),
            ));
        }
        for (a, v) in acc.data_mut().iter_mut().zip(t.data()) {
            *a += v;
        }
    }
    let inv = 1.0 / selected.len() as f64;
    for a in acc.data_mut() {
        *a *= inv;
    }
    Ok(acc)
}
