use crate::error::{Error, Result};
use crate::tensor::{kernels, ConvSpec, Shape4, Tensor4};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Batch-norm execution mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running stats.
    Train,
    /// Normalize with the running stats only.
    Infer,
}

/// Per-channel running mean/variance kept across steps.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        BnStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

enum Op {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        spec: ConvSpec,
    },
    ConvT2dGrouped {
        x: usize,
        w: usize,
        kernel: usize,
    },
    ConvT2dFull {
        x: usize,
        w: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
        through_stats: bool,
    },
    Relu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    MaxPool2 {
        x: usize,
        argmax: Vec<usize>,
    },
    Bilinear {
        x: usize,
    },
    Concat {
        xs: Vec<usize>,
    },
    Add {
        a: usize,
        b: usize,
    },
    ScalarMul {
        x: usize,
        s: usize,
    },
    MseLoss {
        p: usize,
        g: usize,
    },
    BceLoss {
        p: usize,
        g: usize,
    },
}

struct Node {
    value: Tensor4,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Wengert tape: ops recorded during the forward pass, replayed in
/// reverse for gradients. `backward` accumulates additively, so calling
/// it twice doubles every gradient.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor4, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Insert a tensor as a leaf. Gradients are collected only for
    /// leaves created with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor4, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor4> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor4::from_vec(node.value.shape(), g.clone()).unwrap())
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let out = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            spec,
        )?;
        let mut ids = vec![x.0, w.0];
        if let Some(b) = b {
            ids.push(b.0);
        }
        let rg = self.rg(&ids);
        Ok(self.push(
            out,
            rg,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                spec: *spec,
            },
        ))
    }

    /// Grouped transposed convolution with stride == kernel side
    /// (non-overlapping stamps); up-samples each channel independently.
    pub fn conv_transpose2d_grouped(
        &mut self,
        x: Var,
        w: Var,
        kernel: usize,
        stride: usize,
    ) -> Result<Var> {
        if kernel != stride {
            return Err(Error::InvalidArgument(format!(
                "grouped transposed conv requires stride == kernel side, got {stride} vs {kernel}"
            )));
        }
        let out = kernels::conv_t_grouped_forward(self.value(x), self.value(w), kernel)?;
        let rg = self.rg(&[x.0, w.0]);
        Ok(self.push(
            out,
            rg,
            Op::ConvT2dGrouped {
                x: x.0,
                w: w.0,
                kernel,
            },
        ))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = kernels::conv_t_full_forward(self.value(x), self.value(w), stride, padding)?;
        let rg = self.rg(&[x.0, w.0]);
        Ok(self.push(
            out,
            rg,
            Op::ConvT2dFull {
                x: x.0,
                w: w.0,
                stride,
                padding,
            },
        ))
    }

    /// Batch normalization over (n, h, w) per channel. In `Train` mode
    /// the running stats are updated in place with momentum `momentum`.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        stats: &mut BnStats,
        eps: f64,
        momentum: f64,
    ) -> Result<Var> {
        let xs = self.value(x).shape();
        let c = xs.c;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let s = self.value(v).shape();
            if s != Shape4::new(1, c, 1, 1) {
                return Err(Error::shape_mismatch(
                    format!("batchnorm {name}"),
                    s,
                    Shape4::new(1, c, 1, 1),
                ));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::shape_mismatch(
                "batchnorm running stats",
                stats.mean.len(),
                c,
            ));
        }
        let (mean, var, through_stats) = match mode {
            BnMode::Train => {
                if xs.n * xs.h * xs.w < 2 {
                    return Err(Error::InvalidArgument(
                        "batchnorm in train mode needs at least 2 elements per channel".into(),
                    ));
                }
                let (mean, var) = kernels::channel_stats(self.value(x));
                for i in 0..c {
                    stats.mean[i] = (1.0 - momentum) * stats.mean[i] + momentum * mean[i];
                    stats.var[i] = (1.0 - momentum) * stats.var[i] + momentum * var[i];
                }
                (mean, var, true)
            }
            BnMode::Infer => (stats.mean.clone(), stats.var.clone(), false),
        };
        let out = kernels::batchnorm_normalize(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            &mean,
            &var,
            eps,
        );
        let rg = self.rg(&[x.0, gamma.0, beta.0]);
        Ok(self.push(
            out,
            rg,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                mean,
                var,
                eps,
                through_stats,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let rg = self.rg(&[x.0]);
        self.push(out, rg, Op::Relu { x: x.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        let rg = self.rg(&[x.0]);
        self.push(out, rg, Op::Sigmoid { x: x.0 })
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        if xs.h < 2 || xs.w < 2 {
            return Err(Error::InvalidArgument(format!(
                "maxpool2 needs spatial extents >= 2, got {xs}"
            )));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(x));
        let rg = self.rg(&[x.0]);
        Ok(self.push(out, rg, Op::MaxPool2 { x: x.0, argmax }))
    }

    pub fn bilinear_resize(&mut self, x: Var, th: usize, tw: usize) -> Result<Var> {
        let out = kernels::bilinear_forward(self.value(x), th, tw)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(out, rg, Op::Bilinear { x: x.0 }))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let first = self.value(xs[0]).shape();
        let mut c_total = 0;
        for &v in xs {
            let s = self.value(v).shape();
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(Error::shape_mismatch(
                    "concat_channels non-channel extents",
                    s,
                    first,
                ));
            }
            c_total += s.c;
        }
        let os = Shape4::new(first.n, c_total, first.h, first.w);
        let mut out = Tensor4::zeros(os);
        let plane = first.h * first.w;
        for n in 0..first.n {
            let mut co = 0;
            for &v in xs {
                let t = self.value(v);
                let s = t.shape();
                for c in 0..s.c {
                    let src = s.at(n, c, 0, 0);
                    let dst = os.at(n, co + c, 0, 0);
                    out.data_mut()[dst..dst + plane].copy_from_slice(&t.data()[src..src + plane]);
                }
                co += s.c;
            }
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(out, rg, Op::Concat { xs: ids }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape_mismatch("add", sa, sb));
        }
        let mut out = self.value(a).clone();
        let bd = self.nodes[b.0].value.data().to_vec();
        for (o, v) in out.data_mut().iter_mut().zip(bd) {
            *o += v;
        }
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(out, rg, Op::Add { a: a.0, b: b.0 }))
    }

    /// Multiply a tensor by a learnable scalar of shape (1, 1, 1, 1).
    pub fn scalar_mul(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).shape().count() != 1 {
            return Err(Error::shape_mismatch(
                "scalar_mul scale",
                self.value(s).shape(),
                Shape4::new(1, 1, 1, 1),
            ));
        }
        let sv = self.value(s).data()[0];
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v *= sv;
        }
        let rg = self.rg(&[x.0, s.0]);
        Ok(self.push(out, rg, Op::ScalarMul { x: x.0, s: s.0 }))
    }

    /// Mean over all elements of (p - g)^2, as a scalar node.
    pub fn mse_loss(&mut self, p: Var, g: Var) -> Result<Var> {
        let (sp, sg) = (self.value(p).shape(), self.value(g).shape());
        if sp != sg {
            return Err(Error::shape_mismatch("mse_loss", sp, sg));
        }
        let count = sp.count() as f64;
        let mut acc = 0.0;
        for (pv, gv) in self.value(p).data().iter().zip(self.value(g).data()) {
            let d = pv - gv;
            acc += d * d;
        }
        let rg = self.rg(&[p.0, g.0]);
        Ok(self.push(
            Tensor4::scalar(acc / count),
            rg,
            Op::MseLoss { p: p.0, g: g.0 },
        ))
    }

    /// Mean binary cross-entropy with probabilities clamped to
    /// [1e-7, 1 - 1e-7], as a scalar node.
    pub fn bce_loss(&mut self, p: Var, g: Var) -> Result<Var> {
        let (sp, sg) = (self.value(p).shape(), self.value(g).shape());
        if sp != sg {
            return Err(Error::shape_mismatch("bce_loss", sp, sg));
        }
        let count = sp.count() as f64;
        let mut acc = 0.0;
        for (pv, gv) in self.value(p).data().iter().zip(self.value(g).data()) {
            let pc = pv.clamp(BCE_EPS, 1.0 - BCE_EPS);
            acc -= gv * pc.ln() + (1.0 - gv) * (1.0 - pc).ln();
        }
        let rg = self.rg(&[p.0, g.0]);
        Ok(self.push(
            Tensor4::scalar(acc / count),
            rg,
            Op::BceLoss { p: p.0, g: g.0 },
        ))
    }

    /// Reverse pass from a scalar node. Gradients land on every
    /// reachable node with `requires_grad` and accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).shape().count() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar node, got shape {}",
                self.value(loss).shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(vec![1.0]);
        let mut settled: Vec<(usize, Vec<f64>)> = Vec::new();
        for id in (0..=loss.0).rev() {
            let Some(g) = pending[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut pending);
            settled.push((id, g));
        }
        for (id, g) in settled {
            let node = &mut self.nodes[id];
            match node.grad.as_mut() {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(&g) {
                        *a += v;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn add_pending(&self, pending: &mut [Option<Vec<f64>>], id: usize, contrib: &Tensor4) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let slot = pending[id].get_or_insert_with(|| vec![0.0; contrib.shape().count()]);
        for (a, v) in slot.iter_mut().zip(contrib.data()) {
            *a += v;
        }
    }

    fn add_pending_raw(&self, pending: &mut [Option<Vec<f64>>], id: usize, contrib: &[f64]) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let slot = pending[id].get_or_insert_with(|| vec![0.0; contrib.len()]);
        for (a, v) in slot.iter_mut().zip(contrib) {
            *a += v;
        }
    }

    fn propagate(&self, id: usize, gout: &[f64], pending: &mut [Option<Vec<f64>>]) {
        let need = |i: usize| self.nodes[i].requires_grad;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, spec } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    &self.nodes[*x].value,
                    &self.nodes[*w].value,
                    spec,
                    gout,
                    need(*x),
                    need(*w),
                    b.map(need).unwrap_or(false),
                );
                if let Some(dx) = dx {
                    self.add_pending(pending, *x, &dx);
                }
                if let Some(dw) = dw {
                    self.add_pending(pending, *w, &dw);
                }
                if let (Some(db), Some(b)) = (db, b) {
                    self.add_pending(pending, *b, &db);
                }
            }
            Op::ConvT2dGrouped { x, w, kernel } => {
                let (dx, dw) = kernels::conv_t_grouped_backward(
                    &self.nodes[*x].value,
                    &self.nodes[*w].value,
                    *kernel,
                    gout,
                    need(*x),
                    need(*w),
                );
                if let Some(dx) = dx {
                    self.add_pending(pending, *x, &dx);
                }
                if let Some(dw) = dw {
                    self.add_pending(pending, *w, &dw);
                }
            }
            Op::ConvT2dFull {
                x,
                w,
                stride,
                padding,
            } => {
                let (dx, dw) = kernels::conv_t_full_backward(
                    &self.nodes[*x].value,
                    &self.nodes[*w].value,
                    *stride,
                    *padding,
                    gout,
                    need(*x),
                    need(*w),
                );
                if let Some(dx) = dx {
                    self.add_pending(pending, *x, &dx);
                }
                if let Some(dw) = dw {
                    self.add_pending(pending, *w, &dw);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                var,
                eps,
                through_stats,
            } => {
                let (dx, dgamma, dbeta) = kernels::batchnorm_backward(
                    &self.nodes[*x].value,
                    &self.nodes[*gamma].value,
                    mean,
                    var,
                    *eps,
                    *through_stats,
                    gout,
                    need(*x),
                );
                if let Some(dx) = dx {
                    self.add_pending(pending, *x, &dx);
                }
                self.add_pending(pending, *gamma, &dgamma);
                self.add_pending(pending, *beta, &dbeta);
            }
            Op::Relu { x } => {
                if need(*x) {
                    let xv = self.nodes[*x].value.data();
                    let dx: Vec<f64> = gout
                        .iter()
                        .zip(xv)
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.add_pending_raw(pending, *x, &dx);
                }
            }
            Op::Sigmoid { x } => {
                if need(*x) {
                    let yv = self.nodes[id].value.data();
                    let dx: Vec<f64> = gout.iter().zip(yv).map(|(g, y)| g * y * (1.0 - y)).collect();
                    self.add_pending_raw(pending, *x, &dx);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if need(*x) {
                    let mut dx = vec![0.0; self.nodes[*x].value.shape().count()];
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src] += gout[o];
                    }
                    self.add_pending_raw(pending, *x, &dx);
                }
            }
            Op::Bilinear { x } => {
                if need(*x) {
                    let xs = self.nodes[*x].value.shape();
                    let os = self.nodes[id].value.shape();
                    let dx = kernels::bilinear_backward(xs, os.h, os.w, gout);
                    self.add_pending(pending, *x, &dx);
                }
            }
            Op::Concat { xs } => {
                let os = self.nodes[id].value.shape();
                let plane = os.h * os.w;
                let mut co = 0;
                for &xi in xs {
                    let s = self.nodes[xi].value.shape();
                    if need(xi) {
                        let mut dx = vec![0.0; s.count()];
                        for n in 0..s.n {
                            for c in 0..s.c {
                                let src = os.at(n, co + c, 0, 0);
                                let dst = s.at(n, c, 0, 0);
                                dx[dst..dst + plane].copy_from_slice(&gout[src..src + plane]);
                            }
                        }
                        self.add_pending_raw(pending, xi, &dx);
                    }
                    co += s.c;
                }
            }
            Op::Add { a, b } => {
                self.add_pending_raw(pending, *a, gout);
                self.add_pending_raw(pending, *b, gout);
            }
            Op::ScalarMul { x, s } => {
                if need(*x) {
                    let sv = self.nodes[*s].value.data()[0];
                    let dx: Vec<f64> = gout.iter().map(|g| g * sv).collect();
                    self.add_pending_raw(pending, *x, &dx);
                }
                if need(*s) {
                    let xv = self.nodes[*x].value.data();
                    let mut ds = 0.0;
                    for (g, v) in gout.iter().zip(xv) {
                        ds += g * v;
                    }
                    self.add_pending_raw(pending, *s, &[ds]);
                }
            }
            Op::MseLoss { p, g } => {
                let pv = self.nodes[*p].value.data();
                let gv = self.nodes[*g].value.data();
                let count = pv.len() as f64;
                let go = gout[0];
                if need(*p) {
                    let dp: Vec<f64> = pv
                        .iter()
                        .zip(gv)
                        .map(|(pv, gv)| go * 2.0 * (pv - gv) / count)
                        .collect();
                    self.add_pending_raw(pending, *p, &dp);
                }
                if need(*g) {
                    let dg: Vec<f64> = pv
                        .iter()
                        .zip(gv)
                        .map(|(pv, gv)| -go * 2.0 * (pv - gv) / count)
                        .collect();
                    self.add_pending_raw(pending, *g, &dg);
                }
            }
            Op::BceLoss { p, g } => {
                let pv = self.nodes[*p].value.data();
                let gv = self.nodes[*g].value.data();
                let count = pv.len() as f64;
                let go = gout[0];
                if need(*p) {
                    let dp: Vec<f64> = pv
                        .iter()
                        .zip(gv)
                        .map(|(pv, gv)| {
                            if *pv <= BCE_EPS || *pv >= 1.0 - BCE_EPS {
                                0.0
                            } else {
                                -go * (gv / pv - (1.0 - gv) / (1.0 - pv)) / count
                            }
                        })
                        .collect();
                    self.add_pending_raw(pending, *p, &dp);
                }
            }
        }
    }
}

const BCE_EPS: f64 = 1e-7;
