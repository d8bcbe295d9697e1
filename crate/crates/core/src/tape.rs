//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in execution order, so node inputs always
//! precede the node itself. [`Tape::backward`] walks the tape in reverse and leaves
//! the tape untouched; it can be called again, e.g. from a different output node.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{same_shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics and hyperparameters of one batch-normalization layer.
///
/// The affine `gamma`/`beta` parameters live with the other learnable tensors and are
/// passed to [`Tape::batchnorm2d`] as variables.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight of the old running value in each update.
    pub momentum: f64,
    pub epsilon: f64,
    initialized: bool,
}

impl BatchNormState {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    /// Running mean 0 and variance 1, usable in eval mode immediately.
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
            initialized: true,
        }
    }

    /// A state whose running statistics are unknown; eval-mode use is an error
    /// until a train-mode pass has populated them.
    pub fn uninitialized(channels: usize) -> Self {
        BatchNormState {
            initialized: false,
            ..Self::new(channels)
        }
    }

    pub fn with_stats(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::State("running mean/var length mismatch".into()));
        }
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::State("running variance must be strictly positive".into()));
        }
        Ok(BatchNormState {
            running_mean: mean,
            running_var: var,
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
            initialized: true,
        })
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        input: Var,
        window: usize,
        stride: usize,
        argmax: Vec<usize>,
    },
    Up2 {
        input: Var,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    OnePlusMul {
        mask: Var,
        features: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    GlobalAvgPool {
        input: Var,
    },
    Sum {
        input: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Reshape {
        input: Var,
    },
    Bce {
        scores: Var,
        labels: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Signs of every ReLU input and winners of every pooling window on a tape.
///
/// Two evaluations with equal patterns lie on the same linear piece of every
/// non-smooth op, which is what finite-difference checks need.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationPattern(Vec<u64>);

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, mut value: Tensor, op: Op, needs_grad: bool) -> Var {
        value.requires_grad = false;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records an input. Gradients are tracked iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad;
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let (n, c_in, h, wd) = x.nchw("conv2d")?;
        let (c_out, wi, kh, kw) = w.nchw("conv2d")?;
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride must be positive"));
        }
        if wi != c_in {
            return Err(Error::dim(
                "conv2d",
                format!("input channels (axis 1 of input) = {c_in} but weight in-channels (axis 1 of weight) = {wi}"),
            ));
        }
        if kh != kw {
            return Err(Error::dim(
                "conv2d",
                format!("kernel must be square, got axes 2,3 of weight = {kh}x{kw}"),
            ));
        }
        if h + 2 * padding < kh || wd + 2 * padding < kw {
            return Err(Error::dim(
                "conv2d",
                format!("padded spatial extent (axes 2,3) {}x{} smaller than kernel {kh}x{kw}", h + 2 * padding, wd + 2 * padding),
            ));
        }
        if let Some(b) = bias {
            let bs = self.value(b).shape();
            if bs != [c_out] {
                return Err(Error::dim(
                    "conv2d",
                    format!("bias shape {bs:?} does not match weight out-channels (axis 0) = {c_out}"),
                ));
            }
        }
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            c_out,
            k: kh,
            stride,
            pad: padding,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (wd + 2 * padding - kw) / stride + 1,
        };
        let mut out = vec![0.0; n * c_out * geom.oh * geom.ow];
        kernels::conv2d_forward(
            &geom,
            x.data(),
            w.data(),
            bias.map(|b| self.value(b).data()),
            &mut out,
        );
        let value = Tensor::from_vec(&[n, c_out, geom.oh, geom.ow], out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let ng = self.needs(&deps);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            ng,
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.nchw("maxpool2d")?;
        if window == 0 || stride == 0 {
            return Err(Error::dim("maxpool2d", "window and stride must be positive"));
        }
        if h < window || w < window {
            return Err(Error::dim(
                "maxpool2d",
                format!("window {window} exceeds spatial extent {h}x{w}"),
            ));
        }
        let (out, argmax, oh, ow) = kernels::maxpool_forward((n, c, h, w), window, stride, x.data());
        let value = Tensor::from_vec(&[n, c, oh, ow], out)?;
        let ng = self.needs(&[input]);
        Ok(self.push(
            value,
            Op::MaxPool {
                input,
                window,
                stride,
                argmax,
            },
            ng,
        ))
    }

    /// Bilinear upsampling by exactly 2 along both spatial axes, half-pixel centres.
    pub fn interp_up2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let dims = x.nchw("interp_up2")?;
        let out = kernels::up2_forward(dims, x.data());
        let value = Tensor::from_vec(&[dims.0, dims.1, 2 * dims.2, 2 * dims.3], out)?;
        let ng = self.needs(&[input]);
        Ok(self.push(value, Op::Up2 { input }, ng))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.max(0.0));
        let ng = self.needs(&[input]);
        self.push(value, Op::Relu { input }, ng)
    }

    /// Logistic function, clamped so outputs stay strictly inside (0, 1).
    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(sigmoid);
        let ng = self.needs(&[input]);
        self.push(value, Op::Sigmoid { input }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(ta.shape(), data)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(ta.shape(), data)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// `(1 + mask) ⊙ features`, the residual attention combination.
    pub fn scalar_add_one_mul(&mut self, mask: Var, features: Var) -> Result<Var> {
        let (tm, tf) = (self.value(mask), self.value(features));
        same_shape("scalar_add_one_mul", tm, tf)?;
        let data = tm
            .data()
            .iter()
            .zip(tf.data())
            .map(|(m, f)| (1.0 + m) * f)
            .collect();
        let value = Tensor::from_vec(tm.shape(), data)?;
        let ng = self.needs(&[mask, features]);
        Ok(self.push(value, Op::OnePlusMul { mask, features }, ng))
    }

    /// Batch normalization over the N, H, W axes of an NCHW tensor.
    ///
    /// In train mode the batch statistics normalize the input and the running
    /// statistics in `state` are updated. In eval mode only the running statistics
    /// are used.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: Mode,
    ) -> Result<Var> {
        let x = self.value(input);
        let dims = x.nchw("batchnorm2d")?;
        let (n, c, h, w) = dims;
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.shape() != [c] || b.shape() != [c] || state.channels() != c {
            return Err(Error::dim(
                "batchnorm2d",
                format!(
                    "input has {c} channels but gamma {:?}, beta {:?}, state {} channels",
                    g.shape(),
                    b.shape(),
                    state.channels()
                ),
            ));
        }
        let (mean, var) = match mode {
            Mode::Train => {
                let (mean, var) = kernels::channel_moments(dims, x.data());
                let m = (n * h * w) as f64;
                let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                for ch in 0..c {
                    state.running_mean[ch] =
                        state.momentum * state.running_mean[ch] + (1.0 - state.momentum) * mean[ch];
                    state.running_var[ch] = state.momentum * state.running_var[ch]
                        + (1.0 - state.momentum) * var[ch] * unbias;
                }
                state.initialized = true;
                (mean, var)
            }
            Mode::Eval => {
                if !state.initialized {
                    return Err(Error::State(
                        "batch normalization running statistics are uninitialized".into(),
                    ));
                }
                (state.running_mean.clone(), state.running_var.clone())
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.epsilon).sqrt()).collect();
        let hw = h * w;
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for bi in 0..n {
            for ch in 0..c {
                let off = (bi * c + ch) * hw;
                for i in off..off + hw {
                    let xh = (x.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g.data()[ch] * xh + b.data()[ch];
                }
            }
        }
        let value = Tensor::from_vec(x.shape(), out)?;
        let ng = self.needs(&[input, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
            ng,
        ))
    }

    /// Affine map `input (N×D) · weight (D×K) + bias (K)`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (n, d) = match x.shape() {
            [n, d] => (*n, *d),
            s => return Err(Error::dim("dense", format!("input must be N×D, got {s:?}"))),
        };
        let k = match w.shape() {
            [wd, k] if *wd == d => *k,
            s => {
                return Err(Error::dim(
                    "dense",
                    format!("weight must be {d}×K to match input axis 1, got {s:?}"),
                ))
            }
        };
        if b.shape() != [k] {
            return Err(Error::dim(
                "dense",
                format!("bias shape {:?} does not match weight axis 1 = {k}", b.shape()),
            ));
        }
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..k {
                let mut s = b.data()[j];
                for p in 0..d {
                    s += x.data()[i * d + p] * w.data()[p * k + j];
                }
                out[i * k + j] = s;
            }
        }
        let value = Tensor::from_vec(&[n, k], out)?;
        let ng = self.needs(&[input, weight, bias]);
        Ok(self.push(value, Op::Dense { input, weight, bias }, ng))
    }

    /// Spatial mean of an NCHW tensor, giving N×C.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.nchw("global_avg_pool")?;
        let hw = h * w;
        let out = x
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::from_vec(&[n, c], out)?;
        let ng = self.needs(&[input]);
        Ok(self.push(value, Op::GlobalAvgPool { input }, ng))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let ng = self.needs(&[input]);
        self.push(value, Op::Sum { input }, ng)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let value = self.value(input).map(|v| v * factor);
        let ng = self.needs(&[input]);
        self.push(value, Op::Scale { input, factor }, ng)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        let ng = self.needs(&[input]);
        Ok(self.push(value, Op::Reshape { input }, ng))
    }

    /// Mean binary cross-entropy of probabilities `scores` against `labels` in {0, 1}.
    pub fn bce_loss(&mut self, scores: Var, labels: &[f64]) -> Result<Var> {
        let s = self.value(scores);
        if s.len() != labels.len() {
            return Err(Error::dim(
                "bce_loss",
                format!("{} scores but {} labels", s.len(), labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Input(format!("label {bad} is not in {{0, 1}}")));
        }
        let n = labels.len() as f64;
        let loss = s
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
            .sum::<f64>()
            / n;
        let ng = self.needs(&[scores]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                scores,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    /// Minimum distance of any ReLU input from zero and of any pooling window's
    /// winner from its runner-up.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for v in self.value(*input).data() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::MaxPool {
                    input,
                    window,
                    stride,
                    ..
                } => {
                    let x = self.value(*input);
                    let dims = x.nchw("maxpool2d").expect("validated at record time");
                    margin = margin.min(kernels::maxpool_margin(dims, *window, *stride, x.data()));
                }
                _ => {}
            }
        }
        margin
    }

    pub fn activation_pattern(&self) -> ActivationPattern {
        let mut bits = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    let data = self.value(*input).data();
                    for chunk in data.chunks(64) {
                        let mut word = 0u64;
                        for (i, v) in chunk.iter().enumerate() {
                            if *v > 0.0 {
                                word |= 1 << i;
                            }
                        }
                        bits.push(word);
                    }
                }
                Op::MaxPool { argmax, .. } => bits.extend(argmax.iter().map(|&i| i as u64)),
                _ => {}
            }
        }
        ActivationPattern(bits)
    }

    /// Back-propagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar output, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut out: Vec<Option<Tensor>> = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|g| Tensor::from_vec(self.nodes[i].value.shape(), g).expect("gradient shape"))
            })
            .collect();
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if matches!(node.op, Op::Leaf) && node.needs_grad && out[i].is_none() {
                out[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let cg = kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    (
                        self.wants(*input),
                        self.wants(*weight),
                        bias.is_some_and(|b| self.wants(b)),
                    ),
                );
                if let Some(gi) = cg.input {
                    self.accumulate(grads, *input, gi);
                }
                if let Some(gw) = cg.weight {
                    self.accumulate(grads, *weight, gw);
                }
                if let (Some(b), Some(gb)) = (bias, cg.bias) {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MaxPool { input, argmax, .. } => {
                let mut gi = vec![0.0; self.value(*input).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    gi[src] += gv;
                }
                self.accumulate(grads, *input, gi);
            }
            Op::Up2 { input } => {
                let dims = self.value(*input).nchw("interp_up2").expect("validated");
                self.accumulate(grads, *input, kernels::up2_backward(dims, g));
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let gi = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *input, gi);
            }
            Op::Sigmoid { input } => {
                let gi = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *input, gi);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let gb: Vec<f64> =
                        self.value(*b).data().iter().zip(g).map(|(y, gv)| y * gv).collect();
                    self.accumulate(grads, *a, gb);
                }
                if self.wants(*b) {
                    let ga: Vec<f64> =
                        self.value(*a).data().iter().zip(g).map(|(x, gv)| x * gv).collect();
                    self.accumulate(grads, *b, ga);
                }
            }
            Op::OnePlusMul { mask, features } => {
                if self.wants(*mask) {
                    let gm = self
                        .value(*features)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(f, gv)| f * gv)
                        .collect();
                    self.accumulate(grads, *mask, gm);
                }
                if self.wants(*features) {
                    let gf = self
                        .value(*mask)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(m, gv)| (1.0 + m) * gv)
                        .collect();
                    self.accumulate(grads, *features, gf);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, h, w) = node.value.nchw("batchnorm2d").expect("validated");
                let hw = h * w;
                let m = (n * hw) as f64;
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for bi in 0..n {
                    for ch in 0..c {
                        let off = (bi * c + ch) * hw;
                        for i in off..off + hw {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                if self.wants(*input) {
                    let mut gi = vec![0.0; g.len()];
                    for bi in 0..n {
                        for ch in 0..c {
                            let off = (bi * c + ch) * hw;
                            let scale = gam[ch] * inv_std[ch];
                            for i in off..off + hw {
                                gi[i] = if *batch_stats {
                                    scale * (g[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m)
                                } else {
                                    scale * g[i]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *input, gi);
                }
                self.accumulate(grads, *gamma, sum_gx);
                self.accumulate(grads, *beta, sum_g);
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, d) = (x.shape()[0], x.shape()[1]);
                let k = w.shape()[1];
                if self.wants(*input) {
                    let mut gi = vec![0.0; n * d];
                    for i in 0..n {
                        for p in 0..d {
                            let mut s = 0.0;
                            for j in 0..k {
                                s += g[i * k + j] * w.data()[p * k + j];
                            }
                            gi[i * d + p] = s;
                        }
                    }
                    self.accumulate(grads, *input, gi);
                }
                if self.wants(*weight) {
                    let mut gw = vec![0.0; d * k];
                    for i in 0..n {
                        for p in 0..d {
                            for j in 0..k {
                                gw[p * k + j] += x.data()[i * d + p] * g[i * k + j];
                            }
                        }
                    }
                    self.accumulate(grads, *weight, gw);
                }
                if self.wants(*bias) {
                    let mut gb = vec![0.0; k];
                    for i in 0..n {
                        for j in 0..k {
                            gb[j] += g[i * k + j];
                        }
                    }
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::GlobalAvgPool { input } => {
                let (_, _, h, w) = self.value(*input).nchw("global_avg_pool").expect("validated");
                let hw = h * w;
                let mut gi = vec![0.0; g.len() * hw];
                for (plane, &gv) in gi.chunks_mut(hw).zip(g) {
                    plane.fill(gv / hw as f64);
                }
                self.accumulate(grads, *input, gi);
            }
            Op::Sum { input } => {
                let n = self.value(*input).len();
                self.accumulate(grads, *input, vec![g[0]; n]);
            }
            Op::Scale { input, factor } => {
                self.accumulate(grads, *input, g.iter().map(|v| v * factor).collect());
            }
            Op::Reshape { input } => {
                self.accumulate(grads, *input, g.to_vec());
            }
            Op::Bce { scores, labels } => {
                let n = labels.len() as f64;
                let gi = self
                    .value(*scores)
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&s, &y)| g[0] * (-y / s + (1.0 - y) / (1.0 - s)) / n)
                    .collect();
                self.accumulate(grads, *scores, gi);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` influenced the loss and
    /// depends on a tracked leaf.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a tracked leaf. Panics if `v` is not one.
    pub fn wrt(&self, v: Var) -> &Tensor {
        self.get(v)
            .expect("no gradient recorded: variable is not a tracked leaf on this tape")
    }
}
