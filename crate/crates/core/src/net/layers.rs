//! Residual units, the mask branch and attention modules recorded onto a tape.

use std::collections::BTreeMap;

use super::config::{AttentionForm, AttentionModuleConfig};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tape::{BatchNormState, Mode, Tape, Var};
use crate::tensor::Tensor;

/// Recording context: a fresh tape, the parameter store it reads from, and the
/// batch-norm statistics updated by train-mode passes.
pub struct LayerCtx<'a> {
    pub tape: Tape,
    params: &'a ParamStore,
    mode: Mode,
    track: bool,
    vars: BTreeMap<String, Var>,
    norms: BTreeMap<String, BatchNormState>,
    captures: BTreeMap<String, Var>,
}

/// Everything a finished recording produced.
pub struct Recording {
    pub tape: Tape,
    /// Tape leaf for every parameter that was used.
    pub vars: BTreeMap<String, Var>,
    /// Updated running statistics (train mode only).
    pub norms: BTreeMap<String, BatchNormState>,
    pub captures: BTreeMap<String, Var>,
}

impl<'a> LayerCtx<'a> {
    /// `track` controls whether parameter leaves require gradients.
    pub fn new(params: &'a ParamStore, mode: Mode, track: bool) -> Self {
        Self::from_tape(Tape::new(), params, mode, track)
    }

    /// Continues recording on an existing tape.
    pub fn from_tape(tape: Tape, params: &'a ParamStore, mode: Mode, track: bool) -> Self {
        LayerCtx {
            tape,
            params,
            mode,
            track,
            vars: BTreeMap::new(),
            norms: BTreeMap::new(),
            captures: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.tape.leaf(t)
    }

    pub fn param(&mut self, path: &str) -> Result<Var> {
        if let Some(v) = self.vars.get(path) {
            return Ok(*v);
        }
        let mut t = self.params.require(path)?.clone();
        t.requires_grad = self.track;
        let v = self.tape.leaf(t);
        self.vars.insert(path.to_string(), v);
        Ok(v)
    }

    /// Uses an existing tape variable for parameter `path` instead of the stored tensor.
    pub fn bind(&mut self, path: impl Into<String>, v: Var) {
        self.vars.insert(path.into(), v);
    }

    pub fn has_param(&self, path: &str) -> bool {
        self.params.contains(path)
    }

    pub fn capture(&mut self, key: impl Into<String>, v: Var) {
        self.captures.insert(key.into(), v);
    }

    pub fn conv(&mut self, x: Var, prefix: &str, stride: usize, padding: usize) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        self.tape.conv2d(x, w, Some(b), stride, padding)
    }

    pub fn dense(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        self.tape.dense(x, w, b)
    }

    pub fn batchnorm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let mut state = match self.norms.get(prefix) {
            Some(s) => s.clone(),
            None => self
                .params
                .norm(prefix)
                .ok_or_else(|| Error::Lookup {
                    key: prefix.to_string(),
                    valid: self.params.norms().map(|(k, _)| k.clone()).collect(),
                })?
                .clone(),
        };
        let y = self.tape.batchnorm2d(x, gamma, beta, &mut state, self.mode)?;
        if self.mode == Mode::Train {
            self.norms.insert(prefix.to_string(), state);
        }
        Ok(y)
    }

    /// BN → ReLU.
    pub fn bn_relu(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let y = self.batchnorm(x, prefix)?;
        Ok(self.tape.relu(y))
    }

    pub fn finish(self) -> Recording {
        Recording {
            tape: self.tape,
            vars: self.vars,
            norms: self.norms,
            captures: self.captures,
        }
    }
}

/// `shortcut(x) + F(x)` with `F = BN→ReLU→conv3×3→BN→ReLU→conv3×3`.
///
/// The shortcut is the identity unless `{prefix}.proj` exists, in which case a
/// strided 1×1 convolution of the pre-activated input is used.
pub fn residual_unit_forward(ctx: &mut LayerCtx<'_>, x: Var, prefix: &str, stride: usize) -> Result<Var> {
    let c_in = ctx.tape.value(x).nchw("residual_unit")?.1;
    let c_out = ctx.params.require(&format!("{prefix}.conv2.weight"))?.shape()[0];
    let has_proj = ctx.has_param(&format!("{prefix}.proj.weight"));
    if !has_proj && (c_in != c_out || stride != 1) {
        return Err(Error::Config(format!(
            "residual unit `{prefix}` maps {c_in}→{c_out} channels with stride {stride} but has no projection shortcut"
        )));
    }
    let a = ctx.bn_relu(x, &format!("{prefix}.bn1"))?;
    let shortcut = if has_proj {
        ctx.conv(a, &format!("{prefix}.proj"), stride, 0)?
    } else {
        x
    };
    let h = ctx.conv(a, &format!("{prefix}.conv1"), stride, 1)?;
    let h = ctx.bn_relu(h, &format!("{prefix}.bn2"))?;
    let h = ctx.conv(h, &format!("{prefix}.conv2"), 1, 1)?;
    ctx.tape.add(shortcut, h)
}

/// Pre-sigmoid mask logits: `[maxpool → unit] × r → unit → [up2 → unit] × r →
/// BN→ReLU→conv1×1 → BN→ReLU→conv1×1`.
pub fn mask_logits_forward(ctx: &mut LayerCtx<'_>, x: Var, prefix: &str, levels: usize) -> Result<Var> {
    let (_, _, h, w) = ctx.tape.value(x).nchw("mask_branch")?;
    let div = 1 << levels;
    if h % div != 0 || w % div != 0 {
        return Err(Error::Config(format!(
            "mask branch `{prefix}`: extent {h}x{w} not divisible by 2^{levels}"
        )));
    }
    let mut y = x;
    for l in 1..=levels {
        y = ctx.tape.maxpool2d(y, 2, 2)?;
        y = residual_unit_forward(ctx, y, &format!("{prefix}.down{l}"), 1)?;
    }
    y = residual_unit_forward(ctx, y, &format!("{prefix}.middle"), 1)?;
    for l in 1..=levels {
        y = ctx.tape.interp_up2(y)?;
        y = residual_unit_forward(ctx, y, &format!("{prefix}.up{l}"), 1)?;
    }
    y = ctx.bn_relu(y, &format!("{prefix}.head.bn1"))?;
    y = ctx.conv(y, &format!("{prefix}.head.conv1"), 1, 0)?;
    y = ctx.bn_relu(y, &format!("{prefix}.head.bn2"))?;
    ctx.conv(y, &format!("{prefix}.head.conv2"), 1, 0)
}

/// The mask `M(x)`, same shape as `x`, every entry in (0, 1).
pub fn mask_branch_forward(ctx: &mut LayerCtx<'_>, x: Var, prefix: &str, levels: usize) -> Result<Var> {
    let logits = mask_logits_forward(ctx, x, prefix, levels)?;
    Ok(ctx.tape.sigmoid(logits))
}

/// Intermediate values of one attention module.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    /// After the pre-processing units; input to both branches.
    pub split: Var,
    pub trunk: Var,
    pub mask: Var,
    pub combined: Var,
    pub output: Var,
}

pub fn combine(tape: &mut Tape, form: AttentionForm, mask: Var, trunk: Var) -> Result<Var> {
    match form {
        AttentionForm::Naive => tape.mul(mask, trunk),
        AttentionForm::Residual => tape.scalar_add_one_mul(mask, trunk),
    }
}

/// p pre units → trunk (t units) and mask branch → combine → p post units.
pub fn attention_module_forward(
    ctx: &mut LayerCtx<'_>,
    x: Var,
    prefix: &str,
    cfg: &AttentionModuleConfig,
    form: AttentionForm,
) -> Result<AttentionOutput> {
    let c = ctx.tape.value(x).nchw("attention_module")?.1;
    if c != cfg.channels {
        return Err(Error::dim(
            "attention_module",
            format!("input has {c} channels, module `{prefix}` expects {}", cfg.channels),
        ));
    }
    let mut split = x;
    for j in 1..=cfg.pre_units {
        split = residual_unit_forward(ctx, split, &format!("{prefix}.pre{j}"), 1)?;
    }
    let mut trunk = split;
    for j in 1..=cfg.trunk_units {
        trunk = residual_unit_forward(ctx, trunk, &format!("{prefix}.trunk{j}"), 1)?;
    }
    let mask = mask_branch_forward(ctx, split, &format!("{prefix}.mask"), cfg.mask_levels)?;
    let combined = combine(&mut ctx.tape, form, mask, trunk)?;
    let mut output = combined;
    for j in 1..=cfg.pre_units {
        output = residual_unit_forward(ctx, output, &format!("{prefix}.post{j}"), 1)?;
    }
    ctx.capture(format!("{prefix}.trunk"), trunk);
    ctx.capture(format!("{prefix}.mask"), mask);
    ctx.capture(prefix.to_string(), output);
    Ok(AttentionOutput {
        split,
        trunk,
        mask,
        combined,
        output,
    })
}
