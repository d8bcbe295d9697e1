use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::AttentionNetConfig;
use super::layers::{attention_module_forward, residual_unit_forward, LayerCtx, Recording};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tape::{Mode, Var};
use crate::tensor::Tensor;

/// A configured classifier together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: AttentionNetConfig,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    /// Completed training epochs.
    pub epoch: usize,
    pub params: ParamStore,
}

/// A recorded forward pass.
pub struct Forward {
    pub rec: Recording,
    /// Pre-sigmoid logits, shape N.
    pub logits: Var,
    /// Probabilities, shape N.
    pub scores: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub scores: Tensor,
    pub captures: BTreeMap<String, Tensor>,
}

const EVAL_CHUNK: usize = 16;

/// Assembles the classifier: stem → stages of attention modules (with a strided
/// residual unit between stages) → two residual units → BN/ReLU → global average
/// pool → dense layers → sigmoid.
pub fn build_network(config: &AttentionNetConfig, seed: u64) -> Result<Network> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let first = config.stage_channels[0];
    p.init_conv("stem.conv", config.input_channels, first, config.stem_kernel, &mut rng)?;
    for (i, &c) in config.stage_channels.iter().enumerate() {
        let stage = i + 1;
        if i > 0 {
            let prev = config.stage_channels[i - 1];
            p.init_residual_unit(&format!("stage{stage}.down"), prev, c, 2, &mut rng)?;
        }
        p.init_attention_module(&format!("stage{stage}.attention"), &config.module_config(i), &mut rng)?;
    }
    let last = *config.stage_channels.last().expect("validated non-empty");
    p.init_residual_unit("head.unit1", last, last, 1, &mut rng)?;
    p.init_residual_unit("head.unit2", last, last, 1, &mut rng)?;
    p.init_batchnorm("head.bn", last)?;
    let mut width = last;
    for (j, &hdim) in config.head_hidden.iter().enumerate() {
        p.init_dense(&format!("head.dense{}", j + 1), width, hdim, &mut rng)?;
        width = hdim;
    }
    p.init_dense("head.out", width, 1, &mut rng)?;
    Ok(Network {
        config: config.clone(),
        seed,
        epoch: 0,
        params: p,
    })
}

impl Network {
    /// Every key accepted by [`Network::forward`]'s capture list.
    pub fn capture_points(&self) -> Vec<String> {
        let mut keys = vec!["stem".to_string()];
        for i in 1..=self.config.stage_channels.len() {
            if i > 1 {
                keys.push(format!("stage{i}.down"));
            }
            keys.push(format!("stage{i}.attention.trunk"));
            keys.push(format!("stage{i}.attention.mask"));
            keys.push(format!("stage{i}.attention"));
        }
        keys.extend(["head.unit1", "head.unit2", "head.features"].map(String::from));
        keys
    }

    /// Output of the last attention module.
    pub fn default_explain_layer(&self) -> String {
        format!("stage{}.attention", self.config.stage_channels.len())
    }

    pub fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let c = &self.config;
        let want = [c.input_channels, c.input_height, c.input_width];
        match batch.shape() {
            [_, rest @ ..] if rest == want => Ok(()),
            s => Err(Error::Config(format!(
                "expected input of shape N×{}×{}×{}, found {:?}",
                want[0], want[1], want[2], s
            ))),
        }
    }

    /// Records a forward pass on a fresh tape. `track` makes parameter leaves
    /// require gradients.
    pub fn record(&self, batch: &Tensor, mode: Mode, track: bool) -> Result<Forward> {
        self.check_batch(batch)?;
        let mut ctx = LayerCtx::new(&self.params, mode, track);
        let x = ctx.input(batch.clone());
        let (logits, scores) = self.forward_on(&mut ctx, x)?;
        Ok(Forward {
            rec: ctx.finish(),
            logits,
            scores,
        })
    }

    /// Records the whole network on `ctx` starting from the NCHW batch `x`.
    /// Returns the (logits, scores) variables, both of shape N.
    pub fn forward_on(&self, ctx: &mut LayerCtx<'_>, x: Var) -> Result<(Var, Var)> {
        self.check_batch(ctx.tape.value(x))?;
        let cfg = &self.config;
        let n = ctx.tape.value(x).shape()[0];
        let mut y = ctx.conv(x, "stem.conv", cfg.stem_stride, cfg.stem_kernel / 2)?;
        if cfg.stem_pool {
            y = ctx.tape.maxpool2d(y, 2, 2)?;
        }
        ctx.capture("stem", y);
        for i in 0..cfg.stage_channels.len() {
            let stage = i + 1;
            if i > 0 {
                y = residual_unit_forward(ctx, y, &format!("stage{stage}.down"), 2)?;
                ctx.capture(format!("stage{stage}.down"), y);
            }
            y = attention_module_forward(
                ctx,
                y,
                &format!("stage{stage}.attention"),
                &cfg.module_config(i),
                cfg.attention_form,
            )?
            .output;
        }
        y = residual_unit_forward(ctx, y, "head.unit1", 1)?;
        ctx.capture("head.unit1", y);
        y = residual_unit_forward(ctx, y, "head.unit2", 1)?;
        ctx.capture("head.unit2", y);
        y = ctx.bn_relu(y, "head.bn")?;
        ctx.capture("head.features", y);
        let mut z = ctx.tape.global_avg_pool(y)?;
        for j in 1..=cfg.head_hidden.len() {
            z = ctx.dense(z, &format!("head.dense{j}"))?;
            z = ctx.tape.relu(z);
        }
        z = ctx.dense(z, "head.out")?;
        let logits = ctx.tape.reshape(z, &[n])?;
        let scores = ctx.tape.sigmoid(logits);
        Ok((logits, scores))
    }

    /// Scores a batch and returns the requested intermediate activations.
    pub fn forward(&self, batch: &Tensor, mode: Mode, capture: &[&str]) -> Result<ForwardOutput> {
        let fwd = self.record(batch, mode, false)?;
        let mut captures = BTreeMap::new();
        for key in capture {
            let v = fwd.rec.captures.get(*key).ok_or_else(|| Error::Lookup {
                key: key.to_string(),
                valid: self.capture_points(),
            })?;
            captures.insert(key.to_string(), fwd.rec.tape.value(*v).clone());
        }
        Ok(ForwardOutput {
            scores: fwd.rec.tape.value(fwd.scores).clone(),
            captures,
        })
    }

    /// Eval-mode probabilities for any number of C×H×W images, processed in
    /// fixed-size chunks.
    pub fn predict(&self, images: &[&Tensor]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_CHUNK) {
            let batch = Tensor::stack(chunk)?;
            let f = self.record(&batch, Mode::Eval, false)?;
            out.extend_from_slice(f.rec.tape.value(f.scores).data());
        }
        Ok(out)
    }

    /// Eval-mode pre-sigmoid logits.
    pub fn predict_logits(&self, images: &[&Tensor]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_CHUNK) {
            let batch = Tensor::stack(chunk)?;
            let f = self.record(&batch, Mode::Eval, false)?;
            out.extend_from_slice(f.rec.tape.value(f.logits).data());
        }
        Ok(out)
    }
}
