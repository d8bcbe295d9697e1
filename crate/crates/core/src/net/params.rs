use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::BatchNormState;
use crate::tensor::Tensor;

/// Learnable tensors keyed by dotted parameter path, plus the running statistics of
/// every batch-normalization layer keyed by the layer's path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
    norms: BTreeMap<String, BatchNormState>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor) -> Result<()> {
        let path = path.into();
        if self.tensors.contains_key(&path) {
            return Err(Error::Consistency(format!("duplicate parameter path `{path}`")));
        }
        self.tensors.insert(path, tensor);
        Ok(())
    }

    pub fn insert_norm(&mut self, path: impl Into<String>, state: BatchNormState) {
        self.norms.insert(path.into(), state);
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.tensors.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(path)
    }

    pub fn require(&self, path: &str) -> Result<&Tensor> {
        self.tensors.get(path).ok_or_else(|| Error::Lookup {
            key: path.to_string(),
            valid: self.tensors.keys().cloned().collect(),
        })
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn norm(&self, path: &str) -> Option<&BatchNormState> {
        self.norms.get(path)
    }

    pub fn norm_mut(&mut self, path: &str) -> Option<&mut BatchNormState> {
        self.norms.get_mut(path)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn norms(&self) -> impl Iterator<Item = (&String, &BatchNormState)> {
        self.norms.iter()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    fn he_normal<R: Rng + ?Sized>(&mut self, path: String, shape: &[usize], fan_in: usize, rng: &mut R) -> Result<()> {
        let std = (2.0 / fan_in as f64).sqrt();
        self.insert(path, Tensor::randn(shape, std, rng))
    }

    pub fn init_conv<R: Rng + ?Sized>(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize, rng: &mut R) -> Result<()> {
        self.he_normal(format!("{prefix}.weight"), &[c_out, c_in, k, k], c_in * k * k, rng)?;
        self.insert(format!("{prefix}.bias"), Tensor::zeros(&[c_out]))
    }

    pub fn init_dense<R: Rng + ?Sized>(&mut self, prefix: &str, d_in: usize, d_out: usize, rng: &mut R) -> Result<()> {
        self.he_normal(format!("{prefix}.weight"), &[d_in, d_out], d_in, rng)?;
        self.insert(format!("{prefix}.bias"), Tensor::zeros(&[d_out]))
    }

    pub fn init_batchnorm(&mut self, prefix: &str, channels: usize) -> Result<()> {
        self.insert(format!("{prefix}.gamma"), Tensor::full(&[channels], 1.0))?;
        self.insert(format!("{prefix}.beta"), Tensor::zeros(&[channels]))?;
        self.insert_norm(prefix, BatchNormState::new(channels));
        Ok(())
    }

    /// Pre-activation basic block. A 1×1 projection shortcut is added whenever the
    /// block changes channel count or resolution.
    pub fn init_residual_unit<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<()> {
        self.init_batchnorm(&format!("{prefix}.bn1"), c_in)?;
        self.init_conv(&format!("{prefix}.conv1"), c_in, c_out, 3, rng)?;
        self.init_batchnorm(&format!("{prefix}.bn2"), c_out)?;
        self.init_conv(&format!("{prefix}.conv2"), c_out, c_out, 3, rng)?;
        if c_in != c_out || stride != 1 {
            self.init_conv(&format!("{prefix}.proj"), c_in, c_out, 1, rng)?;
        }
        Ok(())
    }

    pub fn init_mask_branch<R: Rng + ?Sized>(&mut self, prefix: &str, channels: usize, levels: usize, rng: &mut R) -> Result<()> {
        for l in 1..=levels {
            self.init_residual_unit(&format!("{prefix}.down{l}"), channels, channels, 1, rng)?;
        }
        self.init_residual_unit(&format!("{prefix}.middle"), channels, channels, 1, rng)?;
        for l in 1..=levels {
            self.init_residual_unit(&format!("{prefix}.up{l}"), channels, channels, 1, rng)?;
        }
        self.init_batchnorm(&format!("{prefix}.head.bn1"), channels)?;
        self.init_conv(&format!("{prefix}.head.conv1"), channels, channels, 1, rng)?;
        self.init_batchnorm(&format!("{prefix}.head.bn2"), channels)?;
        self.init_conv(&format!("{prefix}.head.conv2"), channels, channels, 1, rng)
    }

    pub fn init_attention_module<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        cfg: &super::AttentionModuleConfig,
        rng: &mut R,
    ) -> Result<()> {
        let c = cfg.channels;
        for j in 1..=cfg.pre_units {
            self.init_residual_unit(&format!("{prefix}.pre{j}"), c, c, 1, rng)?;
        }
        for j in 1..=cfg.trunk_units {
            self.init_residual_unit(&format!("{prefix}.trunk{j}"), c, c, 1, rng)?;
        }
        self.init_mask_branch(&format!("{prefix}.mask"), c, cfg.mask_levels, rng)?;
        for j in 1..=cfg.pre_units {
            self.init_residual_unit(&format!("{prefix}.post{j}"), c, c, 1, rng)?;
        }
        Ok(())
    }
}
