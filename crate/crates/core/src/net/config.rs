//! Architecture description of the residual attention classifier.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How trunk features `T` and the mask `M` are combined inside an attention module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionForm {
    /// `H = M ⊙ T`
    Naive,
    /// `H = (1 + M) ⊙ T`
    Residual,
}

impl fmt::Display for AttentionForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionForm::Naive => "naive",
            AttentionForm::Residual => "residual",
        })
    }
}

impl FromStr for AttentionForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(AttentionForm::Naive),
            "residual" => Ok(AttentionForm::Residual),
            other => Err(Error::Config(format!(
                "attention form must be `naive` or `residual`, got `{other}`"
            ))),
        }
    }
}

/// Shape of one attention module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionModuleConfig {
    /// Residual units before the trunk/mask split; the same count follows the merge.
    pub pre_units: usize,
    pub trunk_units: usize,
    /// Pooling levels in the mask branch's down/up path.
    pub mask_levels: usize,
    pub channels: usize,
}

impl AttentionModuleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_units < 1 {
            return Err(Error::Config("trunk unit count must be at least 1".into()));
        }
        if self.mask_levels < 1 {
            return Err(Error::Config("mask pooling level count must be at least 1".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("attention module channels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionNetConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// 2×2 max pooling after the stem convolution.
    pub stem_pool: bool,
    pub stage_channels: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub pre_units: usize,
    pub trunk_units: usize,
    pub mask_levels: usize,
    pub attention_form: AttentionForm,
}

impl Default for AttentionNetConfig {
    /// Grayscale 128×128 input, three stages of 16/32/64 channels, p=1 t=2 r=1.
    fn default() -> Self {
        AttentionNetConfig {
            input_channels: 1,
            input_height: 128,
            input_width: 128,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            stage_channels: vec![16, 32, 64],
            head_hidden: Vec::new(),
            pre_units: 1,
            trunk_units: 2,
            mask_levels: 1,
            attention_form: AttentionForm::Residual,
        }
    }
}

/// Spatial extent after a `k×k` convolution with padding `k/2`.
pub(crate) fn conv_extent(n: usize, k: usize, stride: usize) -> usize {
    (n + 2 * (k / 2) - k) / stride + 1
}

impl AttentionNetConfig {
    /// One stage of 4 channels on 16×16 input; small enough for exhaustive gradient checks.
    pub fn tiny() -> Self {
        AttentionNetConfig {
            input_height: 16,
            input_width: 16,
            stem_kernel: 3,
            stem_stride: 1,
            stem_pool: false,
            stage_channels: vec![4],
            ..Self::default()
        }
    }

    pub fn module_config(&self, stage: usize) -> AttentionModuleConfig {
        AttentionModuleConfig {
            pre_units: self.pre_units,
            trunk_units: self.trunk_units,
            mask_levels: self.mask_levels,
            channels: self.stage_channels[stage],
        }
    }

    /// Spatial extent (height, width) entering each stage's attention module.
    pub fn stage_extents(&self) -> Vec<(usize, usize)> {
        let mut h = conv_extent(self.input_height, self.stem_kernel, self.stem_stride);
        let mut w = conv_extent(self.input_width, self.stem_kernel, self.stem_stride);
        if self.stem_pool {
            h /= 2;
            w /= 2;
        }
        let mut out = Vec::with_capacity(self.stage_channels.len());
        for i in 0..self.stage_channels.len() {
            if i > 0 {
                h = conv_extent(h, 3, 2);
                w = conv_extent(w, 3, 2);
            }
            out.push((h, w));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.input_height == 0 || self.input_width == 0 {
            return Err(Error::Config("input geometry must be positive".into()));
        }
        if self.stem_kernel == 0 || self.stem_stride == 0 {
            return Err(Error::Config("stem kernel and stride must be positive".into()));
        }
        if self.stage_channels.is_empty() {
            return Err(Error::Config("at least one attention stage is required".into()));
        }
        if self.stage_channels.contains(&0) || self.head_hidden.contains(&0) {
            return Err(Error::Config("channel and hidden widths must be positive".into()));
        }
        if self.stem_kernel > self.input_height + 2 * (self.stem_kernel / 2)
            || self.stem_kernel > self.input_width + 2 * (self.stem_kernel / 2)
        {
            return Err(Error::Config("stem kernel larger than the padded input".into()));
        }
        self.module_config(0).validate()?;
        let div = 1usize << self.mask_levels;
        for (i, (h, w)) in self.stage_extents().into_iter().enumerate() {
            if h % div != 0 || w % div != 0 {
                return Err(Error::Config(format!(
                    "stage {}: spatial extent {h}x{w} is not divisible by 2^{} required by the mask branch",
                    i + 1,
                    self.mask_levels
                )));
            }
            if h / div < 4 || w / div < 4 {
                return Err(Error::Config(format!(
                    "stage {}: deepest mask level would be {}x{}, below the 4x4 minimum",
                    i + 1,
                    h / div,
                    w / div
                )));
            }
        }
        Ok(())
    }

    /// Flat `net.*` key=value pairs.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let join = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("net.input_channels".into(), self.input_channels.to_string()),
            ("net.input_height".into(), self.input_height.to_string()),
            ("net.input_width".into(), self.input_width.to_string()),
            ("net.stem_kernel".into(), self.stem_kernel.to_string()),
            ("net.stem_stride".into(), self.stem_stride.to_string()),
            ("net.stem_pool".into(), self.stem_pool.to_string()),
            ("net.stage_channels".into(), join(&self.stage_channels)),
            ("net.head_hidden".into(), join(&self.head_hidden)),
            ("net.pre_units".into(), self.pre_units.to_string()),
            ("net.trunk_units".into(), self.trunk_units.to_string()),
            ("net.mask_levels".into(), self.mask_levels.to_string()),
            ("net.attention_form".into(), self.attention_form.to_string()),
        ]
    }

    /// Applies any `net.*` keys present in `pairs` on top of `self`.
    pub fn apply_pairs(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in pairs {
            let Some(field) = key.strip_prefix("net.") else {
                continue;
            };
            match field {
                "input_channels" => self.input_channels = parse_num(key, value)?,
                "input_height" => self.input_height = parse_num(key, value)?,
                "input_width" => self.input_width = parse_num(key, value)?,
                "stem_kernel" => self.stem_kernel = parse_num(key, value)?,
                "stem_stride" => self.stem_stride = parse_num(key, value)?,
                "stem_pool" => self.stem_pool = parse_num(key, value)?,
                "stage_channels" => self.stage_channels = parse_list(key, value)?,
                "head_hidden" => self.head_hidden = parse_list(key, value)?,
                "pre_units" => self.pre_units = parse_num(key, value)?,
                "trunk_units" => self.trunk_units = parse_num(key, value)?,
                "mask_levels" => self.mask_levels = parse_num(key, value)?,
                "attention_form" => self.attention_form = value.parse()?,
                _ => return Err(Error::Config(format!("unknown key `{key}`"))),
            }
        }
        Ok(())
    }
}

pub(crate) fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for `{key}`")))
}

pub(crate) fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = AttentionNetConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.stage_channels.len(), 3);
        assert_eq!(cfg.stage_extents(), vec![(32, 32), (16, 16), (8, 8)]);
        assert_eq!((cfg.pre_units, cfg.trunk_units, cfg.mask_levels), (1, 2, 1));
        AttentionNetConfig::tiny().validate().unwrap();
    }

    #[test]
    fn geometry_error_names_first_failing_stage() {
        let cfg = AttentionNetConfig {
            stage_channels: vec![16, 32, 64, 128],
            ..Default::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("stage 4"), "{msg}");
        let cfg = AttentionNetConfig {
            input_height: 100,
            ..Default::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("stage 1"), "{msg}");
    }

    #[test]
    fn module_invariants() {
        let mut cfg = AttentionNetConfig::default();
        cfg.trunk_units = 0;
        assert!(cfg.validate().is_err());
        cfg.trunk_units = 1;
        cfg.mask_levels = 0;
        assert!(cfg.validate().is_err());
        cfg.mask_levels = 1;
        cfg.pre_units = 0;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn pairs_round_trip() {
        let cfg = AttentionNetConfig {
            head_hidden: vec![8, 4],
            attention_form: AttentionForm::Naive,
            ..Default::default()
        };
        let map: BTreeMap<_, _> = cfg.to_pairs().into_iter().collect();
        let mut back = AttentionNetConfig::tiny();
        back.apply_pairs(&map).unwrap();
        assert_eq!(back, cfg);
    }
}
