//! Run configuration: flat `key=value` lines with section prefixes.
//!
//! Resolution order, later wins: built-in defaults, `--config` file, `--set`
//! overrides, then command-line flags. The seed falls back to `ATTNCT_SEED`
//! when neither a flag nor the config supplies one.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use attnct::data::{AugmentationSpec, SplitMode, SplitSpec};
use attnct::explain::{Method, OcclusionSpec};
use attnct::metrics::default_thresholds;
use attnct::{AttentionNetConfig, Error, OptimizerConfig, OptimizerKind, Result, TrainConfig};

pub const SEED_ENV: &str = "ATTNCT_SEED";
pub const RUN_CONFIG_FILE: &str = "run_config.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub net: AttentionNetConfig,
    pub train: TrainConfig,
    pub optim: OptimizerConfig,
    pub augment: AugmentationSpec,
    pub split: SplitSpec,
    pub occlusion: OcclusionSpec,
    pub eval_thresholds: Vec<f64>,
    pub eval_bins: usize,
    /// Resample data to the model geometry instead of rejecting a mismatch.
    pub eval_resize: bool,
    pub eval_localize: Option<Method>,
    pub explain_method: Method,
    /// Empty means the network's default layer.
    pub explain_layer: Option<String>,
    /// Empty means `[seed]`.
    pub sweep_seeds: Vec<u64>,
    seed_given: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: None,
            out: None,
            model: None,
            image: None,
            mask: None,
            net: AttentionNetConfig::default(),
            train: TrainConfig::default(),
            optim: OptimizerConfig::new(OptimizerKind::RmsProp, 0.01),
            augment: AugmentationSpec::default(),
            split: SplitSpec::default(),
            occlusion: OcclusionSpec::default(),
            eval_thresholds: default_thresholds(),
            eval_bins: 10,
            eval_resize: false,
            eval_localize: None,
            explain_method: Method::GradCam,
            explain_layer: None,
            sweep_seeds: Vec::new(),
            seed_given: false,
        }
    }
}

fn num<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value.trim().parse().map_err(|_| format!("cannot parse `{value}`"))
}

fn boolean(value: &str) -> std::result::Result<bool, String> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, found `{value}`")),
    }
}

fn list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(num)
        .collect()
}

fn path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn split_mode(value: &str) -> std::result::Result<SplitMode, String> {
    let v = value.trim();
    match v {
        "auto" => Ok(SplitMode::Auto),
        "all_train" => Ok(SplitMode::AllTrain),
        _ => {
            if let Some(p) = v.strip_prefix("file:") {
                Ok(SplitMode::File(PathBuf::from(p)))
            } else if let Some(f) = v.strip_prefix("fraction:") {
                let f: f64 = num(f)?;
                if !(f > 0.0 && f < 1.0) {
                    return Err(format!("test fraction {f} outside (0, 1)"));
                }
                Ok(SplitMode::TestFraction(f))
            } else {
                Err(format!("expected auto, all_train, file:<path> or fraction:<f>, found `{v}`"))
            }
        }
    }
}

fn show_split(mode: &SplitMode) -> String {
    match mode {
        SplitMode::Auto => "auto".into(),
        SplitMode::AllTrain => "all_train".into(),
        SplitMode::File(p) => format!("file:{}", p.display()),
        SplitMode::TestFraction(f) => format!("fraction:{f}"),
    }
}

impl RunConfig {
    /// Defaults, then `file`, then each `KEY=VALUE` in `sets`, then `seed`.
    pub fn resolve(file: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(file) = file {
            let text = std::fs::read_to_string(file).map_err(|e| Error::Io {
                path: file.to_path_buf(),
                source: e,
            })?;
            cfg.apply_text(&text, &file.display().to_string())?;
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, found `{s}`")))?;
            cfg.set(k.trim(), v).map_err(|m| Error::Config(format!("--set {s}: {m}")))?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
            cfg.seed_given = true;
        }
        if !cfg.seed_given {
            if let Ok(v) = std::env::var(SEED_ENV) {
                cfg.seed = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
            }
        }
        cfg.finish()?;
        Ok(cfg)
    }

    /// Parses config text; errors carry `origin:line`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |m: String| Error::Config(format!("{origin}:{}: {m}", i + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key=value, found `{line}`")))?;
            self.set(k.trim(), v).map_err(at)?;
        }
        Ok(())
    }

    /// Sets one key. Errors are plain messages; callers add the location.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => {
                self.seed = num(v)?;
                self.seed_given = true;
            }
            "data" => self.data = path(v),
            "out" => self.out = path(v),
            "model" => self.model = path(v),
            "image" => self.image = path(v),
            "mask" => self.mask = path(v),
            k if k.starts_with("net.") => {
                let map = BTreeMap::from([(k.to_string(), v.to_string())]);
                self.net.apply_pairs(&map).map_err(|e| strip(e.to_string()))?;
            }
            "train.epochs" => self.train.epochs = num(v)?,
            "train.batch_size" => self.train.batch_size = num(v)?,
            "train.threshold" => self.train.eval_threshold = num(v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = num(v)?,
            "train.validation_fraction" => self.train.validation_fraction = num(v)?,
            "train.record_time" => self.train.record_time = boolean(v)?,
            "train.bn_refresh" => self.train.bn_refresh = boolean(v)?,
            "optim.kind" => self.optim.kind = v.parse().map_err(|e: Error| strip(e.to_string()))?,
            "optim.lr" | "train.lr" => self.optim.learning_rate = num(v)?,
            "optim.momentum" => self.optim.momentum = num(v)?,
            "optim.beta1" => self.optim.beta1 = num(v)?,
            "optim.beta2" => self.optim.beta2 = num(v)?,
            "optim.rho" => self.optim.rho = num(v)?,
            "optim.epsilon" => self.optim.epsilon = num(v)?,
            "augment.rotation_prob" => self.augment.rotation_prob = num(v)?,
            "augment.rotation_max_deg" => self.augment.rotation_max_deg = num(v)?,
            "augment.flip_lr_prob" => self.augment.flip_lr_prob = num(v)?,
            "augment.flip_tb_prob" => self.augment.flip_tb_prob = num(v)?,
            "augment.distortion_prob" => self.augment.distortion_prob = num(v)?,
            "augment.distortion_grid" => self.augment.distortion_grid = num(v)?,
            "augment.distortion_magnitude" => self.augment.distortion_magnitude = num(v)?,
            "augment.skew_prob" => self.augment.skew_prob = num(v)?,
            "augment.skew_max" => self.augment.skew_max = num(v)?,
            "split.mode" => self.split.mode = split_mode(v)?,
            "split.augmentation_factor" => self.split.augmentation_factor = num(v)?,
            "occlusion.patch" => self.occlusion.patch = num(v)?,
            "occlusion.stride" => self.occlusion.stride = num(v)?,
            "occlusion.fill" => self.occlusion.fill = num(v)?,
            "eval.thresholds" => self.eval_thresholds = list(v)?,
            "eval.bins" => self.eval_bins = num(v)?,
            "eval.resize" => self.eval_resize = boolean(v)?,
            "eval.localize" => {
                self.eval_localize = match v {
                    "" | "none" => None,
                    m => Some(m.parse().map_err(|e: Error| strip(e.to_string()))?),
                }
            }
            "explain.method" => self.explain_method = v.parse().map_err(|e: Error| strip(e.to_string()))?,
            "explain.layer" => self.explain_layer = (!v.is_empty()).then(|| v.to_string()),
            "sweep.seeds" => self.sweep_seeds = list(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Propagates the seed and validates every section.
    pub fn finish(&mut self) -> Result<()> {
        self.train.seed = self.seed;
        self.split.seed = self.seed;
        self.augment.seed = self.seed;
        self.net.validate()?;
        self.train.validate()?;
        self.optim.validate()?;
        self.augment.validate()?;
        if self.occlusion.patch == 0 || self.occlusion.stride == 0 {
            return Err(Error::Config("occlusion.patch and occlusion.stride must be at least 1".into()));
        }
        if self.eval_thresholds.is_empty() || self.eval_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("eval.thresholds must be a non-empty increasing list".into()));
        }
        if self.eval_bins == 0 {
            return Err(Error::Config("eval.bins must be at least 1".into()));
        }
        Ok(())
    }

    /// Every key in a fixed order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("data".into(), show(&self.data)),
            ("out".into(), show(&self.out)),
            ("model".into(), show(&self.model)),
            ("image".into(), show(&self.image)),
            ("mask".into(), show(&self.mask)),
        ];
        out.extend(self.net.to_pairs());
        out.extend(self.train.to_pairs());
        out.extend(self.optim.to_pairs());
        let a = &self.augment;
        out.extend([
            ("augment.rotation_prob".into(), a.rotation_prob.to_string()),
            ("augment.rotation_max_deg".into(), a.rotation_max_deg.to_string()),
            ("augment.flip_lr_prob".into(), a.flip_lr_prob.to_string()),
            ("augment.flip_tb_prob".into(), a.flip_tb_prob.to_string()),
            ("augment.distortion_prob".into(), a.distortion_prob.to_string()),
            ("augment.distortion_grid".into(), a.distortion_grid.to_string()),
            ("augment.distortion_magnitude".into(), a.distortion_magnitude.to_string()),
            ("augment.skew_prob".into(), a.skew_prob.to_string()),
            ("augment.skew_max".into(), a.skew_max.to_string()),
            ("split.mode".into(), show_split(&self.split.mode)),
            ("split.augmentation_factor".into(), self.split.augmentation_factor.to_string()),
            ("occlusion.patch".into(), self.occlusion.patch.to_string()),
            ("occlusion.stride".into(), self.occlusion.stride.to_string()),
            ("occlusion.fill".into(), self.occlusion.fill.to_string()),
            ("eval.thresholds".into(), join(&self.eval_thresholds)),
            ("eval.bins".into(), self.eval_bins.to_string()),
            ("eval.resize".into(), self.eval_resize.to_string()),
            (
                "eval.localize".into(),
                self.eval_localize.map(|m| m.to_string()).unwrap_or_default(),
            ),
            ("explain.method".into(), self.explain_method.to_string()),
            ("explain.layer".into(), self.explain_layer.clone().unwrap_or_default()),
            ("sweep.seeds".into(), join(&self.sweep_seeds)),
        ]);
        out
    }

    pub fn to_text(&self, command: &str) -> String {
        let mut s = format!("# resolved configuration for `attnct {command}`\n");
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Training settings stored in a model header.
    pub fn model_header(&self) -> Vec<(String, String)> {
        let mut h = self.train.to_pairs();
        h.extend(self.optim.to_pairs());
        h.push(("split.augmentation_factor".into(), self.split.augmentation_factor.to_string()));
        h
    }

    pub fn repeat_seeds(&self) -> Vec<u64> {
        if self.sweep_seeds.is_empty() {
            vec![self.seed]
        } else {
            self.sweep_seeds.clone()
        }
    }
}

fn strip(msg: String) -> String {
    msg.strip_prefix("config error: ")
        .or_else(|| msg.strip_prefix("usage error: "))
        .map(str::to_string)
        .unwrap_or(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut a = RunConfig::default();
        a.apply_text(
            "seed=9\nnet.stage_channels=8,16\noptim.kind=adam\noptim.lr=0.002\nsplit.mode=fraction:0.3\neval.localize=occlusion\n",
            "x",
        )
        .unwrap();
        a.finish().unwrap();
        let mut b = RunConfig::default();
        b.apply_text(&a.to_text("train"), "y").unwrap();
        b.finish().unwrap();
        assert_eq!(a, b);
        assert_eq!(b.net.stage_channels, [8, 16]);
        assert_eq!(b.split.mode, SplitMode::TestFraction(0.3));
    }

    #[test]
    fn errors_name_the_line() {
        let mut c = RunConfig::default();
        let e = c.apply_text("# comment\ntrain.epochs=3\n\ntrain.bogus=1\n", "run.cfg").unwrap_err();
        assert!(e.to_string().contains("run.cfg:4: unknown key `train.bogus`"), "{e}");
        let e = c.apply_text("train.epochs=three", "f").unwrap_err();
        assert!(e.to_string().contains("f:1:"), "{e}");
        let e = c.apply_text("no equals sign", "f").unwrap_err();
        assert!(e.to_string().contains("f:1: expected key=value"), "{e}");
        assert!(c.apply_text("net.mask_levels=x", "f").unwrap_err().to_string().contains("f:1:"));
    }

    #[test]
    fn seed_reaches_every_section() {
        let c = RunConfig::resolve(None, &["train.epochs=2".into()], Some(17)).unwrap();
        assert_eq!((c.train.seed, c.split.seed, c.augment.seed), (17, 17, 17));
        assert_eq!(c.train.epochs, 2);
        let c = RunConfig::resolve(None, &["train.lr=0.05".into()], None).unwrap();
        assert_eq!(c.optim.learning_rate, 0.05);
        assert!(RunConfig::resolve(None, &["optim.lr=-1".into()], Some(1)).is_err());
        assert!(RunConfig::resolve(None, &["eval.thresholds=0.5,0.2".into()], Some(1)).is_err());
    }
}
