use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::net::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Heavy-ball momentum SGD.
    Sgd,
    Nesterov,
    Adam,
    RmsProp,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Nesterov => "nesterov",
            OptimizerKind::Adam => "adam",
            OptimizerKind::RmsProp => "rmsprop",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "nesterov" => Ok(OptimizerKind::Nesterov),
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            _ => Err(Error::Config(format!(
                "unknown optimizer `{s}` (expected sgd, nesterov, adam or rmsprop)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// SGD and Nesterov.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// RMSProp decay.
    pub rho: f64,
    /// Adam and RMSProp.
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerConfig {
            kind,
            learning_rate,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            rho: 0.9,
            epsilon: 1e-8,
        }
    }

    /// A zero learning rate is accepted and turns every step into a no-op.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("rho", self.rho),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("optimizer {name} = {v} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("optimizer epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("optim.kind".into(), self.kind.to_string()),
            ("optim.lr".into(), self.learning_rate.to_string()),
            ("optim.momentum".into(), self.momentum.to_string()),
            ("optim.beta1".into(), self.beta1.to_string()),
            ("optim.beta2".into(), self.beta2.to_string()),
            ("optim.rho".into(), self.rho.to_string()),
            ("optim.epsilon".into(), self.epsilon.to_string()),
        ]
    }
}

#[derive(Clone, Debug, Default)]
struct Slot {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Optimizer state for every parameter path.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    steps: u64,
    slots: BTreeMap<String, Slot>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            steps: 0,
            slots: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates every parameter in `params` from `grads`, keyed by path.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (path, p) in params.tensors() {
            let g = grads
                .get(path)
                .ok_or_else(|| Error::Consistency(format!("no gradient for parameter `{path}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::Consistency(format!(
                    "gradient for `{path}` has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c = &self.config;
        let lr = c.learning_rate;
        for (path, p) in params.tensors_mut() {
            let g = grads[path].data();
            let n = g.len();
            let slot = self.slots.entry(path.clone()).or_insert_with(|| Slot {
                first: vec![0.0; n],
                second: vec![0.0; n],
            });
            let theta = p.data_mut();
            match c.kind {
                OptimizerKind::Sgd => {
                    for i in 0..n {
                        let v = c.momentum * slot.first[i] - lr * g[i];
                        slot.first[i] = v;
                        theta[i] += v;
                    }
                }
                OptimizerKind::Nesterov => {
                    for i in 0..n {
                        let v = c.momentum * slot.first[i] - lr * g[i];
                        slot.first[i] = v;
                        theta[i] += c.momentum * v - lr * g[i];
                    }
                }
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - c.beta1.powi(t);
                    let bc2 = 1.0 - c.beta2.powi(t);
                    for i in 0..n {
                        let m = c.beta1 * slot.first[i] + (1.0 - c.beta1) * g[i];
                        let v = c.beta2 * slot.second[i] + (1.0 - c.beta2) * g[i] * g[i];
                        slot.first[i] = m;
                        slot.second[i] = v;
                        theta[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + c.epsilon);
                    }
                }
                OptimizerKind::RmsProp => {
                    for i in 0..n {
                        let s = c.rho * slot.second[i] + (1.0 - c.rho) * g[i] * g[i];
                        slot.second[i] = s;
                        theta[i] -= lr * g[i] / (s.sqrt() + c.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("theta", Tensor::scalar(v)).unwrap();
        p
    }

    fn grads(g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("theta".to_string(), Tensor::scalar(g))])
    }

    fn theta(p: &ParamStore) -> f64 {
        p.get("theta").unwrap().data()[0]
    }

    #[test]
    fn sgd_single_step() {
        let mut p = scalar_store(1.0);
        let mut o = Optimizer::new(OptimizerConfig::new(OptimizerKind::Sgd, 0.1)).unwrap();
        o.step(&mut p, &grads(0.5)).unwrap();
        assert!((theta(&p) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_has_learning_rate_magnitude() {
        let mut p = scalar_store(0.0);
        let mut o = Optimizer::new(OptimizerConfig::new(OptimizerKind::Adam, 0.01)).unwrap();
        o.step(&mut p, &grads(1.0)).unwrap();
        assert!((theta(&p) + 0.01).abs() < 1e-9);
    }

    #[test]
    fn nesterov_matches_lookahead_form() {
        // v1 = -ηg, θ1 = θ0 + μv1 - ηg
        let mut p = scalar_store(1.0);
        let mut o = Optimizer::new(OptimizerConfig::new(OptimizerKind::Nesterov, 0.1)).unwrap();
        o.step(&mut p, &grads(1.0)).unwrap();
        assert!((theta(&p) - (1.0 + 0.9 * -0.1 - 0.1)).abs() < 1e-15);
    }

    #[test]
    fn missing_or_misshapen_gradient() {
        let mut p = scalar_store(1.0);
        let mut o = Optimizer::new(OptimizerConfig::new(OptimizerKind::Adam, 0.1)).unwrap();
        assert!(matches!(o.step(&mut p, &BTreeMap::new()), Err(Error::Consistency(_))));
        let bad = BTreeMap::from([("theta".to_string(), Tensor::zeros(&[2]))]);
        assert!(matches!(o.step(&mut p, &bad), Err(Error::Consistency(_))));
        assert_eq!(o.steps(), 0);
    }

    #[test]
    fn rejects_bad_coefficients() {
        let mut c = OptimizerConfig::new(OptimizerKind::Sgd, -1.0);
        assert!(c.validate().is_err());
        c.learning_rate = 0.1;
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        assert!("adagrad".parse::<OptimizerKind>().is_err());
        assert_eq!("RMSProp".parse::<OptimizerKind>().unwrap(), OptimizerKind::RmsProp);
    }
}
