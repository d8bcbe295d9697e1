use std::fmt::Write;

use super::{evaluate, train, OptimizerConfig, OptimizerKind, TrainConfig};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::net::{build_network, AttentionNetConfig};

/// Reference optimizer / learning-rate grid.
pub fn reference_grid() -> Vec<OptimizerConfig> {
    [
        (OptimizerKind::Adam, 0.001),
        (OptimizerKind::Sgd, 0.001),
        (OptimizerKind::RmsProp, 0.01),
        (OptimizerKind::RmsProp, 0.001),
        (OptimizerKind::RmsProp, 0.0001),
    ]
    .into_iter()
    .map(|(k, lr)| OptimizerConfig::new(k, lr))
    .collect()
}

/// Accuracies reported for [`reference_grid`] on the full CT dataset. They are
/// reference points only; desk-scale runs are not expected to reproduce them.
pub const REFERENCE_ACCURACY: [f64; 5] = [0.907, 0.885, 0.920, 0.881, 0.900];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub config: OptimizerConfig,
    /// Held-out accuracy for each repeat seed, in seed order.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Standard error of the mean over repeat seeds; `None` with a single seed.
    pub stderr: Option<f64>,
}

/// Trains every grid entry once per repeat seed (network initialization and
/// shuffling both use that seed, so entries share initial weights) and scores
/// accuracy on `held_out` at the configured threshold.
pub fn hyperparameter_sweep(
    grid: &[OptimizerConfig],
    net_config: &AttentionNetConfig,
    tc: &TrainConfig,
    data: &[Sample],
    held_out: &[Sample],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Input("optimizer grid is empty".into()));
    }
    if seeds.is_empty() || held_out.is_empty() {
        return Err(Error::Input("sweep needs at least one repeat seed and a non-empty held-out set".into()));
    }
    let held: Vec<&Sample> = held_out.iter().collect();
    grid.iter()
        .map(|oc| {
            let mut accuracies = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let mut net = build_network(net_config, seed)?;
                let run = TrainConfig { seed, ..tc.clone() };
                train(&mut net, data, &run, oc, &mut |_, _| Ok(()))?;
                let cm = evaluate(&net, &held, tc.eval_threshold)?;
                accuracies.push(cm.accuracy().expect("held-out set is non-empty"));
            }
            let n = accuracies.len() as f64;
            let mean = accuracies.iter().sum::<f64>() / n;
            let stderr = (accuracies.len() > 1).then(|| {
                let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            });
            Ok(SweepRow {
                config: oc.clone(),
                accuracies,
                mean,
                stderr,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("loss,optimizer,learning_rate,accuracy_mean,accuracy_stderr,repeats\n");
    for r in rows {
        let _ = writeln!(
            s,
            "BCE,{},{},{},{},{}",
            r.config.kind,
            r.config.learning_rate,
            r.mean,
            r.stderr.map_or("undefined".to_string(), |e| e.to_string()),
            r.accuracies.len()
        );
    }
    s
}

/// Plain-text table: loss, optimizer, learning rate, accuracy ± seed-repeat standard error.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<6}{:<10}{:>14}   accuracy (mean ± seed-repeat stderr)", "loss", "optimizer", "learning rate");
    for r in rows {
        let err = r.stderr.map_or("—".to_string(), |e| format!("{e:.3}"));
        let _ = writeln!(
            s,
            "{:<6}{:<10}{:>14}   {:.3} ± {} (n={})",
            "BCE",
            r.config.kind.to_string().to_uppercase(),
            r.config.learning_rate,
            r.mean,
            err,
            r.accuracies.len()
        );
    }
    s
}
