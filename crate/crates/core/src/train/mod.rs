//! Binary cross-entropy training: optimizers, the epoch loop and optimizer sweeps.

mod optim;
mod sweep;

pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use sweep::{hyperparameter_sweep, reference_grid, sweep_csv, sweep_table, SweepRow, REFERENCE_ACCURACY};

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{batch, derive_seed, Sample};
use crate::error::{Error, Result};
use crate::metrics::{confusion_at, csv_metric, scored, ConfusionMatrix};
use crate::net::Network;
use crate::tape::Mode;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Drives shuffling and the validation split.
    pub seed: u64,
    pub eval_threshold: f64,
    /// Write a checkpoint every this many epochs (0 = never). Interpreted by the caller's sink.
    pub checkpoint_every: usize,
    /// Share of each class held out for per-epoch validation.
    pub validation_fraction: f64,
    /// Fill the `seconds` column with wall-clock time. Off by default so that
    /// epoch logs are reproducible byte for byte.
    pub record_time: bool,
    /// After each epoch, replace BatchNorm running statistics with the mean of
    /// per-batch statistics over the training portion under the final weights.
    pub bn_refresh: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            seed: 0,
            eval_threshold: 0.5,
            checkpoint_every: 0,
            validation_fraction: 0.15,
            record_time: false,
            bn_refresh: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train.epochs and train.batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eval_threshold) {
            return Err(Error::Config(format!("train.threshold {} outside [0, 1]", self.eval_threshold)));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "train.validation_fraction {} outside [0, 0.5)",
                self.validation_fraction
            )));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("train.epochs".into(), self.epochs.to_string()),
            ("train.batch_size".into(), self.batch_size.to_string()),
            ("train.threshold".into(), self.eval_threshold.to_string()),
            ("train.checkpoint_every".into(), self.checkpoint_every.to_string()),
            ("train.validation_fraction".into(), self.validation_fraction.to_string()),
            ("train.record_time".into(), self.record_time.to_string()),
            ("train.bn_refresh".into(), self.bn_refresh.to_string()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's mini-batches.
    pub train_loss: f64,
    pub train_sens: Option<f64>,
    pub train_spec: Option<f64>,
    pub val_sens: Option<f64>,
    pub val_spec: Option<f64>,
    pub seconds: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,train_sens,train_spec,val_sens,val_spec,seconds";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            csv_metric(self.train_sens),
            csv_metric(self.train_spec),
            csv_metric(self.val_sens),
            csv_metric(self.val_spec),
            self.seconds
        )
    }
}

/// Splits sample indices into (train, validation), holding out
/// `round(fraction · class size)` of each class by a seeded shuffle. Both
/// lists keep the input order.
pub fn validation_split(samples: &[Sample], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut held = vec![false; samples.len()];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == class).collect();
        let k = (idx.len() as f64 * fraction).round() as usize;
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7a1d, class as u64)));
        for &i in &idx[..k.min(idx.len())] {
            held[i] = true;
        }
    }
    (0..samples.len()).partition(|&i| !held[i])
}

/// Eval-mode probabilities for each sample.
pub fn predict_samples(net: &Network, samples: &[&Sample]) -> Result<Vec<f64>> {
    let ts: Vec<Tensor> = samples.iter().map(|s| s.tensor()).collect();
    net.predict(&ts.iter().collect::<Vec<_>>())
}

/// Confusion counts of `net` on `samples` at `threshold`.
pub fn evaluate(net: &Network, samples: &[&Sample], threshold: f64) -> Result<ConfusionMatrix> {
    let scores = predict_samples(net, samples)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    confusion_at(&scored(&labels, &scores)?, threshold)
}

fn check_classes(samples: &[Sample]) -> Result<()> {
    let pos = samples.iter().filter(|s| s.label == 1).count();
    if pos == 0 || pos == samples.len() {
        return Err(Error::Input(format!(
            "training needs both classes, found {pos} positive of {}",
            samples.len()
        )));
    }
    Ok(())
}

/// Runs one optimizer step on a mini-batch; returns the batch loss.
pub fn train_step(net: &mut Network, opt: &mut Optimizer, samples: &[&Sample]) -> Result<f64> {
    let x = batch(samples)?;
    let labels: Vec<f64> = samples.iter().map(|s| s.label as f64).collect();
    let mut fwd = net.record(&x, Mode::Train, true)?;
    let loss = fwd.rec.tape.bce_loss(fwd.scores, &labels)?;
    let value = fwd.rec.tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Numerical {
            epoch: net.epoch + 1,
            batch: 0,
            detail: format!("loss is {value}"),
        });
    }
    let grads = fwd.rec.tape.backward(loss)?;
    let mut by_path = BTreeMap::new();
    for (path, v) in &fwd.rec.vars {
        by_path.insert(path.clone(), grads.wrt(*v).clone());
    }
    opt.step(&mut net.params, &by_path)?;
    for (path, state) in std::mem::take(&mut fwd.rec.norms) {
        if let Some(slot) = net.params.norm_mut(&path) {
            *slot = state;
        }
    }
    Ok(value)
}

/// Recomputes every BatchNorm running mean and variance as the sample-weighted
/// average of train-mode batch statistics over `samples`, taken in order in
/// chunks of `batch_size`. Parameters are untouched.
pub fn refresh_batch_norm(net: &mut Network, samples: &[&Sample], batch_size: usize) -> Result<()> {
    if samples.is_empty() || batch_size == 0 {
        return Ok(());
    }
    let paths: Vec<String> = net.params.norms().map(|(p, _)| p.clone()).collect();
    let saved: Vec<f64> = paths.iter().map(|p| net.params.norm(p).expect("listed").momentum).collect();
    for p in &paths {
        net.params.norm_mut(p).expect("listed").momentum = 0.0;
    }
    let mut sums: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut outcome = Ok(());
    for chunk in samples.chunks(batch_size) {
        let fwd = match batch(chunk).and_then(|x| net.record(&x, Mode::Train, false)) {
            Ok(f) => f,
            Err(e) => {
                outcome = Err(e);
                break;
            }
        };
        let w = chunk.len() as f64;
        for (path, state) in fwd.rec.norms {
            let entry = sums
                .entry(path)
                .or_insert_with(|| (vec![0.0; state.channels()], vec![0.0; state.channels()]));
            for ch in 0..state.channels() {
                entry.0[ch] += w * state.running_mean[ch];
                entry.1[ch] += w * state.running_var[ch];
            }
        }
    }
    for (p, m) in paths.iter().zip(saved) {
        net.params.norm_mut(p).expect("listed").momentum = m;
    }
    outcome?;
    let total = samples.len() as f64;
    for (path, (mean, var)) in sums {
        if let Some(state) = net.params.norm_mut(&path) {
            for ch in 0..state.channels() {
                let v = var[ch] / total;
                if v > 0.0 {
                    state.running_mean[ch] = mean[ch] / total;
                    state.running_var[ch] = v;
                }
            }
        }
    }
    Ok(())
}

/// Trains `net` in place. Each epoch shuffles the training portion (seeded),
/// steps through mini-batches (a short last batch is kept), optionally
/// refreshes BatchNorm statistics, then scores the
/// training and validation portions in eval mode. `sink` receives every record
/// together with the updated network as soon as the epoch ends.
pub fn train(
    net: &mut Network,
    data: &[Sample],
    tc: &TrainConfig,
    oc: &OptimizerConfig,
    sink: &mut dyn FnMut(&EpochRecord, &Network) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    tc.validate()?;
    check_classes(data)?;
    let mut opt = Optimizer::new(oc.clone())?;
    let (train_idx, val_idx) = validation_split(data, tc.validation_fraction, tc.seed);
    let train_set: Vec<&Sample> = train_idx.iter().map(|&i| &data[i]).collect();
    let val_set: Vec<&Sample> = val_idx.iter().map(|&i| &data[i]).collect();
    let mut records = Vec::with_capacity(tc.epochs);
    for _ in 0..tc.epochs {
        let epoch = net.epoch + 1;
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, 0x5f7f, epoch as u64)));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let items: Vec<&Sample> = chunk.iter().map(|&i| train_set[i]).collect();
            let loss = train_step(net, &mut opt, &items).map_err(|e| match e {
                Error::Numerical { detail, .. } => Error::Numerical {
                    epoch,
                    batch: b + 1,
                    detail,
                },
                e => e,
            })?;
            loss_sum += loss * items.len() as f64;
        }
        if tc.bn_refresh {
            refresh_batch_norm(net, &train_set, tc.batch_size)?;
        }
        net.epoch = epoch;
        let tr = evaluate(net, &train_set, tc.eval_threshold)?;
        let (val_sens, val_spec) = if val_set.is_empty() {
            (None, None)
        } else {
            let cm = evaluate(net, &val_set, tc.eval_threshold)?;
            (cm.sensitivity(), cm.specificity())
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_sens: tr.sensitivity(),
            train_spec: tr.specificity(),
            val_sens,
            val_spec,
            seconds: if tc.record_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        sink(&rec, net)?;
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Gray;
    use crate::tape::BatchNormState;

    fn sample(label: u8, v: f64) -> Sample {
        Sample {
            image: Gray::new(2, 2, vec![v; 4]).unwrap(),
            label,
            id: format!("{label}-{v}"),
            mask: None,
        }
    }

    #[test]
    fn validation_split_is_stratified() {
        let data: Vec<Sample> = (0..40).map(|i| sample((i % 2) as u8, i as f64 / 40.0)).collect();
        let (tr, va) = validation_split(&data, 0.15, 3);
        assert_eq!(tr.len() + va.len(), 40);
        assert_eq!(va.iter().filter(|&&i| data[i].label == 1).count(), 3);
        assert_eq!(va.iter().filter(|&&i| data[i].label == 0).count(), 3);
        assert_eq!(validation_split(&data, 0.15, 3), (tr, va));
        assert!(validation_split(&data, 0.0, 3).1.is_empty());
    }

    #[test]
    fn csv_row_format() {
        let r = EpochRecord {
            epoch: 2,
            train_loss: 0.5,
            train_sens: Some(1.0),
            train_spec: None,
            val_sens: Some(0.25),
            val_spec: Some(0.0),
            seconds: 0.0,
        };
        assert_eq!(r.csv_row(), "2,0.5,1,undefined,0.25,0,0");
        assert_eq!(EPOCH_CSV_HEADER.split(',').count(), r.csv_row().split(',').count());
    }

    fn noisy(label: u8, seed: u64, side: usize) -> Sample {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Sample {
            image: Gray::new(side, side, (0..side * side).map(|_| rng.random::<f64>()).collect()).unwrap(),
            label,
            id: format!("s{seed}"),
            mask: None,
        }
    }

    #[test]
    fn bn_refresh_matches_direct_moments() {
        let mut net = crate::net::build_network(&crate::net::AttentionNetConfig::tiny(), 1).unwrap();
        let data: Vec<Sample> = (0..5).map(|i| noisy((i % 2) as u8, i, 16)).collect();
        let refs: Vec<&Sample> = data.iter().collect();
        let params_before: Vec<Tensor> = net.params.tensors().map(|(_, t)| t.clone()).collect();
        refresh_batch_norm(&mut net, &refs, 5).unwrap();

        let x = batch(&refs).unwrap();
        let stem = net.forward(&x, Mode::Train, &["stem"]).unwrap().captures["stem"].clone();
        let (n, c, h, w) = (stem.shape()[0], stem.shape()[1], stem.shape()[2], stem.shape()[3]);
        let state = net.params.norm("stage1.attention.pre1.bn1").unwrap();
        for ch in 0..c {
            let vals: Vec<f64> = (0..n)
                .flat_map(|i| (0..h * w).map(move |k| ((i * c + ch) * h * w) + k))
                .map(|k| stem.data()[k])
                .collect();
            let m = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / m;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
            assert!((state.running_mean[ch] - mean).abs() < 1e-12);
            assert!((state.running_var[ch] - var).abs() < 1e-12 * var.max(1.0));
            assert_eq!(state.momentum, BatchNormState::DEFAULT_MOMENTUM);
        }
        let params_after: Vec<Tensor> = net.params.tensors().map(|(_, t)| t.clone()).collect();
        assert_eq!(params_before, params_after);
    }

    #[test]
    fn bn_refresh_weights_chunks_and_ignores_old_stats() {
        let cfg = crate::net::AttentionNetConfig::tiny();
        let data: Vec<Sample> = (0..3).map(|i| noisy((i % 2) as u8, 10 + i, 16)).collect();
        let refs: Vec<&Sample> = data.iter().collect();
        let stats = |net: &Network| -> Vec<(Vec<f64>, Vec<f64>)> {
            net.params.norms().map(|(_, s)| (s.running_mean.clone(), s.running_var.clone())).collect()
        };

        let mut a = crate::net::build_network(&cfg, 2).unwrap();
        refresh_batch_norm(&mut a, &refs[..2], 2).unwrap();
        let mut b = crate::net::build_network(&cfg, 2).unwrap();
        refresh_batch_norm(&mut b, &refs[2..], 2).unwrap();
        let mut both = crate::net::build_network(&cfg, 2).unwrap();
        let paths: Vec<String> = both.params.norms().map(|(p, _)| p.clone()).collect();
        for p in &paths {
            let st = both.params.norm_mut(p).unwrap();
            st.running_mean.iter_mut().for_each(|v| *v = 7.0);
            st.running_var.iter_mut().for_each(|v| *v = 3.0);
        }
        refresh_batch_norm(&mut both, &refs, 2).unwrap();

        for ((sa, sb), sboth) in stats(&a).iter().zip(stats(&b)).zip(stats(&both)) {
            for ch in 0..sa.0.len() {
                let mean = (2.0 * sa.0[ch] + sb.0[ch]) / 3.0;
                let var = (2.0 * sa.1[ch] + sb.1[ch]) / 3.0;
                assert!((sboth.0[ch] - mean).abs() < 1e-12 * mean.abs().max(1.0));
                assert!((sboth.1[ch] - var).abs() < 1e-12 * var.max(1.0));
            }
        }
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(check_classes(&[sample(1, 0.2), sample(1, 0.4)]), Err(Error::Input(_))));
    }
}
