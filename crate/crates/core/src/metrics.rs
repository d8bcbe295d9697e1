//! Binary classifier evaluation: confusion counts, rates, threshold sweeps,
//! ROC/PR curves and score histograms.
//!
//! A sample is predicted positive iff `score > threshold`. Rates whose
//! denominator is zero are `None` and print as `—`.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredSample {
    /// 1 = positive class.
    pub label: u8,
    pub score: f64,
}

impl ScoredSample {
    pub fn new(label: u8, score: f64) -> Self {
        ScoredSample { label, score }
    }
}

/// Pairs labels with scores.
pub fn scored(labels: &[u8], scores: &[f64]) -> Result<Vec<ScoredSample>> {
    if labels.len() != scores.len() {
        return Err(Error::Input(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let out: Vec<_> = labels.iter().zip(scores).map(|(&l, &s)| ScoredSample::new(l, s)).collect();
    validate(&out)?;
    Ok(out)
}

fn validate(samples: &[ScoredSample]) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if s.label > 1 {
            return Err(Error::Input(format!("sample {i}: label {} is not 0 or 1", s.label)));
        }
        if !(0.0..=1.0).contains(&s.score) {
            return Err(Error::Input(format!("sample {i}: score {} outside [0, 1]", s.score)));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// TP / (TP + FN).
    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// TN / (TN + FP).
    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// 2TP / (2TP + FP + FN), the harmonic mean of precision and sensitivity.
    pub fn f1(&self) -> Option<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }
}

/// Renders a rate for tables.
pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "—".into(),
    }
}

/// Renders a rate for CSV files.
pub fn csv_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "undefined".into(),
    }
}

pub fn confusion_at(samples: &[ScoredSample], threshold: f64) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::Input("confusion matrix of an empty sample set".into()));
    }
    validate(samples)?;
    let mut cm = ConfusionMatrix::default();
    for s in samples {
        match (s.label == 1, s.score > threshold) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fn_ += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// 0.1, 0.2, …, 0.9.
pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

pub fn threshold_sweep(samples: &[ScoredSample], thresholds: &[f64]) -> Result<Vec<SweepRow>> {
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Input("thresholds must be sorted ascending".into()));
    }
    thresholds
        .iter()
        .map(|&t| {
            let cm = confusion_at(samples, t)?;
            Ok(SweepRow {
                threshold: t,
                confusion: cm,
                sensitivity: cm.sensitivity(),
                specificity: cm.specificity(),
                f1: cm.f1(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    /// Samples with `score >= threshold` are counted positive at this point.
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// (fpr, tpr) points from (0, 0) to (1, 1).
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

/// Cumulative (tp, fp) counts after each group of equal scores, highest first.
fn cumulative_groups(samples: &[ScoredSample]) -> Vec<(f64, usize, usize)> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, s) in sorted.iter().enumerate() {
        if s.label == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = sorted.get(i + 1).is_none_or(|n| n.score != s.score);
        if last_of_group {
            out.push((s.score, tp, fp));
        }
    }
    out
}

fn class_counts(samples: &[ScoredSample]) -> (usize, usize) {
    let pos = samples.iter().filter(|s| s.label == 1).count();
    (pos, samples.len() - pos)
}

/// ROC curve with one step per group of tied scores, and its trapezoidal area.
pub fn roc_curve(samples: &[ScoredSample]) -> Result<RocCurve> {
    validate(samples)?;
    let (pos, neg) = class_counts(samples);
    if pos == 0 || neg == 0 {
        return Err(Error::Input(format!(
            "ROC needs both classes, found {pos} positive and {neg} negative"
        )));
    }
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    // twice the area in units of one (negative, positive) pair
    let mut area2: u128 = 0;
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    for (score, tp, fp) in cumulative_groups(samples) {
        area2 += ((fp - prev_fp) * (tp + prev_tp)) as u128;
        points.push(CurvePoint {
            threshold: score,
            x: fp as f64 / neg as f64,
            y: tp as f64 / pos as f64,
        });
        (prev_tp, prev_fp) = (tp, fp);
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

/// (recall, precision) at every distinct score, highest first; ends at recall 1.
pub fn pr_curve(samples: &[ScoredSample]) -> Result<Vec<CurvePoint>> {
    validate(samples)?;
    let (pos, _) = class_counts(samples);
    if pos == 0 {
        return Err(Error::Input("precision-recall curve needs at least one positive".into()));
    }
    Ok(cumulative_groups(samples)
        .into_iter()
        .map(|(score, tp, fp)| CurvePoint {
            threshold: score,
            x: tp as f64 / pos as f64,
            y: tp as f64 / (tp + fp) as f64,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over [0, 1]; every bin is `[lo, hi)` except the last, which is closed.
pub fn score_histogram(samples: &[ScoredSample], class: u8, bins: usize) -> Result<Vec<HistBin>> {
    if bins == 0 {
        return Err(Error::Input("histogram needs at least one bin".into()));
    }
    validate(samples)?;
    let edge = |i: usize| i as f64 / bins as f64;
    let mut out: Vec<HistBin> = (0..bins)
        .map(|i| HistBin {
            lo: edge(i),
            hi: edge(i + 1),
            count: 0,
        })
        .collect();
    for s in samples.iter().filter(|s| s.label == class) {
        let mut b = ((s.score * bins as f64) as usize).min(bins - 1);
        // correct for rounding in the product near bin edges
        if b > 0 && s.score < edge(b) {
            b -= 1;
        } else if b + 1 < bins && s.score >= edge(b + 1) {
            b += 1;
        }
        out[b].count += 1;
    }
    Ok(out)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("threshold,sens,spec,f1\n");
    for r in rows {
        s += &format!(
            "{},{},{},{}\n",
            r.threshold,
            csv_metric(r.sensitivity),
            csv_metric(r.specificity),
            csv_metric(r.f1)
        );
    }
    s
}

pub fn roc_csv(curve: &RocCurve) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in &curve.points {
        s += &format!("{},{},{}\n", p.threshold, p.x, p.y);
    }
    s
}

pub fn pr_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("threshold,recall,precision\n");
    for p in points {
        s += &format!("{},{},{}\n", p.threshold, p.x, p.y);
    }
    s
}

pub fn hist_csv(bins: &[HistBin]) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for b in bins {
        s += &format!("{},{},{}\n", b.lo, b.hi, b.count);
    }
    s
}
