//! Synthetic "lesion" images: a smooth background, plus bright elliptical
//! blobs for the positive class.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::dataset::SPLIT_FILE;
use super::image::{write_pgm, Gray};
use super::{derive_seed, Sample};
use crate::error::{Error, Result};

/// Mean background level.
pub const BACKGROUND: f64 = 0.12;
/// Smallest intensity a blob adds over the background.
pub const BLOB_MARGIN: f64 = 0.45;
const BLOB_MAX: f64 = 0.65;
const WAVE_AMPLITUDE: (f64, f64) = (0.015, 0.035);
const NOISE_STD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    /// Images per class, before the train/test split.
    pub n_per_class: usize,
    /// Share of each class held out for testing.
    pub test_fraction: f64,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_per_class: 100,
            test_fraction: 0.25,
            height: 128,
            width: 128,
            seed: 0,
        }
    }
}

/// Accuracy of the best single threshold on mean image intensity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Separability {
    pub threshold: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSet {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub separability: Separability,
}

fn background(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // integer frequencies make every wave sum to exactly zero over the grid
    let waves: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            let kx = rng.random_range(1..=3) as f64;
            let ky = rng.random_range(1..=3) as f64;
            let a = rng.random_range(WAVE_AMPLITUDE.0..WAVE_AMPLITUDE.1);
            let phase = rng.random_range(0.0..TAU);
            (kx, ky, a, phase)
        })
        .collect();
    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut v = BACKGROUND;
            for &(kx, ky, a, phase) in &waves {
                v += a * (TAU * (kx * x as f64 / w as f64 + ky * y as f64 / h as f64) + phase).cos();
            }
            data.push(v + noise.sample(rng));
        }
    }
    data
}

/// Adds 1–3 hard-edged ellipses and returns their union mask.
fn add_blobs(data: &mut [f64], h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut mask = vec![0.0; h * w];
    let side = h.min(w) as f64;
    let count = rng.random_range(1..=3);
    for _ in 0..count {
        let a = rng.random_range(0.05..0.11) * side;
        let b = rng.random_range(0.05..0.11) * side;
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let reach = a.max(b) + 1.0;
        let cx = rng.random_range(reach.min(w as f64 / 2.0)..=(w as f64 - reach).max(w as f64 / 2.0));
        let cy = rng.random_range(reach.min(h as f64 / 2.0)..=(h as f64 - reach).max(h as f64 / 2.0));
        let amp = rng.random_range(BLOB_MARGIN..BLOB_MAX);
        let (s, c) = theta.sin_cos();
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let u = (c * dx + s * dy) / a;
                let v = (-s * dx + c * dy) / b;
                if u * u + v * v <= 1.0 {
                    data[y * w + x] += amp;
                    mask[y * w + x] = 1.0;
                }
            }
        }
    }
    mask
}

fn make(spec: &SynthSpec, label: u8, index: usize) -> Sample {
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, label as u64, index as u64));
    let mut data = background(h, w, &mut rng);
    let mask = (label == 1).then(|| add_blobs(&mut data, h, w, &mut rng));
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let dir = if label == 1 { "covid" } else { "non_covid" };
    let prefix = if label == 1 { "c" } else { "n" };
    Sample {
        image: Gray { height: h, width: w, data },
        label,
        id: format!("{dir}/{prefix}{index:04}.pgm"),
        mask: mask.map(|m| Gray { height: h, width: w, data: m }),
    }
}

fn mean(s: &Sample) -> f64 {
    s.image.data.iter().sum::<f64>() / s.image.data.len() as f64
}

fn accuracy_at(samples: &[Sample], t: f64) -> f64 {
    let right = samples.iter().filter(|s| (mean(s) > t) == (s.label == 1)).count();
    right as f64 / samples.len() as f64
}

/// Picks the midpoint threshold on mean intensity that best splits `train`.
fn separability(train: &[Sample], test: &[Sample]) -> Separability {
    let mut means: Vec<f64> = train.iter().map(mean).collect();
    means.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, means[0] - 1.0);
    for pair in means.windows(2) {
        let t = 0.5 * (pair[0] + pair[1]);
        let acc = accuracy_at(train, t);
        if acc > best.0 {
            best = (acc, t);
        }
    }
    Separability {
        threshold: best.1,
        train_accuracy: accuracy_at(train, best.1),
        test_accuracy: accuracy_at(test, best.1),
    }
}

/// Generates a balanced synthetic set. Per class, `round(n·test_fraction)`
/// images go to the test split; every image is determined by (seed, class, index).
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticSet> {
    if spec.n_per_class < 2 {
        return Err(Error::Config("synthetic data needs at least 2 images per class".into()));
    }
    if spec.height < 8 || spec.width < 8 {
        return Err(Error::Config("synthetic images must be at least 8x8".into()));
    }
    let n_test = (spec.n_per_class as f64 * spec.test_fraction).round() as usize;
    if !(1..spec.n_per_class).contains(&n_test) {
        return Err(Error::Config(format!(
            "test fraction {} leaves no train or no test images for {} per class",
            spec.test_fraction, spec.n_per_class
        )));
    }
    let n_train = spec.n_per_class - n_test;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in [1u8, 0] {
        let samples: Vec<Sample> = (0..spec.n_per_class).into_par_iter().map(|i| make(spec, label, i)).collect();
        for (i, s) in samples.into_iter().enumerate() {
            if i < n_train {
                train.push(s);
            } else {
                test.push(s);
            }
        }
    }
    let separability = separability(&train, &test);
    Ok(SyntheticSet {
        train,
        test,
        separability,
    })
}

/// Writes images to `<root>/<class>/`, masks to `<root>/masks/<class>/` and the
/// split listing to `<root>/split.csv`. Returns the written relative paths.
pub fn write_dataset(root: &Path, train: &[Sample], test: &[Sample]) -> Result<Vec<String>> {
    let mut listing = String::new();
    let mut written = Vec::new();
    for (samples, which) in [(train, "train"), (test, "test")] {
        for s in samples {
            let path = root.join(&s.id);
            let dir = path.parent().expect("sample id has a class directory");
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_pgm(&path, &s.image)?;
            written.push(s.id.clone());
            if let Some(m) = &s.mask {
                let mpath = root.join("masks").join(&s.id);
                let mdir = mpath.parent().expect("mask path has a parent");
                std::fs::create_dir_all(mdir).map_err(|e| Error::io(mdir, e))?;
                write_pgm(&mpath, m)?;
                written.push(format!("masks/{}", s.id));
            }
            let _ = writeln!(listing, "{},{which}", s.id);
        }
    }
    let split = root.join(SPLIT_FILE);
    std::fs::write(&split, listing).map_err(|e| Error::io(&split, e))?;
    written.push(SPLIT_FILE.to_string());
    Ok(written)
}
