use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image::{is_image_path, read_image, resize, Gray};
use super::Sample;
use crate::error::{Error, Result};

/// Class sub-directories and their labels.
pub const CLASS_DIRS: [(&str, u8); 2] = [("covid", 1), ("non_covid", 0)];
pub const SPLIT_FILE: &str = "split.csv";

#[derive(Clone, Debug, PartialEq)]
pub enum SplitMode {
    /// Use `split.csv` under the root when present, otherwise everything is training data.
    Auto,
    AllTrain,
    /// Lines `<relative-path>,<train|test>`.
    File(PathBuf),
    /// Seeded per-class hold-out of this fraction.
    TestFraction(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
    /// Extra augmented copies per training sample (0 disables augmentation).
    pub augmentation_factor: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            mode: SplitMode::Auto,
            seed: 0,
            augmentation_factor: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn list_images(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    files.sort();
    Ok(files)
}

fn read_split_file(path: &Path) -> Result<BTreeMap<String, bool>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Format(format!("{}:{}: expected `<path>,<train|test>`", path.display(), i + 1));
        let (rel, which) = line.split_once(',').ok_or_else(bad)?;
        let is_test = match which.trim() {
            "train" => false,
            "test" => true,
            _ => return Err(bad()),
        };
        if out.insert(rel.trim().to_string(), is_test).is_some() {
            return Err(Error::Format(format!("{}:{}: `{rel}` listed twice", path.display(), i + 1)));
        }
    }
    Ok(out)
}

fn fit(img: Gray, geometry: Option<(usize, usize)>) -> Gray {
    match geometry {
        Some((h, w)) => resize(&img, h, w),
        None => img,
    }
}

/// Reads `root/{covid,non_covid}/*` (sorted by file name) and splits into train
/// and test sets. Masks under `root/masks/<class>/<file>` are attached when present.
/// With `geometry` every image is resized to `(height, width)`; otherwise all
/// images must share one size.
pub fn load_dataset(root: &Path, spec: &SplitSpec, geometry: Option<(usize, usize)>) -> Result<Dataset> {
    let mut failures: Vec<(PathBuf, String)> = Vec::new();
    let mut per_class: Vec<Vec<Sample>> = Vec::new();
    for (dir, label) in CLASS_DIRS {
        let class_dir = root.join(dir);
        let files = match list_images(&class_dir) {
            Ok(f) => f,
            Err(e) => {
                failures.push((class_dir, format!("cannot list class directory: {e}")));
                per_class.push(Vec::new());
                continue;
            }
        };
        let mut samples = Vec::new();
        for path in files {
            let name = path.file_name().expect("listed file").to_string_lossy().into_owned();
            let image = match read_image(&path) {
                Ok(img) => fit(img, geometry),
                Err(e) => {
                    failures.push((path, e.to_string()));
                    continue;
                }
            };
            let mask_path = root.join("masks").join(dir).join(&name);
            let mask = if mask_path.is_file() {
                match read_image(&mask_path) {
                    Ok(m) => {
                        let mut m = fit(m, geometry);
                        m.data.iter_mut().for_each(|v| *v = if *v > 0.5 { 1.0 } else { 0.0 });
                        Some(m)
                    }
                    Err(e) => {
                        failures.push((mask_path, e.to_string()));
                        None
                    }
                }
            } else {
                None
            };
            samples.push(Sample {
                image,
                label,
                id: format!("{dir}/{name}"),
                mask,
            });
        }
        per_class.push(samples);
    }
    if !failures.is_empty() {
        return Err(Error::Data(failures));
    }
    for ((dir, _), samples) in CLASS_DIRS.iter().zip(&per_class) {
        if samples.is_empty() {
            return Err(Error::Input(format!("class `{dir}` under {} has no images", root.display())));
        }
    }
    if geometry.is_none() {
        let first = &per_class[0][0].image;
        let odd: Vec<(PathBuf, String)> = per_class
            .iter()
            .flatten()
            .filter(|s| (s.image.height, s.image.width) != (first.height, first.width))
            .map(|s| {
                (
                    root.join(&s.id),
                    format!(
                        "image is {}x{}, expected {}x{} (set a geometry to resize)",
                        s.image.height, s.image.width, first.height, first.width
                    ),
                )
            })
            .collect();
        if !odd.is_empty() {
            return Err(Error::Data(odd));
        }
    }

    let mode = match &spec.mode {
        SplitMode::Auto if root.join(SPLIT_FILE).is_file() => SplitMode::File(root.join(SPLIT_FILE)),
        SplitMode::Auto => SplitMode::AllTrain,
        m => m.clone(),
    };
    let mut out = Dataset::default();
    match mode {
        SplitMode::AllTrain | SplitMode::Auto => out.train = per_class.into_iter().flatten().collect(),
        SplitMode::File(path) => {
            let mut listing = read_split_file(&path)?;
            let mut missing = Vec::new();
            for s in per_class.into_iter().flatten() {
                match listing.remove(&s.id) {
                    Some(true) => out.test.push(s),
                    Some(false) => out.train.push(s),
                    None => missing.push((root.join(&s.id), format!("not listed in {}", path.display()))),
                }
            }
            missing.extend(
                listing
                    .into_keys()
                    .map(|rel| (root.join(&rel), format!("listed in {} but not found", path.display()))),
            );
            if !missing.is_empty() {
                return Err(Error::Data(missing));
            }
        }
        SplitMode::TestFraction(f) => {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("test fraction {f} must lie in [0, 1)")));
            }
            for (c, samples) in per_class.into_iter().enumerate() {
                let n_test = (samples.len() as f64 * f).round() as usize;
                let mut idx: Vec<usize> = (0..samples.len()).collect();
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(super::derive_seed(spec.seed, 0x5e1, c as u64)));
                let mut is_test = vec![false; samples.len()];
                for &i in &idx[..n_test] {
                    is_test[i] = true;
                }
                for (s, t) in samples.into_iter().zip(is_test) {
                    if t {
                        out.test.push(s);
                    } else {
                        out.train.push(s);
                    }
                }
            }
        }
    }
    Ok(out)
}
