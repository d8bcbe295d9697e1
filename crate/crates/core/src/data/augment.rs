use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::image::{bilinear_zero, Gray};
use super::{derive_seed, Sample};
use crate::error::{Error, Result};

/// Which transforms run, how likely each one is, and how strong.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationSpec {
    pub rotation_prob: f64,
    /// Rotation angle is uniform in ±`rotation_max_deg`.
    pub rotation_max_deg: f64,
    pub flip_lr_prob: f64,
    pub flip_tb_prob: f64,
    pub distortion_prob: f64,
    /// Control cells per side of the elastic grid.
    pub distortion_grid: usize,
    /// Largest control-point displacement, in pixels.
    pub distortion_magnitude: f64,
    pub skew_prob: f64,
    /// Largest corner displacement as a fraction of the image size.
    pub skew_max: f64,
    /// Base seed for [`expand_training_set`].
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            rotation_prob: 0.7,
            rotation_max_deg: 10.0,
            flip_lr_prob: 0.5,
            flip_tb_prob: 0.5,
            distortion_prob: 0.5,
            distortion_grid: 4,
            distortion_magnitude: 3.0,
            skew_prob: 0.3,
            skew_max: 0.1,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    /// Every probability zero.
    pub fn none() -> Self {
        AugmentationSpec {
            rotation_prob: 0.0,
            flip_lr_prob: 0.0,
            flip_tb_prob: 0.0,
            distortion_prob: 0.0,
            skew_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("rotation_prob", self.rotation_prob),
            ("flip_lr_prob", self.flip_lr_prob),
            ("flip_tb_prob", self.flip_tb_prob),
            ("distortion_prob", self.distortion_prob),
            ("skew_prob", self.skew_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augment.{name} = {p} is not a probability")));
            }
        }
        if self.distortion_grid == 0 {
            return Err(Error::Config("augment.distortion_grid must be at least 1".into()));
        }
        if !(self.rotation_max_deg >= 0.0 && self.distortion_magnitude >= 0.0 && (0.0..0.5).contains(&self.skew_max)) {
            return Err(Error::Config("augmentation magnitudes must be non-negative (skew below 0.5)".into()));
        }
        Ok(())
    }
}

/// Resamples through a map from output pixel to source coordinates.
fn warp(img: &Gray, map: impl Fn(f64, f64) -> (f64, f64)) -> Gray {
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..img.height {
        for x in 0..img.width {
            let (sx, sy) = map(x as f64, y as f64);
            data.push(bilinear_zero(img, sx, sy));
        }
    }
    Gray { data, ..*img }
}

/// Rotates counter-clockwise (as displayed, y pointing down) about the image centre.
pub(crate) fn rotate(img: &Gray, degrees: f64) -> Gray {
    let (mut s, mut c) = degrees.to_radians().sin_cos();
    if degrees % 90.0 == 0.0 {
        (s, c) = (s.round(), c.round());
    }
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    warp(img, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + c * dx - s * dy, cy + s * dx + c * dy)
    })
}

fn flip_lr(img: &Gray) -> Gray {
    let mut out = img.clone();
    for row in out.data.chunks_exact_mut(img.width) {
        row.reverse();
    }
    out
}

fn flip_tb(img: &Gray) -> Gray {
    let mut data = Vec::with_capacity(img.data.len());
    for row in img.data.chunks_exact(img.width).rev() {
        data.extend_from_slice(row);
    }
    Gray { data, ..*img }
}

/// Elastic warp: control vertices on a (g+1)×(g+1) lattice carry displacements,
/// border vertices fixed, interpolated bilinearly to every pixel.
fn distort(img: &Gray, grid: usize, disp: &[(f64, f64)]) -> Gray {
    let v = grid + 1;
    let sx = (img.width as f64 - 1.0).max(1.0) / grid as f64;
    let sy = (img.height as f64 - 1.0).max(1.0) / grid as f64;
    warp(img, |x, y| {
        let gx = (x / sx).min(grid as f64 - 1e-9);
        let gy = (y / sy).min(grid as f64 - 1e-9);
        let (i, j) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (gx - i as f64, gy - j as f64);
        let d = |jj: usize, ii: usize| disp[jj * v + ii];
        let mut dx = 0.0;
        let mut dy = 0.0;
        for (jj, wy) in [(j, 1.0 - fy), (j + 1, fy)] {
            for (ii, wx) in [(i, 1.0 - fx), (i + 1, fx)] {
                let (a, b) = d(jj, ii);
                dx += wy * wx * a;
                dy += wy * wx * b;
            }
        }
        (x + dx, y + dy)
    })
}

/// Solves the 8-parameter homography taking each `from` point to its `to` point.
fn homography(from: &[(f64, f64); 4], to: &[(f64, f64); 4]) -> Option<[f64; 8]> {
    let mut a = [[0.0f64; 9]; 8];
    for k in 0..4 {
        let (x, y) = from[k];
        let (u, v) = to[k];
        a[2 * k] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * k + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for col in 0..8 {
        let piv = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..8 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..9 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut h = [0.0; 8];
    for i in 0..8 {
        h[i] = a[i][8] / a[i][i];
    }
    Some(h)
}

fn skew(img: &Gray, offsets: &[(f64, f64); 4]) -> Gray {
    let (w, h) = (img.width as f64 - 1.0, img.height as f64 - 1.0);
    let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let mut src = corners;
    for (s, o) in src.iter_mut().zip(offsets) {
        s.0 += o.0 * img.width as f64;
        s.1 += o.1 * img.height as f64;
    }
    let Some(m) = homography(&corners, &src) else {
        return img.clone();
    };
    warp(img, |x, y| {
        let d = m[6] * x + m[7] * y + 1.0;
        ((m[0] * x + m[1] * y + m[2]) / d, (m[3] * x + m[4] * y + m[5]) / d)
    })
}

fn binarize(m: Gray) -> Gray {
    let data = m.data.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
    Gray { data, ..m }
}

/// Applies each enabled transform with its probability. All draws are made
/// unconditionally so the stream layout does not depend on the probabilities.
/// A ground-truth mask undergoes the same geometry.
pub fn augment(sample: &Sample, spec: &AugmentationSpec, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (img_h, img_w) = (sample.image.height, sample.image.width);

    let do_rot = rng.random::<f64>() < spec.rotation_prob;
    let angle = rng.random_range(-1.0..=1.0) * spec.rotation_max_deg;
    let do_lr = rng.random::<f64>() < spec.flip_lr_prob;
    let do_tb = rng.random::<f64>() < spec.flip_tb_prob;
    let do_dist = rng.random::<f64>() < spec.distortion_prob;
    let g = spec.distortion_grid.max(1);
    let disp: Vec<(f64, f64)> = (0..(g + 1) * (g + 1))
        .map(|k| {
            let (i, j) = (k % (g + 1), k / (g + 1));
            let dx = rng.random_range(-1.0..=1.0) * spec.distortion_magnitude;
            let dy = rng.random_range(-1.0..=1.0) * spec.distortion_magnitude;
            if i == 0 || j == 0 || i == g || j == g {
                (0.0, 0.0)
            } else {
                (dx, dy)
            }
        })
        .collect();
    let do_skew = rng.random::<f64>() < spec.skew_prob;
    let mut offsets = [(0.0, 0.0); 4];
    for o in offsets.iter_mut() {
        *o = (
            rng.random_range(-1.0..=1.0) * spec.skew_max,
            rng.random_range(-1.0..=1.0) * spec.skew_max,
        );
    }

    let apply = |img: &Gray| -> Gray {
        let mut out = img.clone();
        if do_rot {
            out = rotate(&out, angle);
        }
        if do_lr {
            out = flip_lr(&out);
        }
        if do_tb {
            out = flip_tb(&out);
        }
        if do_dist && img_h > 1 && img_w > 1 {
            out = distort(&out, g, &disp);
        }
        if do_skew {
            out = skew(&out, &offsets);
        }
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    };
    Sample {
        image: apply(&sample.image),
        label: sample.label,
        id: sample.id.clone(),
        mask: sample.mask.as_ref().map(|m| binarize(apply(m))),
    }
}

/// Returns `factor` entries per input sample: the original followed by
/// `factor − 1` augmented copies, each with its own derived seed.
pub fn expand_training_set(train: &[Sample], spec: &AugmentationSpec, factor: usize) -> Result<Vec<Sample>> {
    if factor == 0 {
        return Err(Error::Config("expansion factor must be at least 1".into()));
    }
    spec.validate()?;
    Ok(train
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, s)| {
            let mut group = Vec::with_capacity(factor);
            group.push(s.clone());
            for k in 1..factor {
                let mut a = augment(s, spec, derive_seed(spec.seed, i as u64, k as u64));
                a.id = format!("{}#aug{k}", s.id);
                group.push(a);
            }
            group
        })
        .collect())
}
