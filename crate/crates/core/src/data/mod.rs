//! Dataset ingestion, augmentation and the synthetic lesion generator.

mod augment;
mod dataset;
pub mod image;
mod synth;

pub use augment::{augment, expand_training_set, AugmentationSpec};
pub use dataset::{load_dataset, Dataset, SplitMode, SplitSpec, CLASS_DIRS, SPLIT_FILE};
pub use image::{read_image, resize, write_pgm, Gray};
pub use synth::{generate_synthetic, write_dataset, Separability, SynthSpec, SyntheticSet};

use crate::error::Result;
use crate::tensor::Tensor;

/// One labelled grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Gray,
    /// 1 = COVID, 0 = non-COVID.
    pub label: u8,
    pub id: String,
    /// Ground-truth lesion mask (values 0 or 1), when known.
    pub mask: Option<Gray>,
}

impl Sample {
    /// The image as a 1×H×W tensor.
    pub fn tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, self.image.height, self.image.width], self.image.data.clone())
            .expect("image extents are positive")
    }
}

/// Stacks samples into an N×1×H×W batch.
pub fn batch(samples: &[&Sample]) -> Result<Tensor> {
    let ts: Vec<Tensor> = samples.iter().map(|s| s.tensor()).collect();
    Tensor::stack(&ts.iter().collect::<Vec<_>>())
}

pub fn labels(samples: &[Sample]) -> Vec<u8> {
    samples.iter().map(|s| s.label).collect()
}

/// SplitMix64 finalizer used to derive independent seeds from a base seed.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
