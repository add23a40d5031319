//! On-disk datasets: a `dataset.json` manifest next to TNS1 image and label
//! files, each `(1, 1, H, W)`. Labels hold class indices.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::GenParams;
use crate::error::{Error, Result};
use crate::tensor::{Activation, OneHotMask, Shape, Tensor4};
use crate::tns;

pub const MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub image: String,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub params: GenParams,
    pub seed: u64,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<SampleEntry>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json { path, source: e })
    }
}

/// Images `(n, 1, H, W)` and class-index labels `(n, 1, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub images: Tensor4,
    pub labels: Tensor4,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.shape().batch
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.manifest.classes
    }

    /// Model output channels under `activation`: one per class for
    /// softmax, one per foreground class for sigmoid.
    pub fn output_channels(&self, activation: Activation) -> usize {
        match activation {
            Activation::Softmax => self.classes(),
            Activation::Sigmoid => self.classes() - 1,
        }
    }

    pub fn images(&self, indices: &[usize]) -> Result<Tensor4> {
        self.images.gather_batch(indices)
    }

    pub fn targets(&self, indices: &[usize], activation: Activation) -> Result<OneHotMask> {
        let labels = self.labels.gather_batch(indices)?;
        let s = labels.shape();
        let classes = self.classes();
        let channels = self.output_channels(activation);
        let shape = s.with_channels(channels);
        match activation {
            Activation::Softmax => {
                let idx: Vec<usize> = labels.data().iter().map(|&v| v as usize).collect();
                OneHotMask::from_labels(shape, &idx)
            }
            Activation::Sigmoid => {
                let t = Tensor4::from_fn(shape, |b, k, y, x| {
                    if labels.get(b, 0, y, x) as usize == k + 1 {
                        1.0
                    } else {
                        0.0
                    }
                });
                debug_assert!(classes >= 2);
                OneHotMask::new(t, activation)
            }
        }
    }

    /// A seed-determined permutation of the sample indices.
    pub fn shuffled(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order
    }
}

/// Loads and validates the dataset in `dir`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = Manifest::read(dir)?;
    let manifest_path = dir.join(MANIFEST);
    if manifest.samples.is_empty() {
        return Err(Error::format(&manifest_path, "dataset lists no samples"));
    }
    if manifest.classes < 2 {
        return Err(Error::format(&manifest_path, "dataset needs at least 2 classes"));
    }
    let expected = [1, 1, manifest.height, manifest.width];
    let plane = manifest.height * manifest.width;
    let n = manifest.samples.len();
    let mut images = Vec::with_capacity(n * plane);
    let mut labels = Vec::with_capacity(n * plane);
    for entry in &manifest.samples {
        for (file, dst, is_label) in [(&entry.image, &mut images, false), (&entry.mask, &mut labels, true)] {
            let path = dir.join(file);
            let (dims, values) = tns::read(&path)?;
            if dims != expected {
                return Err(Error::format(
                    &path,
                    format!("expected dims {expected:?}, found {dims:?}"),
                ));
            }
            if is_label
                && values
                    .iter()
                    .any(|&v| v < 0.0 || v.fract() != 0.0 || v as usize >= manifest.classes)
            {
                return Err(Error::format(&path, "labels must be class indices"));
            }
            dst.extend(values);
        }
    }
    let shape = Shape::new(n, 1, manifest.height, manifest.width);
    Ok(Dataset {
        images: Tensor4::from_vec(shape, images)?,
        labels: Tensor4::from_vec(shape, labels)?,
        manifest,
    })
}
