//! Synthetic datasets with exact ground-truth masks.

mod generate;
mod io;
mod perturb;
pub mod texture;

pub(crate) use generate::mix;
pub use generate::{
    gen_dual_label, gen_fgbg, gen_fgbg_with, gen_flower, FgBgOptions, FLOWER_CLASSES, FLOWER_COLORS, IMAGE_SIZE,
};
pub use io::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use perturb::{background_only, foreground_only, fresh_background, perturb_remove_pixels, swap_background};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::image::{Image, Mask};
use crate::nets::InputNorm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Split::Train),
            1 => Ok(Split::Val),
            2 => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split tag {tag}"))),
        }
    }

    /// 70/15/15 assignment of the `j`-th of `n` items of one class.
    pub fn for_position(j: usize, n: usize) -> Self {
        let train = (0.70 * n as f64).round() as usize;
        let val = (0.85 * n as f64).round() as usize;
        if j < train.max(1) {
            Split::Train
        } else if j < val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
    pub split: Split,
    /// Discriminative pixels.
    pub gt_mask: Mask,
    /// Whole object.
    pub fg_mask: Mask,
    /// `key=value` pairs separated by `;`, always including `gen` and `seed`.
    pub meta: String,
}

impl Sample {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .split(';')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }

    /// Secondary (scene) label carried by dual-label datasets.
    pub fn scene_label(&self) -> Option<usize> {
        self.meta_value("scene").and_then(|v| v.parse().ok())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub generator: String,
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Per-channel mean pixel of the train split.
    pub fill: Vec<f64>,
    pub samples: Vec<Sample>,
    /// Background textures the generator drew from, when it used a pool.
    /// Not persisted.
    pub backgrounds: Vec<Image>,
}

impl Dataset {
    pub(crate) fn assemble(generator: &str, classes: usize, samples: Vec<Sample>, backgrounds: Vec<Image>) -> Self {
        let [channels, height, width] = samples[0].image.shape();
        let mut ds = Self {
            generator: generator.to_string(),
            classes,
            channels,
            height,
            width,
            fill: Vec::new(),
            samples,
            backgrounds,
        };
        ds.fill = ds.compute_fill();
        ds
    }

    /// Arithmetic per-channel mean over the train split.
    pub fn compute_fill(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut sums = vec![0.0; self.channels];
        let mut count = 0usize;
        for s in self.split(Split::Train) {
            for (c, sum) in sums.iter_mut().enumerate() {
                *sum += s.image.data[c * plane..(c + 1) * plane].iter().sum::<f64>();
            }
            count += plane;
        }
        sums.iter().map(|s| s / count.max(1) as f64).collect()
    }

    /// Train-split per-channel mean (the fill) and standard deviation, used
    /// to standardise network inputs.
    pub fn input_norm(&self) -> InputNorm {
        let plane = self.height * self.width;
        let mut sq = vec![0.0; self.channels];
        let mut count = 0usize;
        for s in self.split(Split::Train) {
            for (c, acc) in sq.iter_mut().enumerate() {
                let q = self.fill[c];
                *acc += s.image.data[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|v| (v - q) * (v - q))
                    .sum::<f64>();
            }
            count += plane;
        }
        InputNorm {
            mean: self.fill.clone(),
            std: sq.iter().map(|v| (v / count.max(1) as f64).sqrt().max(1e-3)).collect(),
        }
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn images(&self, split: Split) -> Vec<&Image> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| &s.image)
            .collect()
    }

    pub fn labels(&self, split: Split) -> Vec<usize> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.label)
            .collect()
    }

    pub fn gt_masks(&self, split: Split) -> Vec<&Mask> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| &s.gt_mask)
            .collect()
    }

    pub fn check(&self) -> Result<()> {
        ensure!(
            self.classes >= 2,
            Contract,
            "dataset needs at least 2 classes, has {}",
            self.classes
        );
        for s in &self.samples {
            ensure!(
                s.label < self.classes,
                Index,
                "label {} outside [0, {})",
                s.label,
                self.classes
            );
            ensure!(
                s.image.shape() == [self.channels, self.height, self.width],
                Dimension,
                "sample image {:?} in {}x{}x{} dataset",
                s.image.shape(),
                self.channels,
                self.height,
                self.width
            );
        }
        Ok(())
    }

    /// Copy relabelled by a uniform shuffle of all labels under `seed`.
    pub fn with_permuted_labels(&self, seed: u64) -> Self {
        let mut labels: Vec<usize> = self.samples.iter().map(|s| s.label).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1abe_1000_0000));
        let mut out = self.clone();
        for (s, l) in out.samples.iter_mut().zip(labels) {
            s.label = l;
        }
        out.generator = format!("{}-permuted", self.generator);
        out
    }

    /// Dual-label dataset viewed through its scene labels: the scene label
    /// becomes the class and the scene mask (complement of the object) the
    /// ground truth.
    pub fn with_scene_labels(&self) -> Result<Self> {
        let mut out = self.clone();
        let mut classes = 0;
        for s in &mut out.samples {
            let scene = s
                .scene_label()
                .ok_or_else(|| Error::Contract("sample carries no scene label".into()))?;
            classes = classes.max(scene + 1);
            s.label = scene;
            s.gt_mask = s.fg_mask.complement();
            s.fg_mask = s.gt_mask.clone();
        }
        out.classes = classes;
        out.generator = format!("{}-scene", self.generator);
        Ok(out)
    }

    /// Per-split, per-class sample counts, `counts[split][class]`.
    pub fn class_counts(&self) -> [Vec<usize>; 3] {
        let mut counts = [vec![0; self.classes], vec![0; self.classes], vec![0; self.classes]];
        for s in &self.samples {
            counts[s.split.tag() as usize][s.label] += 1;
        }
        counts
    }
}
