//! Experiment configuration: line-oriented `key = value` files with
//! command-line overrides, and a canonical echo that parses back to the
//! same configuration.

use std::path::PathBuf;

use crate::data::{gen_dual_label, gen_fgbg_with, gen_flower, Dataset, FgBgOptions};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_THRESHOLDS;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    Flower,
    FgBg,
    Dual,
}

impl Generator {
    pub fn name(self) -> &'static str {
        match self {
            Generator::Flower => "flower",
            Generator::FgBg => "fgbg",
            Generator::Dual => "dual",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flower" => Ok(Generator::Flower),
            "fgbg" => Ok(Generator::FgBg),
            "dual" => Ok(Generator::Dual),
            _ => Err(Error::Config(format!("unknown generator {s:?} (flower, fgbg, dual)"))),
        }
    }
}

/// Which label a dual-label dataset trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Object,
    Scene,
}

impl LabelKind {
    pub fn name(self) -> &'static str {
        match self {
            LabelKind::Object => "object",
            LabelKind::Scene => "scene",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "object" => Ok(LabelKind::Object),
            "scene" => Ok(LabelKind::Scene),
            _ => Err(Error::Config(format!("unknown label kind {s:?} (object, scene)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub generator: Generator,
    pub data_seed: u64,
    /// Flower images per class.
    pub n_per_class: usize,
    /// Total images for `fgbg` and `dual`.
    pub n: usize,
    /// Class count for `fgbg`.
    pub classes: usize,
    pub bg_correlation: f64,
    pub noise_background: bool,
    pub label: LabelKind,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    pub n_thresholds: usize,
    /// Number of test-set maps exported as PGM by `eval`.
    pub n_maps: usize,
    /// Seeds `seed, seed + 1, ...` used by `ablate`.
    pub n_seeds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: Generator::Flower,
            data_seed: 0,
            n_per_class: 40,
            n: 480,
            classes: 12,
            bg_correlation: FgBgOptions::default().bg_correlation,
            noise_background: false,
            label: LabelKind::Object,
            train: TrainConfig::default(),
            output_dir: PathBuf::from("runs/default"),
            n_thresholds: DEFAULT_THRESHOLDS,
            n_maps: 8,
            n_seeds: 1,
        }
    }
}

/// Every accepted key, in echo order.
pub const CONFIG_KEYS: [&str; 22] = [
    "generator",
    "data_seed",
    "n_per_class",
    "n",
    "classes",
    "bg_correlation",
    "noise_background",
    "label",
    "variant",
    "seed",
    "a",
    "b",
    "t",
    "lr",
    "epochs_pretrain",
    "epochs_joint",
    "batch_size",
    "patience",
    "output_dir",
    "n_thresholds",
    "n_maps",
    "n_seeds",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "generator" => self.generator = Generator::parse(value)?,
            "data_seed" => self.data_seed = num(key, value)?,
            "n_per_class" => self.n_per_class = num(key, value)?,
            "n" => self.n = num(key, value)?,
            "classes" => self.classes = num(key, value)?,
            "bg_correlation" => self.bg_correlation = num(key, value)?,
            "noise_background" => self.noise_background = num(key, value)?,
            "label" => self.label = LabelKind::parse(value)?,
            "variant" => t.variant = value.parse()?,
            "seed" => t.seed = num(key, value)?,
            "a" => t.a = num(key, value)?,
            "b" => t.b = num(key, value)?,
            "t" => t.t = num(key, value)?,
            "lr" => t.lr = num(key, value)?,
            "epochs_pretrain" => t.epochs_pretrain = num(key, value)?,
            "epochs_joint" => t.epochs_joint = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "patience" => t.patience = num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "n_thresholds" => self.n_thresholds = num(key, value)?,
            "n_maps" => self.n_maps = num(key, value)?,
            "n_seeds" => self.n_seeds = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "generator" => self.generator.name().to_string(),
            "data_seed" => self.data_seed.to_string(),
            "n_per_class" => self.n_per_class.to_string(),
            "n" => self.n.to_string(),
            "classes" => self.classes.to_string(),
            "bg_correlation" => self.bg_correlation.to_string(),
            "noise_background" => self.noise_background.to_string(),
            "label" => self.label.name().to_string(),
            "variant" => t.variant.name().to_string(),
            "seed" => t.seed.to_string(),
            "a" => t.a.to_string(),
            "b" => t.b.to_string(),
            "t" => t.t.to_string(),
            "lr" => t.lr.to_string(),
            "epochs_pretrain" => t.epochs_pretrain.to_string(),
            "epochs_joint" => t.epochs_joint.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "patience" => t.patience.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "n_thresholds" => self.n_thresholds.to_string(),
            "n_maps" => self.n_maps.to_string(),
            "n_seeds" => self.n_seeds.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Canonical `key = value` listing of every field.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.n_thresholds == 0 {
            return Err(Error::Config("n_thresholds must be at least 1".into()));
        }
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.bg_correlation) {
            return Err(Error::Config("bg_correlation must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Generates the dataset described by the config, already relabelled
    /// when a dual-label dataset trains on scene labels.
    pub fn generate(&self) -> Result<Dataset> {
        let ds = match self.generator {
            Generator::Flower => gen_flower(self.data_seed, self.n_per_class)?,
            Generator::FgBg => gen_fgbg_with(
                self.data_seed,
                self.n,
                self.classes,
                FgBgOptions {
                    bg_correlation: self.bg_correlation,
                    noise_background: self.noise_background,
                    ..FgBgOptions::default()
                },
            )?,
            Generator::Dual => gen_dual_label(self.data_seed, self.n)?,
        };
        self.relabel(ds)
    }

    /// Scene view of a dual-label dataset when `label = scene`.
    pub fn relabel(&self, ds: Dataset) -> Result<Dataset> {
        if self.label == LabelKind::Scene {
            ds.with_scene_labels()
        } else {
            Ok(ds)
        }
    }
}
