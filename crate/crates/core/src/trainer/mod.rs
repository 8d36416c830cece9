//! Detector pre-training, joint selector/predictor training and the
//! ablation variants.

mod probe;

pub use probe::{interlocking_probe, InterlockingTable};

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{mix, Dataset, Sample, Split};
use crate::error::{ensure, Error, Result};
use crate::image::{batch_tensor, Image};
use crate::masking::{composite_loss, fill_tensor, mask_in_out, sparsity_regularizer};
use crate::metrics::{accuracy, CometPipeline};
use crate::nets::{ClassifierNet, ModelParams, Optimizer, SelectorNet};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Frozen pre-trained detector on the masked-out image.
    Comet,
    /// Detector also trained on masked-out images.
    Td,
    /// No detector term (`a = 0`).
    NoDetector,
    /// Predictor pre-trained on full images and frozen; only the selector
    /// learns, without a detector term.
    Fp,
    /// As `Comet`, on uniformly permuted labels.
    Dr,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Comet,
        Variant::Td,
        Variant::NoDetector,
        Variant::Fp,
        Variant::Dr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Comet => "COMET",
            Variant::Td => "TD",
            Variant::NoDetector => "NO_DETECTOR",
            Variant::Fp => "FP",
            Variant::Dr => "DR",
        }
    }

    pub fn needs_detector(self) -> bool {
        matches!(self, Variant::Comet | Variant::Td | Variant::Dr)
    }

    /// Detector weight actually used by this variant.
    pub fn effective_a(self, a: f64) -> f64 {
        if self.needs_detector() {
            a
        } else {
            0.0
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub a: f64,
    pub b: f64,
    pub t: f64,
    pub lr: f64,
    pub epochs_pretrain: usize,
    pub epochs_joint: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Epochs without a validation-accuracy improvement before the joint
    /// phase stops.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            a: 5.0,
            b: 100.0,
            t: 0.1,
            lr: 5e-4,
            epochs_pretrain: 30,
            epochs_joint: 30,
            batch_size: 32,
            seed: 0,
            variant: Variant::Comet,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.a >= 0.0 && self.a.is_finite(),
            Config,
            "a must be a finite value >= 0, got {}",
            self.a
        );
        ensure!(
            self.b >= 0.0 && self.b.is_finite(),
            Config,
            "b must be a finite value >= 0, got {}",
            self.b
        );
        ensure!(
            (0.0..=1.0).contains(&self.t),
            Config,
            "t must lie in [0, 1], got {}",
            self.t
        );
        ensure!(
            self.lr > 0.0 && self.lr.is_finite(),
            Config,
            "lr must be positive, got {}",
            self.lr
        );
        ensure!(self.epochs_joint >= 1, Config, "epochs_joint must be at least 1");
        ensure!(self.batch_size >= 1, Config, "batch_size must be at least 1");
        ensure!(self.patience >= 1, Config, "patience must be at least 1");
        Ok(())
    }

    /// Independent seed for one consumer of randomness (initialisation,
    /// shuffling, ...).
    pub fn role_seed(&self, role: u64) -> u64 {
        mix(self.seed, 0x7a1e, role)
    }
}

const ROLE_SELECTOR: u64 = 1;
const ROLE_PREDICTOR: u64 = 2;
const ROLE_DETECTOR: u64 = 3;
const ROLE_SHUFFLE: u64 = 4;
const ROLE_PROBE: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_p: f64,
    pub l_d_out: f64,
    pub reg: f64,
    pub total: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub mean_mask: f64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,l_p,l_d_out,reg,total,train_acc,val_acc,mean_mask";

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAIN_LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                r.epoch, r.l_p, r.l_d_out, r.reg, r.total, r.train_acc, r.val_acc, r.mean_mask
            ));
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// The dataset a variant actually trains on: labels permuted under the run
/// seed for `Dr`, untouched otherwise.
pub fn effective_dataset<'a>(dataset: &'a Dataset, config: &TrainConfig) -> Cow<'a, Dataset> {
    if config.variant == Variant::Dr {
        Cow::Owned(dataset.with_permuted_labels(config.seed))
    } else {
        Cow::Borrowed(dataset)
    }
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn grads_of(grads: &crate::tensor::Gradients, g: &Graph, vars: &[Var]) -> Vec<Tensor> {
    vars.iter()
        .map(|&v| grads.get_or_zeros(v, g.value(v).shape()))
        .collect()
}

fn finite(value: f64, what: &str, epoch: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("{what} became {value} in epoch {epoch}")))
    }
}

fn correct(logits: &Tensor, labels: &[usize]) -> Result<usize> {
    Ok(logits
        .argmax_rows()?
        .iter()
        .zip(labels)
        .filter(|(p, y)| *p == *y)
        .count())
}

/// Cross-entropy training of `net` on `(images, labels)` with Adam.
/// Returns the parameters and one record per epoch (`l_p` holds the mean
/// loss, `train_acc` the running accuracy).
pub fn fit_classifier(
    net: &ClassifierNet,
    mut params: ModelParams,
    images: &[&Image],
    labels: &[usize],
    config: &TrainConfig,
    epochs: usize,
    shuffle_seed: u64,
) -> Result<(ModelParams, Vec<EpochRecord>)> {
    ensure!(
        images.len() == labels.len(),
        Dimension,
        "{} labels for {} images",
        labels.len(),
        images.len()
    );
    ensure!(net.classes >= 2, Contract, "classifier needs at least 2 classes");
    let mut opt = Optimizer::adam(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut records = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let (mut loss_sum, mut hits) = (0.0, 0);
        for batch in batches(images.len(), config.batch_size, &mut rng) {
            let imgs: Vec<&Image> = batch.iter().map(|&i| images[i]).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let vars = params.bind(&mut g, true);
            let x = g.input(batch_tensor(&imgs)?);
            let logits = net.forward(&mut g, &vars, x)?;
            let loss = g.softmax_cross_entropy(logits, &ys)?;
            let value = finite(g.value(loss).item()?, "classifier loss", epoch)?;
            loss_sum += value * ys.len() as f64;
            hits += correct(g.value(logits), &ys)?;
            let grads = g.backward(loss)?;
            opt.step(&mut params, &grads_of(&grads, &g, &vars))?;
        }
        let n = images.len().max(1) as f64;
        records.push(EpochRecord {
            epoch,
            l_p: loss_sum / n,
            l_d_out: 0.0,
            reg: 0.0,
            total: loss_sum / n,
            train_acc: hits as f64 / n,
            val_acc: f64::NAN,
            mean_mask: 1.0,
        });
    }
    Ok((params, records))
}

pub fn classifier_for(dataset: &Dataset) -> ClassifierNet {
    ClassifierNet::new(dataset.channels, dataset.height, dataset.width, dataset.classes).with_norm(dataset.input_norm())
}

pub fn selector_for(dataset: &Dataset) -> SelectorNet {
    SelectorNet::new(dataset.channels, dataset.height, dataset.width).with_norm(dataset.input_norm())
}

pub fn predictor_for(dataset: &Dataset) -> ClassifierNet {
    classifier_for(dataset)
}

/// Trains a classifier on the full train-split images. This is the detector
/// of the masked-out term and, for `Fp`, the frozen predictor. `Dr` runs see
/// permuted labels.
pub fn pretrain_detector(dataset: &Dataset, config: &TrainConfig) -> Result<ModelParams> {
    Ok(pretrain_detector_logged(dataset, config)?.0)
}

/// [`pretrain_detector`] that also returns the per-epoch log.
pub fn pretrain_detector_logged(dataset: &Dataset, config: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    ensure!(dataset.classes >= 2, Contract, "dataset needs at least 2 classes");
    let ds = effective_dataset(dataset, config);
    let net = classifier_for(&ds);
    let init = net.init_params(config.role_seed(ROLE_DETECTOR));
    let train = ds.split(Split::Train);
    let images: Vec<&Image> = train.iter().map(|s| &s.image).collect();
    let labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    let (params, records) = fit_classifier(
        &net,
        init,
        &images,
        &labels,
        config,
        config.epochs_pretrain,
        mix(config.role_seed(ROLE_SHUFFLE), 1, 0),
    )?;
    Ok((params, TrainLog { records }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointOutcome {
    pub selector: ModelParams,
    pub predictor: ModelParams,
    /// Detector after training: updated for `Td`, unchanged for `Comet` and
    /// `Dr`, absent otherwise.
    pub detector: Option<ModelParams>,
    pub log: TrainLog,
}

/// Selector initialisation with the output bias set to `logit(t)`, so the
/// initial map mean sits at the sparsity target instead of 0.5.
pub fn init_selector(selector: &SelectorNet, config: &TrainConfig) -> Result<ModelParams> {
    let mut params = selector.init_params(config.role_seed(ROLE_SELECTOR));
    let prior = config.t.clamp(1e-3, 1.0 - 1e-3);
    let (_, bias) = selector.head_names();
    let b = params
        .get_mut(&bias)
        .ok_or_else(|| Error::Contract(format!("selector has no parameter {bias}")))?;
    b.data_mut().fill((prior / (1.0 - prior)).ln());
    Ok(params)
}

/// Joint phase. `detector` is required for `Comet`, `Td` and `Dr` and is
/// used as the frozen full-image predictor for `Fp` when given (otherwise
/// one is pre-trained here).
pub fn train_joint(dataset: &Dataset, config: &TrainConfig, detector: Option<&ModelParams>) -> Result<JointOutcome> {
    config.validate()?;
    let variant = config.variant;
    if variant.needs_detector() && detector.is_none() {
        return Err(Error::Config(format!("variant {variant} needs a pre-trained detector")));
    }
    let ds = effective_dataset(dataset, config);
    let selector = selector_for(&ds);
    let predictor = predictor_for(&ds);
    if let Some(d) = detector {
        predictor.net.check_params(d)?;
    }
    let mut sel_params = init_selector(&selector, config)?;
    let (mut pred_params, train_predictor) = if variant == Variant::Fp {
        let p = match detector {
            Some(d) => d.clone(),
            None => pretrain_detector(&ds, config)?,
        };
        (p, false)
    } else {
        (predictor.init_params(config.role_seed(ROLE_PREDICTOR)), true)
    };
    let mut det_params = if variant.needs_detector() {
        detector.cloned()
    } else {
        None
    };
    let a = variant.effective_a(config.a);

    let train = ds.split(Split::Train);
    let val = ds.split(Split::Val);
    let mut sel_opt = Optimizer::adam(config.lr);
    let mut pred_opt = Optimizer::adam(config.lr);
    let mut det_opt = Optimizer::adam(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.role_seed(ROLE_SHUFFLE));
    let mut log = TrainLog::default();
    let (mut best_val, mut stale) = (f64::NEG_INFINITY, 0);

    for epoch in 1..=config.epochs_joint {
        let mut sums = [0.0; 5];
        let mut hits = 0;
        for batch in batches(train.len(), config.batch_size, &mut rng) {
            let samples: Vec<&Sample> = batch.iter().map(|&i| train[i]).collect();
            let imgs: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
            let ys: Vec<usize> = samples.iter().map(|s| s.label).collect();
            let n = ys.len();

            let mut g = Graph::new();
            let sel_vars = sel_params.bind(&mut g, true);
            let pred_vars = pred_params.bind(&mut g, train_predictor);
            let det_vars = det_params.as_ref().map(|d| d.bind(&mut g, variant == Variant::Td));
            let x = g.input(batch_tensor(&imgs)?);
            let q = g.input(fill_tensor(n, &ds.fill, ds.height, ds.width));
            let map = selector.forward(&mut g, &sel_vars, x)?;
            let (x_in, x_out) = mask_in_out(&mut g, x, map, q)?;
            let pred_logits = predictor.forward(&mut g, &pred_vars, x_in)?;
            let l_p = g.softmax_cross_entropy(pred_logits, &ys)?;
            let l_d = match &det_vars {
                Some(dv) => {
                    let logits = predictor.forward(&mut g, dv, x_out)?;
                    Some(g.softmax_cross_entropy(logits, &ys)?)
                }
                None => None,
            };
            let reg = sparsity_regularizer(&mut g, map, config.t)?;
            let total = composite_loss(&mut g, l_p, l_d.filter(|_| a > 0.0), reg, a, config.b)?;

            let total_v = finite(g.value(total).item()?, "total loss", epoch)?;
            let l_d_v = match l_d {
                Some(v) => g.value(v).item()?,
                None => 0.0,
            };
            let vals = [
                g.value(l_p).item()?,
                if a > 0.0 { l_d_v } else { 0.0 },
                g.value(reg).item()?,
                total_v,
                g.value(map).data().iter().sum::<f64>() / g.value(map).len() as f64,
            ];
            for (s, v) in sums.iter_mut().zip(vals) {
                *s += v * n as f64;
            }
            hits += correct(g.value(pred_logits), &ys)?;

            let grads = g.backward(total)?;
            sel_opt.step(&mut sel_params, &grads_of(&grads, &g, &sel_vars))?;
            if train_predictor {
                pred_opt.step(&mut pred_params, &grads_of(&grads, &g, &pred_vars))?;
            }
            if let (Variant::Td, Some(dv), Some(ld), Some(dp)) = (variant, &det_vars, l_d, det_params.as_mut()) {
                let det_grads = g.backward(ld)?;
                det_opt.step(dp, &grads_of(&det_grads, &g, dv))?;
            }
        }
        let m = train.len().max(1) as f64;
        let val_acc = if val.is_empty() {
            0.0
        } else {
            accuracy(
                &CometPipeline {
                    selector: &selector,
                    selector_params: &sel_params,
                    predictor: &predictor,
                    predictor_params: &pred_params,
                    fill: &ds.fill,
                },
                &val,
            )?
        };
        log.records.push(EpochRecord {
            epoch,
            l_p: sums[0] / m,
            l_d_out: sums[1] / m,
            reg: sums[2] / m,
            total: sums[3] / m,
            train_acc: hits as f64 / m,
            val_acc,
            mean_mask: sums[4] / m,
        });
        // holding the best accuracy counts as progress: once validation
        // accuracy saturates the maps still sharpen
        if val_acc >= best_val {
            best_val = val_acc;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(JointOutcome {
        selector: sel_params,
        predictor: pred_params,
        detector: det_params,
        log,
    })
}

/// Everything a variant run produces, with the detector it was trained
/// against when one was used.
#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifacts {
    pub config: TrainConfig,
    pub pretrained_detector: Option<ModelParams>,
    pub outcome: JointOutcome,
}

/// Pre-training (when the variant needs it, or `Fp` needs a predictor) then
/// the joint phase. A detector already trained on the same effective
/// dataset and seed can be passed in to skip pre-training.
pub fn run_variant(dataset: &Dataset, config: &TrainConfig, detector: Option<ModelParams>) -> Result<RunArtifacts> {
    let detector = match detector {
        Some(d) => Some(d),
        None if config.variant.needs_detector() || config.variant == Variant::Fp => {
            Some(pretrain_detector(dataset, config)?)
        }
        None => None,
    };
    let outcome = train_joint(dataset, config, detector.as_ref())?;
    Ok(RunArtifacts {
        config: config.clone(),
        pretrained_detector: detector,
        outcome,
    })
}

pub(crate) fn probe_seed(config: &TrainConfig) -> u64 {
    config.role_seed(ROLE_PROBE)
}
