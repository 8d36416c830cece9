//! Foreground/background cross-fitting probe for the interlocking effect.

use crate::data::{background_only, foreground_only, Dataset, Sample, Split};
use crate::error::{ensure, Result};
use crate::image::{batch_tensor, Image};
use crate::nets::{ClassifierNet, ModelParams};
use crate::tensor::Graph;

use super::{fit_classifier, probe_seed, TrainConfig};
use crate::data::mix;

/// Indexed `[fit][input]` with 0 = foreground-only, 1 = background-only.
#[derive(Clone, Debug, PartialEq)]
pub struct InterlockingTable {
    pub ce: [[f64; 2]; 2],
    pub accuracy: [[f64; 2]; 2],
}

impl InterlockingTable {
    pub const PARTS: [&'static str; 2] = ["F", "B"];

    /// Both diagonal entries below both off-diagonal ones, with fit-F on
    /// F-input the smallest entry.
    pub fn shows_interlocking_pattern(&self) -> bool {
        let c = &self.ce;
        let off_min = c[0][1].min(c[1][0]);
        c[0][0] < off_min && c[1][1] < off_min && c[0][0] < c[1][1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fit,input,ce,accuracy\n");
        for (f, fit) in Self::PARTS.iter().enumerate() {
            for (i, input) in Self::PARTS.iter().enumerate() {
                out.push_str(&format!(
                    "{fit},{input},{:?},{:?}\n",
                    self.ce[f][i], self.accuracy[f][i]
                ));
            }
        }
        out
    }
}

fn evaluate(net: &ClassifierNet, params: &ModelParams, images: &[&Image], labels: &[usize]) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let x = g.input(batch_tensor(images)?);
    let logits = net.forward(&mut g, &vars, x)?;
    let hits = g
        .value(logits)
        .argmax_rows()?
        .iter()
        .zip(labels)
        .filter(|(p, y)| *p == *y)
        .count();
    let ce = g.softmax_cross_entropy(logits, labels)?;
    Ok((g.value(ce).item()?, hits as f64 / labels.len() as f64))
}

/// Trains one predictor on foreground-only composites and one on
/// background-only composites (the other part set to the fill), then
/// scores both on held-out foreground-only and background-only inputs.
/// Uses `epochs_pretrain` epochs and evaluates on the test split.
pub fn interlocking_probe(dataset: &Dataset, config: &TrainConfig) -> Result<InterlockingTable> {
    config.validate()?;
    ensure!(dataset.classes >= 2, Contract, "dataset needs at least 2 classes");
    let train = dataset.split(Split::Train);
    let test = dataset.split(Split::Test);
    ensure!(
        !train.is_empty() && !test.is_empty(),
        Contract,
        "probe needs train and test samples"
    );
    ensure!(
        dataset.samples.iter().all(|s| s.fg_mask.count() > 0),
        Contract,
        "probe needs a foreground mask on every sample"
    );
    let fill = &dataset.fill;
    let parts = |samples: &[&Sample]| -> [Vec<Image>; 2] {
        [
            samples.iter().map(|s| foreground_only(s, fill)).collect(),
            samples.iter().map(|s| background_only(s, fill)).collect(),
        ]
    };
    let train_parts = parts(&train);
    let test_parts = parts(&test);
    let train_labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    let test_labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    let net = super::classifier_for(dataset);
    let seed = probe_seed(config);
    let init = net.init_params(seed);

    let mut table = InterlockingTable {
        ce: [[0.0; 2]; 2],
        accuracy: [[0.0; 2]; 2],
    };
    for (fit, part) in train_parts.iter().enumerate() {
        let imgs: Vec<&Image> = part.iter().collect();
        let (params, _) = fit_classifier(
            &net,
            init.clone(),
            &imgs,
            &train_labels,
            config,
            config.epochs_pretrain,
            mix(seed, 2, fit as u64),
        )?;
        for (input, part) in test_parts.iter().enumerate() {
            let imgs: Vec<&Image> = part.iter().collect();
            let (ce, acc) = evaluate(&net, &params, &imgs, &test_labels)?;
            table.ce[fit][input] = ce;
            table.accuracy[fit][input] = acc;
        }
    }
    Ok(table)
}
