use crate::data::{fresh_background, perturb_remove_pixels, swap_background, Sample};
use crate::error::{ensure, Result};
use crate::image::{AttributionMap, Image};
use crate::masking::make_masks;
use crate::nets::{ClassifierNet, ModelParams, SelectorNet};

use super::pxap_with;
use super::PxapMode;

/// Percentages of top-attributed pixels removed by the fidelity test.
pub const FIDELITY_KS: [f64; 3] = [5.0, 10.0, 20.0];

/// Anything that maps images to class predictions.
pub trait Pipeline {
    fn predict(&self, images: &[&Image]) -> Result<Vec<usize>>;
}

pub struct ClassifierPipeline<'a> {
    pub net: &'a ClassifierNet,
    pub params: &'a ModelParams,
}

impl Pipeline for ClassifierPipeline<'_> {
    fn predict(&self, images: &[&Image]) -> Result<Vec<usize>> {
        self.net.predict(self.params, images)
    }
}

/// Selector, then predictor on the masked-in image.
pub struct CometPipeline<'a> {
    pub selector: &'a SelectorNet,
    pub selector_params: &'a ModelParams,
    pub predictor: &'a ClassifierNet,
    pub predictor_params: &'a ModelParams,
    pub fill: &'a [f64],
}

impl CometPipeline<'_> {
    pub fn explain(&self, images: &[&Image]) -> Result<Vec<AttributionMap>> {
        self.selector.maps(self.selector_params, images)
    }

    pub fn masked_in(&self, images: &[&Image]) -> Result<Vec<Image>> {
        self.explain(images)?
            .iter()
            .zip(images)
            .map(|(m, x)| Ok(make_masks(x, m, self.fill)?.masked_in))
            .collect()
    }
}

impl Pipeline for CometPipeline<'_> {
    fn predict(&self, images: &[&Image]) -> Result<Vec<usize>> {
        let masked = self.masked_in(images)?;
        let refs: Vec<&Image> = masked.iter().collect();
        self.predictor.predict(self.predictor_params, &refs)
    }
}

/// Fraction of `samples` the pipeline labels correctly.
pub fn accuracy(pipeline: &dyn Pipeline, samples: &[&Sample]) -> Result<f64> {
    ensure!(!samples.is_empty(), Contract, "accuracy over zero samples");
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let preds = pipeline.predict(&images)?;
    let correct = preds.iter().zip(samples).filter(|(p, s)| **p == s.label).count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Replaces the `percent`% highest-attributed pixels with `fill`. Ties are
/// broken by row-major position.
pub fn remove_top_fraction(image: &Image, map: &AttributionMap, percent: f64, fill: &[f64]) -> Result<Image> {
    ensure!(
        (0.0..=100.0).contains(&percent),
        Contract,
        "percent {percent} outside [0, 100]"
    );
    ensure!(
        map.height == image.height && map.width == image.width,
        Dimension,
        "map and image sizes differ"
    );
    let plane = image.plane();
    let count = (percent / 100.0 * plane as f64).round() as usize;
    let mut order: Vec<usize> = (0..plane).collect();
    order.sort_by(|&a, &b| map.values[b].total_cmp(&map.values[a]));
    let mut out = image.clone();
    for &pos in &order[..count] {
        out.set_pixel(pos, fill);
    }
    Ok(out)
}

/// Accuracy of `pipeline` after removing the top-`k`% pixels of each map,
/// for each `k` in `ks`.
pub fn fidelity_curve(
    pipeline: &dyn Pipeline,
    samples: &[&Sample],
    maps: &[AttributionMap],
    ks: &[f64],
    fill: &[f64],
) -> Result<Vec<(f64, f64)>> {
    ensure!(
        samples.len() == maps.len(),
        Dimension,
        "{} maps for {} samples",
        maps.len(),
        samples.len()
    );
    ensure!(!samples.is_empty(), Contract, "fidelity over zero samples");
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let perturbed = samples
            .iter()
            .zip(maps)
            .map(|(s, m)| remove_top_fraction(&s.image, m, k, fill))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Image> = perturbed.iter().collect();
        let preds = pipeline.predict(&refs)?;
        let correct = preds.iter().zip(samples).filter(|(p, s)| **p == s.label).count();
        out.push((k, correct as f64 / samples.len() as f64));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Robustness {
    /// Remove this fraction of pixels (set to the fill) at random.
    Noise(f64),
    /// Swap the background for a freshly generated texture.
    BackgroundSwap,
}

/// PxAP of the selector's maps on perturbed images against the original
/// ground truth. Perturbations are seeded per sample from `seed`.
pub fn robustness_eval(
    selector: &SelectorNet,
    params: &ModelParams,
    samples: &[&Sample],
    mode: Robustness,
    fill: &[f64],
    seed: u64,
    n_thresholds: usize,
) -> Result<f64> {
    let perturbed = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let item_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            match mode {
                Robustness::Noise(f) => perturb_remove_pixels(&s.image, f, fill, item_seed),
                Robustness::BackgroundSwap => {
                    let bg = fresh_background(item_seed, s.image.height, s.image.width);
                    Ok(swap_background(s, &bg)?.image)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Image> = perturbed.iter().collect();
    let maps = selector.maps(params, &refs)?;
    let gts: Vec<_> = samples.iter().map(|s| &s.gt_mask).collect();
    pxap_with(&maps, &gts, n_thresholds, PxapMode::Pooled)
}
