//! Localisation and faithfulness metrics for attribution maps.
//!
//! Thresholds form the uniform grid `tau_k = k / n` for `k = 0..=n`; a
//! pixel is selected at `tau` when its value is `>= tau`.

mod fidelity;
mod report;
mod saliency;

pub use fidelity::{
    accuracy, fidelity_curve, remove_top_fraction, robustness_eval, ClassifierPipeline, CometPipeline, Pipeline,
    Robustness, FIDELITY_KS,
};
pub use report::{parse_pgm, read_report_csv, write_pgm, write_report_csv, MetricReport, ReportRow, REPORT_HEADER};
pub use saliency::{input_gradient_saliency, input_gradient_saliency_batch, Saliency};

use crate::error::{ensure, Error, Result};
use crate::image::{AttributionMap, Mask};

pub const DEFAULT_THRESHOLDS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PxapMode {
    /// Precision and recall over the pixels of all images together.
    #[default]
    Pooled,
    /// Mean of per-image areas.
    PerImage,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecisionRecallPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Largest `k` in `0..=n` with `value >= k / n`, using the same floating
/// comparison the threshold definition uses.
fn bin(value: f64, n: usize) -> usize {
    let tau = |k: usize| k as f64 / n as f64;
    let mut k = ((value * n as f64).floor().max(0.0) as usize).min(n);
    while k < n && value >= tau(k + 1) {
        k += 1;
    }
    while k > 0 && value < tau(k) {
        k -= 1;
    }
    k
}

/// `(selected[k], hits[k])` counts at every threshold index.
#[derive(Clone, Debug, Default)]
struct Counts {
    selected: Vec<u64>,
    hits: Vec<u64>,
    positives: u64,
    pixels: u64,
}

impl Counts {
    fn new(n: usize) -> Self {
        Self {
            selected: vec![0; n + 1],
            hits: vec![0; n + 1],
            ..Default::default()
        }
    }

    fn add(&mut self, map: &AttributionMap, gt: &Mask) {
        let n = self.selected.len() - 1;
        let mut sel = vec![0u64; n + 1];
        let mut hit = vec![0u64; n + 1];
        for (v, g) in map.values.iter().zip(&gt.bits) {
            let b = bin(*v, n);
            sel[b] += 1;
            if *g {
                hit[b] += 1;
                self.positives += 1;
            }
        }
        self.pixels += map.values.len() as u64;
        // suffix sums: pixels whose bin >= k are selected at tau_k
        let (mut s, mut h) = (0, 0);
        for k in (0..=n).rev() {
            s += sel[k];
            h += hit[k];
            self.selected[k] += s;
            self.hits[k] += h;
        }
    }

    fn curve(&self) -> Vec<PrecisionRecallPoint> {
        let n = self.selected.len() - 1;
        (0..=n)
            .rev()
            .map(|k| PrecisionRecallPoint {
                threshold: k as f64 / n as f64,
                precision: if self.selected[k] == 0 {
                    1.0
                } else {
                    self.hits[k] as f64 / self.selected[k] as f64
                },
                recall: self.hits[k] as f64 / self.positives as f64,
            })
            .collect()
    }
}

fn check_aligned(maps: &[AttributionMap], gts: &[&Mask], n: usize) -> Result<()> {
    ensure!(n >= 1, Contract, "need at least one threshold step");
    ensure!(!maps.is_empty(), Contract, "no maps to score");
    ensure!(
        maps.len() == gts.len(),
        Dimension,
        "{} maps for {} masks",
        maps.len(),
        gts.len()
    );
    for (m, g) in maps.iter().zip(gts) {
        ensure!(
            m.height == g.height && m.width == g.width,
            Dimension,
            "map {}x{} vs mask {}x{}",
            m.height,
            m.width,
            g.height,
            g.width
        );
    }
    Ok(())
}

/// Precision/recall points ordered by increasing recall (decreasing
/// threshold), pooled over all images.
pub fn precision_recall_curve(
    maps: &[AttributionMap],
    gts: &[&Mask],
    n_thresholds: usize,
) -> Result<Vec<PrecisionRecallPoint>> {
    check_aligned(maps, gts, n_thresholds)?;
    let mut counts = Counts::new(n_thresholds);
    for (m, g) in maps.iter().zip(gts) {
        counts.add(m, g);
    }
    if counts.positives == 0 {
        return Err(Error::Contract("ground truth is empty; recall undefined".into()));
    }
    Ok(counts.curve())
}

fn area(curve: &[PrecisionRecallPoint]) -> f64 {
    let mut prev = 0.0;
    let mut total = 0.0;
    for p in curve {
        total += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    total
}

/// Area under the pixel precision-recall curve,
/// `sum_k (Rec(tau_k) - Rec(tau_{k-1})) * Prec(tau_k)` in recall order,
/// starting from recall 0. Precision of an empty selection is 1.
pub fn pxap(maps: &[AttributionMap], gts: &[&Mask], n_thresholds: usize) -> Result<f64> {
    pxap_with(maps, gts, n_thresholds, PxapMode::Pooled)
}

pub fn pxap_with(maps: &[AttributionMap], gts: &[&Mask], n_thresholds: usize, mode: PxapMode) -> Result<f64> {
    match mode {
        PxapMode::Pooled => Ok(area(&precision_recall_curve(maps, gts, n_thresholds)?)),
        PxapMode::PerImage => {
            let mut total = 0.0;
            for (m, g) in maps.iter().zip(gts) {
                total += area(&precision_recall_curve(std::slice::from_ref(m), &[g], n_thresholds)?);
            }
            check_aligned(maps, gts, n_thresholds)?;
            Ok(total / maps.len() as f64)
        }
    }
}

/// Mean IoU per threshold for `tau_k`, `k = 0..n` (the left endpoints of
/// the `n` cells of `[0, 1]`).
pub fn iou_curve(maps: &[AttributionMap], gts: &[&Mask], n_thresholds: usize) -> Result<Vec<f64>> {
    check_aligned(maps, gts, n_thresholds)?;
    let n = n_thresholds;
    if gts.iter().all(|g| g.count() == 0) {
        return Err(Error::Contract("ground truth is empty; IoU undefined".into()));
    }
    let mut sums = vec![0.0; n];
    for (m, g) in maps.iter().zip(gts) {
        let mut c = Counts::new(n);
        c.add(m, g);
        for (k, sum) in sums.iter_mut().enumerate() {
            let union = c.selected[k] + c.positives - c.hits[k];
            *sum += if union == 0 {
                1.0
            } else {
                c.hits[k] as f64 / union as f64
            };
        }
    }
    Ok(sums.into_iter().map(|s| s / maps.len() as f64).collect())
}

/// Rectangle-rule area under the mean-IoU curve over the threshold grid.
pub fn iou_auc(maps: &[AttributionMap], gts: &[&Mask], n_thresholds: usize) -> Result<f64> {
    let curve = iou_curve(maps, gts, n_thresholds)?;
    Ok(curve.iter().sum::<f64>() / curve.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_matches_direct_comparison() {
        for n in [1, 3, 7, 20] {
            for i in 0..=1000 {
                let v = i as f64 / 1000.0;
                let direct = (0..=n).filter(|&k| v >= k as f64 / n as f64).max().unwrap();
                assert_eq!(bin(v, n), direct, "v={v} n={n}");
            }
            for k in 0..=n {
                let v = k as f64 / n as f64;
                assert_eq!(bin(v, n), k);
            }
        }
    }

    #[test]
    fn perfect_map_scores_one() {
        let gt = Mask::new(2, 3, vec![true, false, false, true, true, false]).unwrap();
        let map = AttributionMap::from_mask(&gt);
        assert_eq!(pxap(std::slice::from_ref(&map), &[&gt], 20).unwrap(), 1.0);
        // tau_0 selects everything: IoU = 3/6, other 19 cells give 1
        let v = iou_auc(&[map], &[&gt], 20).unwrap();
        assert!((v - (19.0 + 0.5) / 20.0).abs() < 1e-15);
    }

    #[test]
    fn zero_map_has_zero_iou_above_zero() {
        let gt = Mask::new(2, 2, vec![true, false, false, false]).unwrap();
        let curve = iou_curve(&[AttributionMap::uniform(2, 2, 0.0)], &[&gt], 10).unwrap();
        assert_eq!(curve[0], 0.25);
        assert!(curve[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn errors() {
        let gt = Mask::empty(2, 2);
        let map = AttributionMap::uniform(2, 2, 0.3);
        assert!(pxap(std::slice::from_ref(&map), &[&gt], 20).is_err());
        assert!(iou_auc(std::slice::from_ref(&map), &[&gt], 20).is_err());
        let other = Mask::new(1, 4, vec![true; 4]).unwrap();
        assert!(matches!(
            pxap(std::slice::from_ref(&map), &[&other], 20),
            Err(Error::Dimension(_))
        ));
        assert!(pxap(&[map.clone(), map], &[&other], 20).is_err());
    }

    #[test]
    fn per_image_mode_averages() {
        let g1 = Mask::new(1, 4, vec![true, false, false, false]).unwrap();
        let g2 = Mask::new(1, 4, vec![true, true, false, false]).unwrap();
        let u = AttributionMap::uniform(1, 4, 0.5);
        let v = pxap_with(&[u.clone(), u], &[&g1, &g2], 20, PxapMode::PerImage).unwrap();
        assert!((v - (0.25 + 0.5) / 2.0).abs() < 1e-15);
    }
}
