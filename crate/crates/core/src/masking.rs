//! Soft masking with the dataset-mean fill and the loss terms built on it.
//!
//! Masked-in: `x_s = m * x + (1 - m) * q`, masked-out:
//! `x_out = (1 - m) * x + m * q`, with the map `m` shared across channels and
//! `q` the per-channel mean pixel. The composite objective minimised by the
//! selector and predictor is `L_P(x_s) - a * L_D(x_out) + b * R(m)` with
//! `R(m) = max(mean(m) - t, 0)` taken per image and averaged over the batch.

use crate::error::{ensure, Result};
use crate::image::{AttributionMap, Image};
use crate::nets::ClassifierNet;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair {
    pub masked_in: Image,
    pub masked_out: Image,
    pub map: AttributionMap,
    pub fill: Vec<f64>,
}

pub fn make_masks(x: &Image, map: &AttributionMap, fill: &[f64]) -> Result<MaskPair> {
    ensure!(
        map.height == x.height && map.width == x.width,
        Dimension,
        "map {}x{} vs image {}x{}",
        map.height,
        map.width,
        x.height,
        x.width
    );
    ensure!(
        fill.len() == x.channels,
        Dimension,
        "fill has {} channels, image {}",
        fill.len(),
        x.channels
    );
    ensure!(
        map.values.iter().all(|v| (0.0..=1.0).contains(v)),
        Contract,
        "map values must lie in [0, 1]"
    );
    let plane = x.plane();
    let mut masked_in = x.clone();
    let mut masked_out = x.clone();
    for (c, &q) in fill.iter().enumerate() {
        for (i, &m) in map.values.iter().enumerate() {
            let v = x.data[c * plane + i];
            masked_in.data[c * plane + i] = m * v + (1.0 - m) * q;
            masked_out.data[c * plane + i] = (1.0 - m) * v + m * q;
        }
    }
    Ok(MaskPair {
        masked_in,
        masked_out,
        map: map.clone(),
        fill: fill.to_vec(),
    })
}

/// `[N, C, H, W]` tensor filled with the per-channel value `fill`.
pub fn fill_tensor(n: usize, fill: &[f64], height: usize, width: usize) -> Tensor {
    let img = Image::constant(height, width, fill);
    let mut data = Vec::with_capacity(n * img.data.len());
    for _ in 0..n {
        data.extend_from_slice(&img.data);
    }
    Tensor::new(vec![n, fill.len(), height, width], data).expect("consistent fill shape")
}

/// Graph form of [`make_masks`]: `map` is `[N, 1, H, W]`, `x` and `fill`
/// are `[N, C, H, W]`. Returns `(masked_in, masked_out)`.
pub fn mask_in_out(g: &mut Graph, x: Var, map: Var, fill: Var) -> Result<(Var, Var)> {
    let channels = g.value(x).shape()[1];
    let m = g.broadcast_channels(map, channels)?;
    let neg = g.scale(m, -1.0);
    let inv = g.add_scalar(neg, 1.0);
    let a = g.mul(m, x)?;
    let b = g.mul(inv, fill)?;
    let masked_in = g.add(a, b)?;
    let c = g.mul(inv, x)?;
    let d = g.mul(m, fill)?;
    let masked_out = g.add(c, d)?;
    Ok((masked_in, masked_out))
}

/// Cross-entropy of `net` on `images` against `labels`.
pub fn classifier_loss(
    g: &mut Graph,
    net: &ClassifierNet,
    params: &[Var],
    images: Var,
    labels: &[usize],
) -> Result<Var> {
    let logits = net.forward(g, params, images)?;
    g.softmax_cross_entropy(logits, labels)
}

/// Predictor term on the masked-in batch.
pub fn predictor_loss(
    g: &mut Graph,
    predictor: &ClassifierNet,
    params: &[Var],
    masked_in: Var,
    labels: &[usize],
) -> Result<Var> {
    classifier_loss(g, predictor, params, masked_in, labels)
}

/// Detector term on the masked-out batch.
pub fn detector_loss(
    g: &mut Graph,
    detector: &ClassifierNet,
    params: &[Var],
    masked_out: Var,
    labels: &[usize],
) -> Result<Var> {
    classifier_loss(g, detector, params, masked_out, labels)
}

/// `mean_n max(mean_hw(map_n) - t, 0)` for a `[N, 1, H, W]` map.
pub fn sparsity_regularizer(g: &mut Graph, map: Var, t: f64) -> Result<Var> {
    ensure!((0.0..=1.0).contains(&t), Contract, "threshold t = {t} outside [0, 1]");
    let per_image = g.row_mean(map)?;
    let shifted = g.add_scalar(per_image, -t);
    let hinge = g.max_const(shifted, 0.0);
    Ok(g.mean(hinge))
}

/// Plain-value regularizer for one map.
pub fn sparsity_value(map: &AttributionMap, t: f64) -> f64 {
    (map.mean() - t).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub predictor: f64,
    pub detector_out: f64,
    pub regularizer: f64,
    /// `predictor - a * detector_out`.
    pub selector: f64,
    /// `selector + b * regularizer`.
    pub total: f64,
    pub a: f64,
    pub b: f64,
    pub t: f64,
}

pub fn selector_loss(
    predictor: f64,
    detector_out: f64,
    regularizer: f64,
    a: f64,
    b: f64,
    t: f64,
) -> Result<LossBreakdown> {
    ensure!(
        a >= 0.0 && b >= 0.0,
        Contract,
        "coefficients must be non-negative (a = {a}, b = {b})"
    );
    let selector = predictor - a * detector_out;
    Ok(LossBreakdown {
        predictor,
        detector_out,
        regularizer,
        selector,
        total: selector + b * regularizer,
        a,
        b,
        t,
    })
}

/// Graph form of the composite objective. `detector_out` may be absent when
/// `a == 0`.
pub fn composite_loss(
    g: &mut Graph,
    predictor: Var,
    detector_out: Option<Var>,
    regularizer: Var,
    a: f64,
    b: f64,
) -> Result<Var> {
    let mut total = predictor;
    if let Some(d) = detector_out {
        let scaled = g.scale(d, -a);
        total = g.add(total, scaled)?;
    }
    let r = g.scale(regularizer, b);
    g.add(total, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f64) -> Image {
        Image::new(3, 2, 2, vec![v; 12]).unwrap()
    }

    #[test]
    fn full_and_empty_selection() {
        let x = Image::new(3, 2, 2, (0..12).map(|i| i as f64 / 16.0).collect()).unwrap();
        let q = [0.25, 0.5, 0.75];
        let full = make_masks(&x, &AttributionMap::uniform(2, 2, 1.0), &q).unwrap();
        assert_eq!(full.masked_in, x);
        assert_eq!(full.masked_out, Image::constant(2, 2, &q));
        let none = make_masks(&x, &AttributionMap::uniform(2, 2, 0.0), &q).unwrap();
        assert_eq!(none.masked_in, Image::constant(2, 2, &q));
        assert_eq!(none.masked_out, x);
    }

    #[test]
    fn midpoint_map_averages() {
        let pair = make_masks(&img(0.8), &AttributionMap::uniform(2, 2, 0.5), &[0.2; 3]).unwrap();
        for v in pair.masked_in.data.iter().chain(&pair.masked_out.data) {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_map_is_rejected() {
        let bad = AttributionMap {
            height: 2,
            width: 2,
            values: vec![0.5, 1.5, 0.0, 0.0],
        };
        assert!(make_masks(&img(0.1), &bad, &[0.0; 3]).is_err());
        let small = AttributionMap::uniform(1, 2, 0.5);
        assert!(make_masks(&img(0.1), &small, &[0.0; 3]).is_err());
    }

    #[test]
    fn graph_masks_match_plain_masks() {
        let x = Image::new(3, 2, 2, (0..12).map(|i| (i as f64 * 0.37).sin().abs()).collect()).unwrap();
        let map = AttributionMap::new(2, 2, vec![0.1, 0.9, 0.3, 0.6]).unwrap();
        let q = [0.4, 0.45, 0.5];
        let plain = make_masks(&x, &map, &q).unwrap();
        let mut g = Graph::new();
        let xv = g.input(Tensor::new(vec![1, 3, 2, 2], x.data.clone()).unwrap());
        let mv = g.input(Tensor::new(vec![1, 1, 2, 2], map.values.clone()).unwrap());
        let qv = g.input(fill_tensor(1, &q, 2, 2));
        let (xs, xo) = mask_in_out(&mut g, xv, mv, qv).unwrap();
        assert_eq!(g.value(xs).data(), plain.masked_in.data.as_slice());
        assert_eq!(g.value(xo).data(), plain.masked_out.data.as_slice());
    }

    fn reg(mean: f64, t: f64) -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let m = g.param(Tensor::full(&[2, 1, 2, 2], mean));
        let r = sparsity_regularizer(&mut g, m, t).unwrap();
        let grads = g.backward(r).unwrap();
        let gm = grads.get_or_zeros(m, &[2, 1, 2, 2]).into_data();
        (g.value(r).item().unwrap(), gm)
    }

    #[test]
    fn regularizer_values_and_subgradient() {
        let (v, gr) = reg(0.05, 0.1);
        assert_eq!(v, 0.0);
        assert!(gr.iter().all(|x| *x == 0.0));
        let (v, gr) = reg(0.30, 0.1);
        assert!((v - 0.20).abs() < 1e-12);
        // d/dm of mean over 2 images of per-image mean over 4 pixels
        assert!(gr.iter().all(|x| (*x - 1.0 / 8.0).abs() < 1e-15));
        let (v, gr) = reg(0.25, 0.25);
        assert_eq!(v, 0.0);
        assert!(gr.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn selector_loss_arithmetic() {
        let l = selector_loss(0.2, 0.5, 0.0, 5.0, 100.0, 0.1).unwrap();
        assert!((l.selector + 2.3).abs() < 1e-12 && (l.total + 2.3).abs() < 1e-12);
        let l = selector_loss(0.7, 0.5, 0.3, 0.0, 0.0, 0.1).unwrap();
        assert_eq!(l.total, 0.7);
        let l = selector_loss(2.4849, 2.4849, 0.2, 5.0, 100.0, 0.1).unwrap();
        assert!((l.total - 10.0604).abs() < 1e-9);
        assert!(selector_loss(1.0, 1.0, 0.0, -1.0, 0.0, 0.1).is_err());
    }
}
