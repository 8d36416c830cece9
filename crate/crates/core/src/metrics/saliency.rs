use crate::error::{ensure, Result};
use crate::image::{batch_tensor, AttributionMap, Image};
use crate::nets::{ClassifierNet, ModelParams, INFER_CHUNK};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Saliency {
    pub map: AttributionMap,
    /// The gradient was identically zero, so the map carries no signal.
    pub degenerate: bool,
}

/// `|d logit_y / dx|`, max over channels, min-max normalised per image.
pub fn input_gradient_saliency(
    net: &ClassifierNet,
    params: &ModelParams,
    image: &Image,
    label: usize,
) -> Result<Saliency> {
    Ok(input_gradient_saliency_batch(net, params, &[image], &[label])?.remove(0))
}

/// Raw input gradients of the target logits, `[N, C, H, W]` flattened per image.
pub(crate) fn logit_input_gradients(
    net: &ClassifierNet,
    params: &ModelParams,
    images: &[&Image],
    labels: &[usize],
) -> Result<Vec<Vec<f64>>> {
    ensure!(
        images.len() == labels.len(),
        Dimension,
        "{} labels for {} images",
        labels.len(),
        images.len()
    );
    let mut out = Vec::with_capacity(images.len());
    for (chunk, ys) in images.chunks(INFER_CHUNK).zip(labels.chunks(INFER_CHUNK)) {
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let x = g.param(batch_tensor(chunk)?);
        let logits = net.forward(&mut g, &vars, x)?;
        let k = net.classes;
        let mut onehot = vec![0.0; chunk.len() * k];
        for (i, &y) in ys.iter().enumerate() {
            ensure!(y < k, Index, "label {y} outside [0, {k})");
            onehot[i * k + y] = 1.0;
        }
        let sel = g.input(Tensor::new(vec![chunk.len(), k], onehot)?);
        let picked = g.mul(logits, sel)?;
        let total = g.sum(picked);
        let grads = g.backward(total)?;
        let gx = grads.get_or_zeros(x, g.value(x).shape());
        let per = gx.len() / chunk.len();
        out.extend(gx.data().chunks(per).map(<[f64]>::to_vec));
    }
    Ok(out)
}

pub fn input_gradient_saliency_batch(
    net: &ClassifierNet,
    params: &ModelParams,
    images: &[&Image],
    labels: &[usize],
) -> Result<Vec<Saliency>> {
    let grads = logit_input_gradients(net, params, images, labels)?;
    Ok(grads
        .iter()
        .zip(images)
        .map(|(gr, img)| {
            let plane = img.plane();
            let raw: Vec<f64> = (0..plane)
                .map(|i| (0..img.channels).map(|c| gr[c * plane + i].abs()).fold(0.0, f64::max))
                .collect();
            let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let degenerate = hi <= lo;
            let values = if degenerate {
                vec![0.0; plane]
            } else {
                raw.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
            };
            Saliency {
                map: AttributionMap {
                    height: img.height,
                    width: img.width,
                    values,
                },
                degenerate,
            }
        })
        .collect())
}
