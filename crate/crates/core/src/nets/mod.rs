//! Selector, predictor and detector networks, their parameters, the
//! optimizer and the checkpoint format.

mod checkpoint;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{Optimizer, OptimizerMode};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::image::{batch_tensor, AttributionMap, Image};
use crate::tensor::{Graph, Tensor, Var};

/// Images per forward pass during inference.
pub const INFER_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    /// 3x3, stride 1, pad 1, with bias.
    Conv {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    /// 2x2 average pooling.
    Pool,
    /// 2x2 max pooling.
    MaxPool,
    /// Mean over the spatial axes, `[N, C, H, W] -> [N, C]`.
    GlobalAvgPool,
    Upsample,
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Sigmoid,
}

/// Named parameter arrays in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    entries: Vec<(String, Tensor)>,
}

impl ModelParams {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Adds every array to `g`, trainable or constant.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.input(t.clone())
                }
            })
            .collect()
    }

    /// Same names, same shapes.
    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }
}

/// Fixed per-channel standardisation `(x - mean) / std` applied to the
/// network input. Not trained and not stored in checkpoints; it is derived
/// from the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// A feed-forward stack of [`Layer`]s on `[C, H, W]` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub norm: Option<InputNorm>,
    pub input: [usize; 3],
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Conv { inputs, outputs } => {
                    out.push((format!("{i}.weight"), vec![outputs, inputs, 3, 3]));
                    out.push((format!("{i}.bias"), vec![outputs]));
                }
                Layer::Dense { inputs, outputs } => {
                    out.push((format!("{i}.weight"), vec![inputs, outputs]));
                    out.push((format!("{i}.bias"), vec![outputs]));
                }
                _ => {}
            }
        }
        out
    }

    /// He-uniform weights, `U(-sqrt(6/fan_in), +sqrt(6/fan_in))`; zero biases.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = self
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let tensor = if name.ends_with(".bias") {
                    Tensor::zeros(&shape)
                } else {
                    let fan_in: usize = if shape.len() == 4 {
                        shape[1..].iter().product()
                    } else {
                        shape[0]
                    };
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound);
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| dist.sample(&mut rng)).collect();
                    Tensor::new(shape, data).expect("shape/product agree")
                };
                (name, tensor)
            })
            .collect();
        ModelParams::new(entries)
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let shapes = self.param_shapes();
        ensure!(
            shapes.len() == params.len(),
            Dimension,
            "network expects {} parameter arrays, got {}",
            shapes.len(),
            params.len()
        );
        for ((name, shape), (pn, t)) in shapes.iter().zip(params.entries()) {
            ensure!(
                name == pn && shape.as_slice() == t.shape(),
                Dimension,
                "parameter {pn} {:?} does not match {name} {:?}",
                t.shape(),
                shape
            );
        }
        Ok(())
    }

    /// Records the forward pass for a `[N, C, H, W]` batch.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        let mut p = params.iter();
        let mut next = || {
            p.next()
                .copied()
                .ok_or_else(|| Error::Dimension("fewer parameters than layers need".into()))
        };
        if let Some(norm) = &self.norm {
            h = standardize(g, h, norm)?;
        }
        for layer in &self.layers {
            h = match *layer {
                Layer::Conv { .. } => {
                    let (w, b) = (next()?, next()?);
                    let y = g.conv2d(h, w, 1, 1)?;
                    g.bias_add(y, b)?
                }
                Layer::Dense { .. } => {
                    let (w, b) = (next()?, next()?);
                    let y = g.matmul(h, w)?;
                    g.bias_add(y, b)?
                }
                Layer::Relu => g.relu(h),
                Layer::Sigmoid => g.sigmoid(h),
                Layer::Pool => g.avg_pool2(h)?,
                Layer::MaxPool => g.max_pool2(h)?,
                Layer::Upsample => g.upsample_bilinear2(h)?,
                Layer::GlobalAvgPool => {
                    let s = g.value(h).shape().to_vec();
                    let rows = g.reshape(h, &[s[0] * s[1], s[2] * s[3]])?;
                    let means = g.row_mean(rows)?;
                    g.reshape(means, &[s[0], s[1]])?
                }
                Layer::Flatten => {
                    let s = g.value(h).shape().to_vec();
                    let d: usize = s[1..].iter().product();
                    g.reshape(h, &[s[0], d])?
                }
            };
        }
        Ok(h)
    }

    /// Forward pass without gradient bookkeeping, in bounded chunks.
    /// Returns the concatenated outputs, one row per image.
    pub fn infer(&self, params: &ModelParams, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        self.check_params(params)?;
        let mut rows = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFER_CHUNK) {
            let mut g = Graph::new();
            let vars = params.bind(&mut g, false);
            let x = g.input(batch_tensor(chunk)?);
            let y = self.forward(&mut g, &vars, x)?;
            let out = g.value(y);
            let per = out.len() / chunk.len();
            rows.extend(out.data().chunks(per).map(<[f64]>::to_vec));
        }
        Ok(rows)
    }
}

/// Per-channel affine as a 1x1 convolution with a diagonal kernel.
fn standardize(g: &mut Graph, x: Var, norm: &InputNorm) -> Result<Var> {
    let c = norm.mean.len();
    ensure!(
        norm.std.len() == c,
        Dimension,
        "norm has {} means and {} stds",
        c,
        norm.std.len()
    );
    ensure!(norm.std.iter().all(|s| *s > 0.0), Contract, "norm std must be positive");
    let mut kernel = vec![0.0; c * c];
    for i in 0..c {
        kernel[i * c + i] = 1.0 / norm.std[i];
    }
    let bias: Vec<f64> = (0..c).map(|i| -norm.mean[i] / norm.std[i]).collect();
    let k = g.input(Tensor::new(vec![c, c, 1, 1], kernel)?);
    let b = g.input(Tensor::new(vec![c], bias)?);
    let y = g.conv2d(x, k, 1, 0)?;
    g.bias_add(y, b)
}

/// Encoder-decoder producing a `1 x H x W` sigmoid map at input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorNet {
    pub net: Network,
}

impl SelectorNet {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        use Layer::*;
        let layers = vec![
            Conv {
                inputs: channels,
                outputs: 8,
            },
            Relu,
            Pool,
            Conv { inputs: 8, outputs: 16 },
            Relu,
            Pool,
            Conv {
                inputs: 16,
                outputs: 16,
            },
            Relu,
            Upsample,
            Conv { inputs: 16, outputs: 8 },
            Relu,
            Upsample,
            Conv { inputs: 8, outputs: 8 },
            Relu,
            Conv { inputs: 8, outputs: 1 },
            Sigmoid,
        ];
        Self {
            net: Network {
                norm: None,
                input: [channels, height, width],
                layers,
            },
        }
    }

    pub fn with_norm(mut self, norm: InputNorm) -> Self {
        self.net.norm = Some(norm);
        self
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        self.net.init_params(seed)
    }

    /// Map variable of shape `[N, 1, H, W]`.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        self.net.forward(g, params, x)
    }

    pub fn maps(&self, params: &ModelParams, images: &[&Image]) -> Result<Vec<AttributionMap>> {
        let [_, h, w] = self.net.input;
        self.net
            .infer(params, images)?
            .into_iter()
            .map(|v| AttributionMap::new(h, w, v))
            .collect()
    }

    pub fn map(&self, params: &ModelParams, image: &Image) -> Result<AttributionMap> {
        Ok(self.maps(params, &[image])?.remove(0))
    }

    /// Name of the final convolution's weight, e.g. for zeroing in tests.
    pub fn head_names(&self) -> (String, String) {
        let idx = self.net.layers.len() - 2;
        (format!("{idx}.weight"), format!("{idx}.bias"))
    }
}

/// Conv blocks, global average pooling, one hidden dense layer and a
/// `K`-way head.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierNet {
    pub net: Network,
    pub classes: usize,
}

impl ClassifierNet {
    pub fn new(channels: usize, height: usize, width: usize, classes: usize) -> Self {
        use Layer::*;
        let layers = vec![
            Conv {
                inputs: channels,
                outputs: 16,
            },
            Relu,
            MaxPool,
            Conv {
                inputs: 16,
                outputs: 32,
            },
            Relu,
            MaxPool,
            Conv {
                inputs: 32,
                outputs: 64,
            },
            Relu,
            GlobalAvgPool,
            Dense {
                inputs: 64,
                outputs: 64,
            },
            Relu,
            Dense {
                inputs: 64,
                outputs: classes,
            },
        ];
        Self {
            net: Network {
                norm: None,
                input: [channels, height, width],
                layers,
            },
            classes,
        }
    }

    pub fn with_norm(mut self, norm: InputNorm) -> Self {
        self.net.norm = Some(norm);
        self
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        self.net.init_params(seed)
    }

    /// Logits variable of shape `[N, K]`.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        self.net.forward(g, params, x)
    }

    pub fn logits(&self, params: &ModelParams, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        self.net.infer(params, images)
    }

    pub fn predict(&self, params: &ModelParams, images: &[&Image]) -> Result<Vec<usize>> {
        Ok(self
            .logits(params, images)?
            .iter()
            .map(|row| {
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }

    pub fn head_names(&self) -> (String, String) {
        let idx = self.net.layers.len() - 1;
        (format!("{idx}.weight"), format!("{idx}.bias"))
    }
}

/// Zeroes a named weight/bias pair in place.
pub fn zero_layer(params: &mut ModelParams, names: &(String, String)) -> Result<()> {
    for name in [&names.0, &names.1] {
        let t = params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))?;
        t.data_mut().fill(0.0);
    }
    Ok(())
}
