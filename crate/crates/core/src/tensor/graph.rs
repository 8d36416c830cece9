use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{ensure, Error, Result};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    BiasAdd {
        x: Var,
        bias: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    RowMean(Var),
    AvgPool2(Var),
    /// Flat input index of each window's maximum.
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    UpsampleNearest2(Var),
    UpsampleBilinear2(Var),
    Reshape(Var),
    MaxConst(Var, f64),
    BroadcastChannels(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation record. Not `Sync`-shared: one graph belongs to
/// one worker for its whole lifetime.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros of `like`'s shape when the loss does not
    /// depend on it.
    pub fn get_or_zeros(&self, var: Var, like: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(like))
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    ensure!(
        a.shape() == b.shape(),
        Dimension,
        "{op}: operand shapes {:?} and {:?} differ",
        a.shape(),
        b.shape()
    );
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        None => *slot = Some(delta),
    }
}

fn nchw(t: &Tensor, op: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Dimension(format!(
            "{op} expects [N, C, H, W], got {:?}",
            t.shape()
        ))),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant leaf; no gradient is ever computed for it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, w) = nchw(self.value(input), "conv2d")?;
        let (f, kc, kh, kw) = nchw(self.value(kernel), "conv2d kernel")?;
        ensure!(
            kc == c,
            Dimension,
            "conv2d: input has {c} channels, kernel expects {kc}"
        );
        ensure!(stride >= 1, Contract, "conv2d: stride must be >= 1");
        ensure!(
            kh <= h + 2 * pad && kw <= w + 2 * pad,
            Dimension,
            "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        );
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        };
        let data = kernels::conv2d_forward(self.value(input).data(), self.value(kernel).data(), &geom);
        let out = Tensor::new(vec![n, f, geom.oh, geom.ow], data)?;
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(out, Op::Conv2d { input, kernel, geom }, rg))
    }

    /// `[N, D] x [D, M] -> [N, M]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        ensure!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            Dimension,
            "matmul: {:?} x {:?}",
            sa,
            sb
        );
        let (n, d, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * m];
        kernels::gemm(
            n,
            d,
            m,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Matmul { a, b }, rg))
    }

    /// Adds `bias[c]` along axis 1 of a rank >= 2 tensor.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(bias).shape();
        ensure!(
            xs.len() >= 2 && bs.len() == 1 && bs[0] == xs[1],
            Dimension,
            "bias_add: {:?} + {:?}",
            xs,
            bs
        );
        let inner: usize = xs[2..].iter().product();
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            let bv = b[i % b.len()];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::BiasAdd { x, bias }, rg))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let out = Tensor {
            shape: src.shape().to_vec(),
            data,
        };
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    /// Elementwise `max(x, c)`; the gradient passes only where `x > c`.
    pub fn max_const(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::MaxConst(x, c), |v| if v > c { v } else { c })
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        same_shape(self.value(a), self.value(b), name)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean over every axis but the first: `[N, ...] -> [N]`.
    pub fn row_mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        ensure!(
            t.rank() >= 2,
            Dimension,
            "row_mean expects rank >= 2, got {:?}",
            t.shape()
        );
        let n = t.shape()[0];
        let d = t.len() / n;
        let data = t
            .data()
            .chunks(d)
            .map(|row| row.iter().sum::<f64>() / d as f64)
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n], data)?, Op::RowMean(x), rg))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = nchw(self.value(x), "avg_pool2")?;
        ensure!(
            h % 2 == 0 && w % 2 == 0,
            Dimension,
            "avg_pool2 needs even H, W; got {h}x{w}"
        );
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let i = 2 * oy * w + 2 * ox;
                    d[oy * ow + ox] = 0.25 * (s[i] + s[i + 1] + s[i + w] + s[i + w + 1]);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, c, oh, ow], out)?, Op::AvgPool2(x), rg))
    }

    /// 2x2 max pooling with stride 2; ties go to the first element in
    /// row-major window order.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = nchw(self.value(x), "max_pool2")?;
        ensure!(
            h % 2 == 0 && w % 2 == 0,
            Dimension,
            "max_pool2 needs even H, W; got {h}x{w}"
        );
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0; n * c * oh * ow];
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let i = p * h * w + 2 * oy * w + 2 * ox;
                    let mut best = i;
                    for j in [i + 1, i + w, i + w + 1] {
                        if src[j] > src[best] {
                            best = j;
                        }
                    }
                    let o = (p * oh + oy) * ow + ox;
                    out[o] = src[best];
                    argmax[o] = best;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, c, oh, ow], out)?, Op::MaxPool2 { x, argmax }, rg))
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = nchw(self.value(x), "upsample_nearest2")?;
        let (oh, ow) = (2 * h, 2 * w);
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    d[oy * ow + ox] = s[(oy / 2) * w + ox / 2];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, c, oh, ow], out)?, Op::UpsampleNearest2(x), rg))
    }

    pub fn upsample_bilinear2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = nchw(self.value(x), "upsample_bilinear2")?;
        let out = kernels::upsample2_bilinear(self.value(x).data(), n * c, h, w);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![n, c, 2 * h, 2 * w], out)?,
            Op::UpsampleBilinear2(x),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// `[N, 1, H, W] -> [N, C, H, W]` by repetition along the channel axis.
    pub fn broadcast_channels(&mut self, x: Var, channels: usize) -> Result<Var> {
        let (n, c, h, w) = nchw(self.value(x), "broadcast_channels")?;
        ensure!(c == 1, Dimension, "broadcast_channels expects 1 channel, got {c}");
        let src = self.value(x).data();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * channels * plane);
        for s in 0..n {
            for _ in 0..channels {
                out.extend_from_slice(&src[s * plane..(s + 1) * plane]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, channels, h, w], out)?, Op::BroadcastChannels(x), rg))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        ensure!(
            t.rank() == 2,
            Dimension,
            "softmax_cross_entropy expects [N, K], got {:?}",
            t.shape()
        );
        let (n, k) = (t.shape()[0], t.shape()[1]);
        ensure!(k >= 2, Contract, "softmax_cross_entropy needs K >= 2, got {k}");
        ensure!(targets.len() == n, Dimension, "{} targets for {n} rows", targets.len());
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for (r, (row, &y)) in t.data().chunks(k).zip(targets).enumerate() {
            if y >= k {
                return Err(Error::Index(format!("target {y} outside [0, {k})")));
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            loss += lse - row[y];
            for (j, v) in row.iter().enumerate() {
                probs[r * k + j] = (v - lse).exp();
            }
        }
        let rg = self.rg(logits);
        let op = Op::SoftmaxCrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss / n as f64), op, rg))
    }

    /// Branch taken by every non-smooth op, in recording order: ReLU and
    /// `max_const` activity per element and max-pool winners. Two graphs of
    /// the same program with equal patterns lie on one smooth piece, which is
    /// what finite-difference probes need.
    pub fn branch_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => out.extend(self.value(*x).data().iter().map(|v| usize::from(*v > 0.0))),
                Op::MaxConst(x, c) => out.extend(self.value(*x).data().iter().map(|v| usize::from(*v > *c))),
                Op::MaxPool2 { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    /// Reverse sweep from a scalar `loss`. Every node reachable backwards
    /// from `loss` that requires a gradient receives one.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        ensure!(
            lt.len() == 1,
            Contract,
            "backward from non-scalar of shape {:?}",
            lt.shape()
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.rg(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor {
                    shape: self.nodes[i].value.shape().to_vec(),
                    data,
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut send = |v: Var, delta: Vec<f64>| {
            if self.rg(v) {
                accumulate(&mut grads[v.0], delta);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, geom } => {
                let (dx, dk) =
                    kernels::conv2d_backward(val(*input), val(*kernel), g, geom, self.rg(*input), self.rg(*kernel));
                if let Some(dx) = dx {
                    send(*input, dx);
                }
                if let Some(dk) = dk {
                    send(*kernel, dk);
                }
            }
            Op::Matmul { a, b } => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (n, d, m) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    let mut da = vec![0.0; n * d];
                    kernels::gemm(n, m, d, g, false, val(*b), true, 0.0, &mut da);
                    send(*a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; d * m];
                    kernels::gemm(d, n, m, val(*a), true, g, false, 0.0, &mut db);
                    send(*b, db);
                }
            }
            Op::BiasAdd { x, bias } => {
                send(*x, g.to_vec());
                if self.rg(*bias) {
                    let shape = self.value(*x).shape();
                    let inner: usize = shape[2..].iter().product();
                    let c = shape[1];
                    let mut db = vec![0.0; c];
                    for (i, chunk) in g.chunks(inner).enumerate() {
                        db[i % c] += chunk.iter().sum::<f64>();
                    }
                    send(*bias, db);
                }
            }
            Op::Relu(x) => {
                let d = val(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                    .collect();
                send(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gi)| gi * y * (1.0 - y))
                    .collect();
                send(*x, d);
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    send(*a, g.iter().zip(val(*b)).map(|(gi, bv)| gi * bv).collect());
                }
                if self.rg(*b) {
                    send(*b, g.iter().zip(val(*a)).map(|(gi, av)| gi * av).collect());
                }
            }
            Op::Scale(x, f) => send(*x, g.iter().map(|v| v * f).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Sum(x) => send(*x, vec![g[0]; val(*x).len()]),
            Op::Mean(x) => {
                let n = val(*x).len();
                send(*x, vec![g[0] / n as f64; n]);
            }
            Op::RowMean(x) => {
                let n = g.len();
                let d = val(*x).len() / n;
                let mut dx = Vec::with_capacity(n * d);
                for gi in g {
                    dx.extend(std::iter::repeat_n(gi / d as f64, d));
                }
                send(*x, dx);
            }
            Op::AvgPool2(x) => {
                let s = self.value(*x).shape();
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                let (oh, ow) = (h / 2, w / 2);
                let mut dx = vec![0.0; planes * h * w];
                for p in 0..planes {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = 0.25 * g[(p * oh + oy) * ow + ox];
                            let i = p * h * w + 2 * oy * w + 2 * ox;
                            dx[i] = gv;
                            dx[i + 1] = gv;
                            dx[i + w] = gv;
                            dx[i + w + 1] = gv;
                        }
                    }
                }
                send(*x, dx);
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = vec![0.0; val(*x).len()];
                for (gi, &i) in g.iter().zip(argmax) {
                    dx[i] += gi;
                }
                send(*x, dx);
            }
            Op::UpsampleNearest2(x) => {
                let s = self.value(*x).shape();
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                let ow = 2 * w;
                let mut dx = vec![0.0; planes * h * w];
                for p in 0..planes {
                    for oy in 0..2 * h {
                        for ox in 0..ow {
                            dx[p * h * w + (oy / 2) * w + ox / 2] += g[(p * 2 * h + oy) * ow + ox];
                        }
                    }
                }
                send(*x, dx);
            }
            Op::UpsampleBilinear2(x) => {
                let s = self.value(*x).shape();
                send(*x, kernels::upsample2_bilinear_backward(g, s[0] * s[1], s[2], s[3]));
            }
            Op::MaxConst(x, c) => {
                let d = val(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > *c { gi } else { 0.0 })
                    .collect();
                send(*x, d);
            }
            Op::BroadcastChannels(x) => {
                let s = node.value.shape();
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                let mut dx = vec![0.0; n * plane];
                for smp in 0..n {
                    let dst = &mut dx[smp * plane..(smp + 1) * plane];
                    for ch in 0..c {
                        let src = &g[(smp * c + ch) * plane..(smp * c + ch + 1) * plane];
                        dst.iter_mut().zip(src).for_each(|(d, v)| *d += v);
                    }
                }
                send(*x, dx);
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let n = targets.len();
                let k = probs.len() / n;
                let scale = g[0] / n as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &y) in targets.iter().enumerate() {
                    d[r * k + y] -= scale;
                }
                send(*logits, d);
            }
        }
    }
}
