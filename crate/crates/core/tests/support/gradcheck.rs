//! Central finite-difference checks of every graph primitive and of the
//! full selector/predictor/detector loss. Each check panics on failure.

use comet_core::masking::{composite_loss, fill_tensor, mask_in_out, sparsity_regularizer};
use comet_core::nets::{InputNorm, Layer, Network};
use comet_core::tensor::{Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
pub const SEEDS: u64 = 20;

type Build<'a> = dyn Fn(&mut Graph, &[Var]) -> Var + 'a;

fn loss_at(build: &Build, inputs: &[Tensor]) -> (f64, Vec<usize>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    (g.value(out).item().unwrap(), g.branch_pattern())
}

/// `||analytic - numeric|| / (||analytic|| + ||numeric||)` over all inputs,
/// or `None` when some probe leaves the smooth piece the point lies on.
fn relative_error(build: &Build, inputs: &[Tensor]) -> Option<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let pattern = g.branch_pattern();
    let grads = g.backward(out).unwrap();
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[i].shape());
        for j in 0..inputs[i].len() {
            let mut shifted = inputs.to_vec();
            shifted[i].data_mut()[j] += STEP;
            let (up, p_up) = loss_at(build, &shifted);
            shifted[i].data_mut()[j] -= 2.0 * STEP;
            let (down, p_down) = loss_at(build, &shifted);
            if p_up != pattern || p_down != pattern {
                return None;
            }
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.data()[j];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
    }
    let denom = na.sqrt() + nn.sqrt();
    assert!(denom > 1e-8, "gradient vanished; check is vacuous");
    Some(diff.sqrt() / denom)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from 0 by more than the step.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = uniform(rng, shape, 0.05, 1.0);
    t.data_mut().iter_mut().for_each(|v| {
        if rng.gen_bool(0.5) {
            *v = -*v
        }
    });
    t
}

/// Distinct values on a 0.01 grid, so every pooling window has a clear
/// maximum.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.005 * n as f64).collect();
    vals.shuffle(rng);
    Tensor::new(shape.to_vec(), vals).unwrap()
}

/// Reduces `out` to a scalar through fixed random weights so that every
/// output element carries a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let w = uniform(&mut rng, g.value(out).shape(), -1.0, 1.0);
    let w = g.input(w);
    let p = g.mul(out, w).unwrap();
    g.sum(p)
}

fn check_all(name: &str, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>, op: impl Fn(&mut Graph, &[Var]) -> Var) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = make(&mut rng);
        let build = |g: &mut Graph, v: &[Var]| {
            let out = op(g, v);
            if g.value(out).len() == 1 {
                out
            } else {
                weighted_sum(g, out, seed)
            }
        };
        let err = relative_error(&build, &inputs).unwrap_or_else(|| panic!("{name}: seed {seed} probe crossed a kink"));
        assert!(err < TOLERANCE, "{name}: seed {seed} relative error {err:e}");
    }
}

pub fn conv2d_all_geometries() {
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 3), (2, 0, 2), (1, 0, 1), (3, 2, 3)] {
        check_all(
            &format!("conv2d s{stride} p{pad} k{k}"),
            |r| {
                vec![
                    uniform(r, &[2, 2, 5, 6], -1.0, 1.0),
                    uniform(r, &[3, 2, k, k], -1.0, 1.0),
                ]
            },
            |g, v| g.conv2d(v[0], v[1], stride, pad).unwrap(),
        );
    }
}

pub fn dense_primitives() {
    check_all(
        "matmul",
        |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 5], -1.0, 1.0)],
        |g, v| g.matmul(v[0], v[1]).unwrap(),
    );
    check_all(
        "bias_add rank 2",
        |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)],
        |g, v| g.bias_add(v[0], v[1]).unwrap(),
    );
    check_all(
        "bias_add rank 4",
        |r| vec![uniform(r, &[2, 3, 2, 2], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
        |g, v| g.bias_add(v[0], v[1]).unwrap(),
    );
}

pub fn elementwise_primitives() {
    let shape = [2, 3, 4];
    check_all("relu", |r| vec![away_from_zero(r, &shape)], |g, v| g.relu(v[0]));
    check_all(
        "sigmoid",
        |r| vec![uniform(r, &shape, -4.0, 4.0)],
        |g, v| g.sigmoid(v[0]),
    );
    check_all(
        "scale",
        |r| vec![uniform(r, &shape, -1.0, 1.0)],
        |g, v| g.scale(v[0], -2.5),
    );
    check_all(
        "add_scalar",
        |r| vec![uniform(r, &shape, -1.0, 1.0)],
        |g, v| g.add_scalar(v[0], 0.7),
    );
    check_all(
        "max_const",
        |r| vec![away_from_zero(r, &shape)],
        |g, v| {
            let shifted = g.add_scalar(v[0], 0.1);
            g.max_const(shifted, 0.1)
        },
    );
    let two = |r: &mut ChaCha8Rng| vec![uniform(r, &shape, -1.0, 1.0), uniform(r, &shape, -1.0, 1.0)];
    check_all("add", two, |g, v| g.add(v[0], v[1]).unwrap());
    check_all("sub", two, |g, v| g.sub(v[0], v[1]).unwrap());
    check_all("mul", two, |g, v| g.mul(v[0], v[1]).unwrap());
    check_all(
        "mul self",
        |r| vec![uniform(r, &shape, -1.0, 1.0)],
        |g, v| g.mul(v[0], v[0]).unwrap(),
    );
}

pub fn reductions() {
    check_all("sum", |r| vec![uniform(r, &[3, 4], -1.0, 1.0)], |g, v| g.sum(v[0]));
    check_all("mean", |r| vec![uniform(r, &[3, 4], -1.0, 1.0)], |g, v| g.mean(v[0]));
    check_all(
        "row_mean",
        |r| vec![uniform(r, &[3, 2, 2], -1.0, 1.0)],
        |g, v| g.row_mean(v[0]).unwrap(),
    );
}

pub fn spatial_primitives() {
    check_all(
        "avg_pool2",
        |r| vec![uniform(r, &[2, 2, 4, 6], -1.0, 1.0)],
        |g, v| g.avg_pool2(v[0]).unwrap(),
    );
    check_all(
        "max_pool2",
        |r| vec![distinct(r, &[2, 2, 4, 6])],
        |g, v| g.max_pool2(v[0]).unwrap(),
    );
    check_all(
        "upsample_nearest2",
        |r| vec![uniform(r, &[2, 2, 3, 2], -1.0, 1.0)],
        |g, v| g.upsample_nearest2(v[0]).unwrap(),
    );
    check_all(
        "upsample_bilinear2",
        |r| vec![uniform(r, &[2, 2, 3, 4], -1.0, 1.0)],
        |g, v| g.upsample_bilinear2(v[0]).unwrap(),
    );
    check_all(
        "reshape",
        |r| vec![uniform(r, &[2, 3, 2], -1.0, 1.0)],
        |g, v| g.reshape(v[0], &[3, 4]).unwrap(),
    );
    check_all(
        "broadcast_channels",
        |r| vec![uniform(r, &[2, 1, 3, 3], -1.0, 1.0)],
        |g, v| g.broadcast_channels(v[0], 3).unwrap(),
    );
}

pub fn softmax_cross_entropy() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
        let inputs = vec![uniform(&mut rng, &[4, 5], -3.0, 3.0)];
        let build = |g: &mut Graph, v: &[Var]| g.softmax_cross_entropy(v[0], &targets).unwrap();
        let err = relative_error(&build, &inputs).unwrap();
        assert!(err < TOLERANCE, "cross-entropy seed {seed}: {err:e}");
    }
}

fn small_selector() -> Network {
    Network {
        norm: Some(InputNorm {
            mean: vec![0.4, 0.5, 0.3],
            std: vec![0.2, 0.25, 0.3],
        }),
        input: [3, 4, 4],
        layers: vec![
            Layer::Conv { inputs: 3, outputs: 2 },
            Layer::Relu,
            Layer::Pool,
            Layer::Conv { inputs: 2, outputs: 1 },
            Layer::Upsample,
            Layer::Sigmoid,
        ],
    }
}

fn small_classifier(classes: usize) -> Network {
    Network {
        norm: Some(InputNorm {
            mean: vec![0.4, 0.5, 0.3],
            std: vec![0.2, 0.25, 0.3],
        }),
        input: [3, 4, 4],
        layers: vec![
            Layer::Conv { inputs: 3, outputs: 2 },
            Layer::Relu,
            Layer::MaxPool,
            Layer::Conv { inputs: 2, outputs: 3 },
            Layer::Relu,
            Layer::GlobalAvgPool,
            Layer::Dense {
                inputs: 3,
                outputs: classes,
            },
        ],
    }
}

/// `L_P(x_in) - a L_D(x_out) + b R` through real networks, differentiated
/// with respect to selector, predictor and detector parameters at once.
/// Points whose probes would cross a ReLU or max-pool kink are redrawn;
/// 20 accepted points must pass.
pub fn full_composite_loss() {
    let classes = 3;
    let selector = small_selector();
    let classifier = small_classifier(classes);
    let fill = [0.4, 0.5, 0.3];
    let (mut accepted, mut drawn) = (0, 0u64);
    while accepted < SEEDS {
        assert!(drawn < 50 * SEEDS, "only {accepted} smooth points in {drawn} draws");
        let seed = drawn;
        drawn += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = uniform(&mut rng, &[2, 3, 4, 4], 0.0, 1.0);
        let labels: Vec<usize> = (0..2).map(|_| rng.gen_range(0..classes)).collect();
        let mut inputs: Vec<Tensor> = Vec::new();
        let mut counts = Vec::new();
        for (net, s) in [(&selector, 1), (&classifier, 2), (&classifier, 3)] {
            let mut params = net.init_params(seed * 10 + s);
            for t in params.tensors_mut() {
                if t.rank() == 1 {
                    t.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
                }
            }
            counts.push(params.len());
            inputs.extend(params.tensors().cloned());
        }
        let (ns, np) = (counts[0], counts[1]);
        let build = |g: &mut Graph, v: &[Var]| {
            let xv = g.input(x.clone());
            let q = g.input(fill_tensor(2, &fill, 4, 4));
            let map = selector.forward(g, &v[..ns], xv).unwrap();
            let (x_in, x_out) = mask_in_out(g, xv, map, q).unwrap();
            let pred = classifier.forward(g, &v[ns..ns + np], x_in).unwrap();
            let l_p = g.softmax_cross_entropy(pred, &labels).unwrap();
            let det = classifier.forward(g, &v[ns + np..], x_out).unwrap();
            let l_d = g.softmax_cross_entropy(det, &labels).unwrap();
            let reg = sparsity_regularizer(g, map, 0.1).unwrap();
            composite_loss(g, l_p, Some(l_d), reg, 5.0, 100.0).unwrap()
        };
        if let Some(err) = relative_error(&build, &inputs) {
            assert!(err < TOLERANCE, "composite seed {seed}: relative error {err:e}");
            accepted += 1;
        }
    }
}

/// Every check, by name.
pub const ALL: [(&str, fn()); 7] = [
    ("conv2d", conv2d_all_geometries),
    ("dense", dense_primitives),
    ("elementwise", elementwise_primitives),
    ("reductions", reductions),
    ("spatial", spatial_primitives),
    ("cross-entropy", softmax_cross_entropy),
    ("composite loss", full_composite_loss),
];
