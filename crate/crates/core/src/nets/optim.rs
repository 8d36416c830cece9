use super::ModelParams;
use crate::error::{ensure, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerMode {
    /// Adaptive moments with bias correction.
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// `p -= lr * g`.
    Sgd,
}

impl Default for OptimizerMode {
    fn default() -> Self {
        OptimizerMode::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub lr: f64,
    pub mode: OptimizerMode,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Self::with_mode(lr, OptimizerMode::default())
    }

    pub fn sgd(lr: f64) -> Self {
        Self::with_mode(lr, OptimizerMode::Sgd)
    }

    pub fn with_mode(lr: f64, mode: OptimizerMode) -> Self {
        Self {
            lr,
            mode,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor]) -> Result<()> {
        ensure!(
            grads.len() == params.len(),
            Contract,
            "{} gradients for {} parameter arrays",
            grads.len(),
            params.len()
        );
        for (p, g) in params.tensors().zip(grads) {
            ensure!(
                p.shape() == g.shape(),
                Contract,
                "gradient shape {:?} does not match parameter {:?}",
                g.shape(),
                p.shape()
            );
        }
        if self.first.is_empty() {
            self.first = params.tensors().map(|t| vec![0.0; t.len()]).collect();
            self.second = self.first.clone();
        }
        self.steps += 1;
        let lr = self.lr;
        match self.mode {
            OptimizerMode::Sgd => {
                for (p, g) in params.tensors_mut().zip(grads) {
                    p.data_mut().iter_mut().zip(g.data()).for_each(|(w, d)| *w -= lr * d);
                }
            }
            OptimizerMode::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.steps as i32);
                let c2 = 1.0 - beta2.powi(self.steps as i32);
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, &d), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * d;
                        *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ModelParams {
        ModelParams::new(vec![("p".into(), Tensor::new(vec![1], vec![v]).unwrap())])
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        for mut opt in [Optimizer::adam(5e-4), Optimizer::sgd(0.1)] {
            let mut p = single(1.25);
            opt.step(&mut p, &[Tensor::zeros(&[1])]).unwrap();
            assert_eq!(p.tensors().next().unwrap().data(), &[1.25]);
            assert_eq!(opt.steps(), 1);
        }
    }

    #[test]
    fn sgd_step_is_lr_times_grad() {
        let mut p = single(1.0);
        Optimizer::sgd(0.1)
            .step(&mut p, &[Tensor::new(vec![1], vec![2.0]).unwrap()])
            .unwrap();
        assert!((p.tensors().next().unwrap().data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        for mut opt in [Optimizer::sgd(0.1), Optimizer::adam(0.05)] {
            let mut p = single(0.0);
            for _ in 0..200 {
                let x = p.tensors().next().unwrap().data()[0];
                let g = Tensor::new(vec![1], vec![2.0 * (x - 3.0)]).unwrap();
                opt.step(&mut p, &[g]).unwrap();
            }
            let x = p.tensors().next().unwrap().data()[0];
            assert!((x - 3.0).abs() < 1e-2, "{:?} ended at {x}", opt.mode);
        }
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut p = single(0.0);
        assert!(Optimizer::sgd(0.1).step(&mut p, &[]).is_err());
        assert!(Optimizer::sgd(0.1).step(&mut p, &[Tensor::zeros(&[2])]).is_err());
    }
}
