use serde::{Deserialize, Serialize};

use crate::ndmath::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First-order optimizer over an ordered list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one descent step: `params -= lr * direction(grads)`.
    pub fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut Tensor>, grads: &[Tensor]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.zip(grads) {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.v = self.m.clone();
                }
                self.t += 1;
                let c1 = 1.0 - BETA1.powi(self.t);
                let c2 = 1.0 - BETA2.powi(self.t);
                for (k, (p, g)) in params.zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for (i, (x, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * d;
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * d * d;
                        *x -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_is_lr_times_grad() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0]).unwrap()];
        let g = vec![Tensor::vector(vec![0.5, 4.0]).unwrap()];
        Optimizer::new(OptimizerKind::Sgd, 0.1).step(p.iter_mut(), &g);
        assert_eq!(p[0].data(), &[0.95, -2.4]);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = vec![Tensor::vector(vec![0.0, 0.0, 0.0]).unwrap()];
        let g = vec![Tensor::vector(vec![3.0, -0.01, 0.0]).unwrap()];
        Optimizer::new(OptimizerKind::Adam, 0.1).step(p.iter_mut(), &g);
        assert!((p[0].data()[0] + 0.1).abs() < 1e-8);
        assert!((p[0].data()[1] - 0.1).abs() < 1e-5);
        assert_eq!(p[0].data()[2], 0.0);
    }
}
