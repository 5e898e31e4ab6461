use std::f64::consts::PI;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::param::Visit;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { momentum: f64, weight_decay: f64 },
    Adam { weight_decay: f64 },
}

impl OptimizerConfig {
    pub fn sgd() -> Self {
        OptimizerConfig::Sgd {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }

    pub fn adam() -> Self {
        OptimizerConfig::Adam { weight_decay: 1e-4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    CosineAnnealing,
}

impl LrSchedule {
    /// Learning rate for a zero-based `epoch` out of `total` epochs.
    pub fn at(self, base: f64, epoch: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::CosineAnnealing => {
                let t = total.max(1) as f64;
                0.5 * base * (1.0 + (PI * epoch as f64 / t).cos())
            }
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// SGD with heavy-ball momentum or Adam, both with L2 weight decay added to
/// the gradient. State slots follow the module's trainable-param visit order.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<ArrayD<f64>>,
    second: Vec<ArrayD<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    pub fn step<M: Visit + ?Sized>(&mut self, module: &mut M, lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let config = self.config;
        let first = &mut self.first;
        let second = &mut self.second;
        let mut slot = 0;
        module.visit_mut("", &mut |_, p| {
            if !p.trainable {
                return;
            }
            if first.len() <= slot {
                first.push(ArrayD::zeros(p.value.raw_dim()));
                second.push(ArrayD::zeros(p.value.raw_dim()));
            }
            let m = &mut first[slot];
            match config {
                OptimizerConfig::Sgd { momentum, weight_decay } => {
                    ndarray::Zip::from(&mut p.value).and(&p.grad).and(m).for_each(|w, &g, v| {
                        let g = g + weight_decay * *w;
                        *v = momentum * *v + g;
                        *w -= lr * *v;
                    });
                }
                OptimizerConfig::Adam { weight_decay } => {
                    let v = &mut second[slot];
                    let bc1 = 1.0 - ADAM_BETA1.powi(t);
                    let bc2 = 1.0 - ADAM_BETA2.powi(t);
                    ndarray::Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|w, &g, m, v| {
                        let g = g + weight_decay * *w;
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let mh = *m / bc1;
                        let vh = *v / bc2;
                        *w -= lr * mh / (vh.sqrt() + ADAM_EPS);
                    });
                }
            }
            slot += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::{Param, Visit};

    struct Quadratic(Param);

    impl Visit for Quadratic {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
            f(prefix, &self.0)
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
            f(prefix, &mut self.0)
        }
    }

    fn minimize(config: OptimizerConfig, lr: f64) -> f64 {
        let mut q = Quadratic(Param::filled(&[3], 2.0));
        let mut opt = Optimizer::new(config);
        for _ in 0..500 {
            q.0.grad = q.0.value.mapv(|w| 2.0 * (w - 0.5));
            opt.step(&mut q, lr);
        }
        q.0.value[[0]]
    }

    #[test]
    fn both_optimizers_converge_on_a_quadratic() {
        let no_decay_sgd = OptimizerConfig::Sgd {
            momentum: 0.9,
            weight_decay: 0.0,
        };
        assert!((minimize(no_decay_sgd, 0.01) - 0.5).abs() < 1e-6);
        assert!((minimize(OptimizerConfig::Adam { weight_decay: 0.0 }, 0.05) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(LrSchedule::CosineAnnealing.at(0.1, 0, 10), 0.1);
        assert!((LrSchedule::CosineAnnealing.at(0.1, 5, 10) - 0.05).abs() < 1e-15);
        assert!(LrSchedule::CosineAnnealing.at(0.1, 9, 10) > 0.0);
        assert_eq!(LrSchedule::Constant.at(0.1, 9, 10), 0.1);
    }
}
