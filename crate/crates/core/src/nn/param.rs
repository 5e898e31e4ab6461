use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// A named tensor owned by a layer. Batch-norm running statistics are stored
/// as non-trainable params so checkpoints pick them up with the weights.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(value: ArrayD<f64>) -> Self {
        Param {
            value,
            grad: ArrayD::zeros(IxDyn(&[0])),
            trainable: false,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Param::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Param::new(ArrayD::from_elem(IxDyn(shape), v))
    }

    /// He (Kaiming) normal initialization with fan-in scaling.
    pub fn he_normal<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let len = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| normal.sample(rng)).collect();
        Param::new(ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/len agree"))
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, the usual dense-layer default.
    pub fn fan_in_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
        let len = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| dist.sample(rng)).collect();
        Param::new(ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/len agree"))
    }

    pub fn zero_grad(&mut self) {
        if self.trainable {
            self.grad.fill(0.0);
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
}

/// Depth-first traversal over every named tensor of a module.
pub trait Visit {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                n += p.value.len();
            }
        });
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
