use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use super::param::{join, Param, Visit};

/// Fully connected layer, weight stored `(out, in)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    in_features: usize,
    out_features: usize,
    input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Linear {
            weight: Param::fan_in_uniform(&[out_features, in_features], in_features, rng),
            bias: Param::fan_in_uniform(&[out_features], in_features, rng),
            in_features,
            out_features,
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    fn w(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.out_features, self.in_features), self.weight.value.as_slice().expect("weight"))
            .expect("weight shape")
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        assert_eq!(x.ncols(), self.in_features, "linear input width");
        let mut out = Array2::<f64>::zeros((x.nrows(), self.out_features));
        general_mat_mul(1.0, x, &self.w().t(), 0.0, &mut out);
        let b = ArrayView1::from(self.bias.value.as_slice().expect("bias"));
        out += &b;
        self.input = if train { Some(x.clone()) } else { None };
        out
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = self.input.take().expect("linear backward without a training forward");
        {
            let mut dw = ArrayViewMut2::from_shape(
                (self.out_features, self.in_features),
                self.weight.grad.as_slice_mut().expect("weight grad"),
            )
            .expect("grad shape");
            general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut dw);
        }
        let db = dy.sum_axis(Axis(0));
        for (g, d) in self.bias.grad.iter_mut().zip(db.iter()) {
            *g += d;
        }
        let mut dx = Array2::<f64>::zeros((dy.nrows(), self.in_features));
        general_mat_mul(1.0, dy, &self.w(), 0.0, &mut dx);
        dx
    }
}

impl Visit for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
