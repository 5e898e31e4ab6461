use ndarray::Array4;
use rand::Rng;

use super::conv::Conv2d;
use super::norm::BatchNorm2d;
use super::param::{join, Param, Visit};
use super::pool::{relu, relu_backward};

/// Residual basic block: two 3x3 conv/BN pairs plus an identity or 1x1
/// projection shortcut.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
    hidden: Option<Array4<f64>>,
    output: Option<Array4<f64>>,
}

impl BasicBlock {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, stride: usize, rng: &mut R) -> Self {
        let conv1 = Conv2d::new(in_channels, out_channels, 3, stride, 1, rng);
        let conv2 = Conv2d::new(out_channels, out_channels, 3, 1, 1, rng);
        let shortcut = (stride != 1 || in_channels != out_channels).then(|| {
            (
                Conv2d::new(in_channels, out_channels, 1, stride, 0, rng),
                BatchNorm2d::new(out_channels),
            )
        });
        BasicBlock {
            conv1,
            bn1: BatchNorm2d::new(out_channels),
            conv2,
            bn2: BatchNorm2d::new(out_channels),
            shortcut,
            hidden: None,
            output: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let h = relu(self.bn1.forward(&self.conv1.forward(x, train), train));
        let mut out = self.bn2.forward(&self.conv2.forward(&h, train), train);
        match &mut self.shortcut {
            Some((conv, bn)) => out += &bn.forward(&conv.forward(x, train), train),
            None => out += x,
        }
        let out = relu(out);
        if train {
            self.hidden = Some(h);
            self.output = Some(out.clone());
        }
        out
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let out = self.output.take().expect("block backward without a training forward");
        let hidden = self.hidden.take().expect("block backward without a training forward");
        let d = relu_backward(dy, &out);
        let dh = self.conv2.backward(&self.bn2.backward(&d));
        let dh = relu_backward(&dh, &hidden);
        let mut dx = self.conv1.backward(&self.bn1.backward(&dh));
        match &mut self.shortcut {
            Some((conv, bn)) => dx += &conv.backward(&bn.backward(&d)),
            None => dx += &d,
        }
        dx
    }
}

impl Visit for BasicBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some((conv, bn)) = &self.shortcut {
            conv.visit(&join(prefix, "downsample.0"), f);
            bn.visit(&join(prefix, "downsample.1"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
        if let Some((conv, bn)) = &mut self.shortcut {
            conv.visit_mut(&join(prefix, "downsample.0"), f);
            bn.visit_mut(&join(prefix, "downsample.1"), f);
        }
    }
}
