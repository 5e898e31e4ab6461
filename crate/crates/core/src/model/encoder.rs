use std::path::PathBuf;

use ndarray::{Array2, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, join, relu, relu_backward, BasicBlock, BatchNorm2d, Conv2d, Linear,
    MaxPool2d, Param, Visit,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemConfig {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub max_pool: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub channels: usize,
    pub blocks: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "path", rename_all = "snake_case")]
pub enum InitSource {
    HeRandom,
    Checkpoint(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// `(height, width, channels)` of the images the encoder is built for.
    pub input_size: (usize, usize, usize),
    pub stem: StemConfig,
    pub stages: Vec<StageConfig>,
    pub feature_dim: usize,
    pub init: InitSource,
}

impl EncoderConfig {
    /// Desk-scale preset: 3x3 stem and three single-block residual stages.
    pub fn tiny(height: usize, width: usize, channels: usize) -> Self {
        EncoderConfig {
            input_size: (height, width, channels),
            stem: StemConfig {
                channels: 8,
                kernel: 3,
                stride: 1,
                max_pool: false,
            },
            stages: vec![
                StageConfig {
                    channels: 8,
                    blocks: 1,
                    stride: 1,
                },
                StageConfig {
                    channels: 16,
                    blocks: 1,
                    stride: 2,
                },
                StageConfig {
                    channels: 32,
                    blocks: 1,
                    stride: 2,
                },
            ],
            feature_dim: 32,
            init: InitSource::HeRandom,
        }
    }

    /// ResNet18 layout: 7x7/2 stem with max pooling, four stages of two
    /// basic blocks.
    pub fn resnet18_like(height: usize, width: usize, channels: usize) -> Self {
        let stage = |channels, stride| StageConfig {
            channels,
            blocks: 2,
            stride,
        };
        EncoderConfig {
            input_size: (height, width, channels),
            stem: StemConfig {
                channels: 64,
                kernel: 7,
                stride: 2,
                max_pool: true,
            },
            stages: vec![stage(64, 1), stage(128, 2), stage(256, 2), stage(512, 2)],
            feature_dim: 512,
            init: InitSource::HeRandom,
        }
    }

    pub fn preset(name: &str, height: usize, width: usize, channels: usize) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny(height, width, channels)),
            "resnet18" | "resnet18-like" | "resnet18_like" => Ok(Self::resnet18_like(height, width, channels)),
            other => Err(Error::Config(format!("unknown encoder preset `{other}` (expected tiny or resnet18-like)"))),
        }
    }

    pub fn with_feature_dim(mut self, feature_dim: usize) -> Self {
        self.feature_dim = feature_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input_size;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::invalid("encoder input size must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be positive"));
        }
        if self.stages.is_empty() {
            return Err(Error::invalid("encoder needs at least one stage"));
        }
        if self.stem.channels == 0 || self.stem.kernel == 0 || self.stem.stride == 0 {
            return Err(Error::invalid("stem channels, kernel and stride must be positive"));
        }
        if self
            .stages
            .iter()
            .any(|s| s.channels == 0 || s.blocks == 0 || s.stride == 0)
        {
            return Err(Error::invalid("stage channels, blocks and stride must be positive"));
        }
        Ok(())
    }

    pub fn last_channels(&self) -> usize {
        self.stages.last().map(|s| s.channels).unwrap_or(self.stem.channels)
    }
}

/// Convolutional feature extractor: stem, residual stages, global average
/// pooling, and a linear neck when `feature_dim` differs from the last
/// stage width.
#[derive(Clone, Debug)]
pub struct Encoder {
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    stem_pool: Option<MaxPool2d>,
    blocks: Vec<(String, BasicBlock)>,
    neck: Option<Linear>,
    stem_out: Option<Array4<f64>>,
    pooled_hw: (usize, usize),
}

impl Encoder {
    pub fn new<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let stem = &cfg.stem;
        let stem_conv = Conv2d::new(cfg.input_size.2, stem.channels, stem.kernel, stem.stride, stem.kernel / 2, rng);
        let mut blocks = Vec::new();
        let mut in_ch = stem.channels;
        for (si, stage) in cfg.stages.iter().enumerate() {
            for b in 0..stage.blocks {
                let stride = if b == 0 { stage.stride } else { 1 };
                blocks.push((format!("layer{}.{}", si + 1, b), BasicBlock::new(in_ch, stage.channels, stride, rng)));
                in_ch = stage.channels;
            }
        }
        let neck = (cfg.feature_dim != in_ch).then(|| Linear::new(in_ch, cfg.feature_dim, rng));
        Encoder {
            stem_conv,
            stem_bn: BatchNorm2d::new(stem.channels),
            stem_pool: stem.max_pool.then(|| MaxPool2d::new(3, 2, 1)),
            blocks,
            neck,
            stem_out: None,
            pooled_hw: (0, 0),
        }
    }

    pub fn first_conv(&self) -> &Conv2d {
        &self.stem_conv
    }

    /// `x` is `(N, C, H, W)`; returns `(N, feature_dim)`.
    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array2<f64> {
        let x = x.view().permuted_axes([1, 0, 2, 3]).as_standard_layout().into_owned();
        let s = relu(self.stem_bn.forward(&self.stem_conv.forward(&x, train), train));
        let mut h = match &mut self.stem_pool {
            Some(pool) => pool.forward(&s, train),
            None => s.clone(),
        };
        self.stem_out = train.then_some(s);
        for (_, block) in &mut self.blocks {
            h = block.forward(&h, train);
        }
        self.pooled_hw = (h.len_of(Axis(2)), h.len_of(Axis(3)));
        let pooled = global_avg_pool(&h);
        match &mut self.neck {
            Some(neck) => neck.forward(&pooled, train),
            None => pooled,
        }
    }

    pub fn backward(&mut self, dfeat: &Array2<f64>) -> Array4<f64> {
        let dpooled = match &mut self.neck {
            Some(neck) => neck.backward(dfeat),
            None => dfeat.clone(),
        };
        let mut d = global_avg_pool_backward(&dpooled, self.pooled_hw.0, self.pooled_hw.1);
        for (_, block) in self.blocks.iter_mut().rev() {
            d = block.backward(&d);
        }
        let stem_out = self.stem_out.take().expect("encoder backward without a training forward");
        if let Some(pool) = &mut self.stem_pool {
            d = pool.backward(&d);
        }
        let d = relu_backward(&d, &stem_out);
        let dx = self.stem_conv.backward(&self.stem_bn.backward(&d));
        dx.permuted_axes([1, 0, 2, 3]).as_standard_layout().into_owned()
    }
}

impl Visit for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.stem_conv.visit(&join(prefix, "conv1"), f);
        self.stem_bn.visit(&join(prefix, "bn1"), f);
        for (name, block) in &self.blocks {
            block.visit(&join(prefix, name), f);
        }
        if let Some(neck) = &self.neck {
            neck.visit(&join(prefix, "neck"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.stem_conv.visit_mut(&join(prefix, "conv1"), f);
        self.stem_bn.visit_mut(&join(prefix, "bn1"), f);
        for (name, block) in &mut self.blocks {
            block.visit_mut(&join(prefix, name), f);
        }
        if let Some(neck) = &mut self.neck {
            neck.visit_mut(&join(prefix, "neck"), f);
        }
    }
}
