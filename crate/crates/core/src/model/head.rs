use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, Linear, Param, Visit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Classifier { classes: usize },
    Rotation,
    /// Consumes the concatenated features of `cells` patches.
    Permutation { permutations: usize, cells: usize },
    /// Two-layer MLP used for contrastive embeddings.
    Projection { dim: usize },
}

impl HeadKind {
    pub fn input_width(&self, feature_dim: usize) -> usize {
        match *self {
            HeadKind::Permutation { cells, .. } => cells * feature_dim,
            _ => feature_dim,
        }
    }

    pub fn outputs(&self) -> usize {
        match *self {
            HeadKind::Classifier { classes } => classes,
            HeadKind::Rotation => 4,
            HeadKind::Permutation { permutations, .. } => permutations,
            HeadKind::Projection { dim } => dim,
        }
    }

    /// Number of encoder rows consumed per head row.
    pub fn patches_per_sample(&self) -> usize {
        match *self {
            HeadKind::Permutation { cells, .. } => cells,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            HeadKind::Classifier { classes } if classes < 2 => {
                Err(Error::invalid("classifier head needs at least 2 classes"))
            }
            HeadKind::Permutation { permutations, cells } if permutations < 2 || cells < 2 => {
                Err(Error::invalid("permutation head needs at least 2 permutations and 2 cells"))
            }
            HeadKind::Projection { dim: 0 } => Err(Error::invalid("projection dim must be positive")),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::Classifier { .. } => "classifier",
            HeadKind::Rotation => "rotation",
            HeadKind::Permutation { .. } => "permutation",
            HeadKind::Projection { .. } => "projection",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Head {
    kind: HeadKind,
    fc: Linear,
    /// Second layer of the projection MLP.
    out: Option<Linear>,
    hidden: Option<Array2<f64>>,
}

impl Head {
    pub fn new<R: Rng>(kind: HeadKind, feature_dim: usize, rng: &mut R) -> Self {
        let width = kind.input_width(feature_dim);
        let (fc, out) = match kind {
            HeadKind::Projection { dim } => (Linear::new(width, width, rng), Some(Linear::new(width, dim, rng))),
            _ => (Linear::new(width, kind.outputs(), rng), None),
        };
        Head {
            kind,
            fc,
            out,
            hidden: None,
        }
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn input_width(&self) -> usize {
        self.fc.in_features()
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let h = self.fc.forward(x, train);
        match &mut self.out {
            Some(out) => {
                let h = h.mapv(|v| v.max(0.0));
                let y = out.forward(&h, train);
                self.hidden = train.then_some(h);
                y
            }
            None => h,
        }
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        match &mut self.out {
            Some(out) => {
                let hidden = self.hidden.take().expect("head backward without a training forward");
                let mut dh = out.backward(dy);
                ndarray::Zip::from(&mut dh).and(&hidden).for_each(|d, &h| {
                    if h <= 0.0 {
                        *d = 0.0;
                    }
                });
                self.fc.backward(&dh)
            }
            None => self.fc.backward(dy),
        }
    }
}

impl Visit for Head {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.fc.visit(&join(prefix, "fc"), f);
        if let Some(out) = &self.out {
            out.visit(&join(prefix, "out"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc.visit_mut(&join(prefix, "fc"), f);
        if let Some(out) = &mut self.out {
            out.visit_mut(&join(prefix, "out"), f);
        }
    }
}
