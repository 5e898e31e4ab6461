//! Convolutional encoder with pluggable task heads, checkpoints that carry
//! provenance, and first-layer filter visualisation.

mod checkpoint;
mod encoder;
mod filters;
mod head;

use ndarray::{Array2, Array4, Axis};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, LoadReport, NamedTensor, Provenance, CHECKPOINT_VERSION};
pub use encoder::{Encoder, EncoderConfig, InitSource, StageConfig, StemConfig};
pub use filters::export_filter_grid;
pub use head::{Head, HeadKind};

use crate::data::{stack, Image};
use crate::error::{Error, Result};
use crate::nn::{join, loss, Param, Visit};
use crate::seed;

#[derive(Clone, Debug)]
pub struct Model {
    config: EncoderConfig,
    encoder: Encoder,
    head: Head,
}

/// Build a model with deterministic He initialization. When the config's
/// init source is a checkpoint, the encoder (including batch-norm statistics)
/// is restored from it and the head is kept only if its kind matches.
pub fn build_model(cfg: &EncoderConfig, head: HeadKind, seed: u64) -> Result<Model> {
    cfg.validate()?;
    head.validate()?;
    let encoder = Encoder::new(cfg, &mut seed::rng_for(seed, "encoder"));
    let head_layer = Head::new(head, cfg.feature_dim, &mut seed::rng_for(seed, "head"));
    if head_layer.input_width() != head.input_width(cfg.feature_dim) {
        return Err(Error::invalid(format!(
            "head expects {} inputs but encoder provides {}",
            head_layer.input_width(),
            head.input_width(cfg.feature_dim)
        )));
    }
    let mut model = Model {
        config: cfg.clone(),
        encoder,
        head: head_layer,
    };
    if let InitSource::Checkpoint(path) = &cfg.init {
        let ckpt = load_checkpoint(path)?;
        model.restore(&ckpt)?;
    }
    Ok(model)
}

impl Model {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn head_kind(&self) -> HeadKind {
        self.head.kind()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Swap in a freshly initialized head of another kind.
    pub fn replace_head(&mut self, kind: HeadKind, seed: u64) -> Result<()> {
        kind.validate()?;
        self.head = Head::new(kind, self.config.feature_dim, &mut seed::rng_for(seed, "head"));
        Ok(())
    }

    /// `x` is `(rows, C, H, W)`. Permutation heads expect `rows = N * cells`
    /// with the patches of each sample contiguous.
    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array2<f64> {
        let per = self.head.kind().patches_per_sample();
        assert_eq!(x.len_of(Axis(0)) % per, 0, "patch rows must be a multiple of the cell count");
        let feats = self.encoder.forward(x, train);
        let feats = if per > 1 {
            let n = feats.nrows() / per;
            let d = feats.ncols();
            feats.into_shape_with_order((n, per * d)).expect("contiguous features")
        } else {
            feats
        };
        self.head.forward(&feats, train)
    }

    pub fn backward(&mut self, dlogits: &Array2<f64>) {
        let dfeat = self.head.backward(dlogits);
        let per = self.head.kind().patches_per_sample();
        let dfeat = if per > 1 {
            let n = dfeat.nrows();
            let d = dfeat.ncols() / per;
            dfeat.into_shape_with_order((n * per, d)).expect("contiguous gradient")
        } else {
            dfeat
        };
        self.encoder.backward(&dfeat);
    }

    pub fn forward_images(&mut self, images: &[&Image], train: bool) -> Array2<f64> {
        self.forward(&stack(images), train)
    }

    /// Evaluation-mode class probabilities, computed in chunks.
    pub fn predict_proba(&mut self, images: &[&Image], batch_size: usize) -> Array2<f64> {
        let outputs = self.head.kind().outputs();
        let mut out = Array2::zeros((images.len(), outputs));
        for (ci, chunk) in images.chunks(batch_size.max(1)).enumerate() {
            let logits = self.forward_images(chunk, false);
            let p = loss::softmax(logits.view());
            let start = ci * batch_size.max(1);
            out.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&p);
        }
        out
    }

    pub fn predict(&mut self, images: &[&Image], batch_size: usize) -> Vec<usize> {
        loss::argmax_rows(self.predict_proba(images, batch_size).view())
    }

    /// Evaluation-mode per-sample cross-entropy against `labels`.
    pub fn per_sample_loss(&mut self, images: &[&Image], labels: &[usize], batch_size: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(images.len());
        for (chunk, ys) in images.chunks(batch_size.max(1)).zip(labels.chunks(batch_size.max(1))) {
            let logits = self.forward_images(chunk, false);
            out.extend(loss::per_sample_cross_entropy(logits.view(), ys));
        }
        out
    }

    /// Mark encoder parameters as frozen (excluded from optimizer updates).
    pub fn set_encoder_frozen(&mut self, frozen: bool) {
        self.encoder.visit_mut("", &mut |_, p| {
            if p.grad.len() == p.value.len() {
                p.trainable = !frozen;
            }
        });
    }

    /// Named tensors in visit order, encoder first.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| {
            out.push(NamedTensor {
                name: name.to_string(),
                shape: p.shape().to_vec(),
                data: p.value.iter().copied().collect(),
            })
        });
        out
    }

    /// SHA-256 over every tensor name, shape and value.
    pub fn parameter_hash(&self) -> String {
        let mut hasher = Sha256::new();
        self.visit("", &mut |name, p| {
            hasher.update(name.as_bytes());
            for &d in p.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for v in p.value.iter() {
                hasher.update(v.to_le_bytes());
            }
        });
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

impl Visit for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
