//! Property classifier used as the pretrained baseline encoder.

use rand::Rng as _;

use super::encoder::{Architecture, EncoderParams, FreezeMode, LayerGradients};
use super::train::PreparedImages;
use crate::corpus::{Corpus, ImageId, ImagePool};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{dense, dense_backward, sgd_update, Param, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHyper {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for ClassifierHyper {
    fn default() -> Self {
        ClassifierHyper {
            lr: 0.02,
            momentum: 0.9,
            batch_size: 32,
            steps: 1500,
            seed: 0,
        }
    }
}

impl ClassifierHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) || self.batch_size == 0 {
            return Err(Error::Config(format!("invalid classifier settings {self:?}")));
        }
        Ok(())
    }
}

/// Encoder body plus a softmax head over property ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub encoder: EncoderParams,
    head_w: Param,
    head_b: Param,
}

/// `-log softmax(logits)[label]` and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let z = logits.data();
    if label >= z.len() {
        return Err(Error::InvalidArgument(format!("label {label} out of {} classes", z.len())));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - z[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, Tensor::from_vec(grad)))
}

impl Classifier {
    /// Random encoder, zero head: every initial prediction is uniform.
    pub fn new(arch: Architecture, num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config("classifier needs at least 2 classes".into()));
        }
        let encoder = EncoderParams::init(arch, FreezeMode::All, &mut rng::stream(seed, &[0xC1A5]))?;
        Ok(Classifier {
            encoder,
            head_w: Param::new(Tensor::zeros(&[num_classes, arch.embed_dim])),
            head_b: Param::new(Tensor::zeros(&[num_classes])),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head_b.value.len()
    }

    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        dense(&self.encoder.encode(input)?, &self.head_w.value, &self.head_b.value)
    }

    pub fn predict(&self, input: &Tensor) -> Result<usize> {
        let z = self.logits(input)?;
        let mut best = 0;
        for (i, &v) in z.data().iter().enumerate() {
            if v > z.data()[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Mean cross-entropy of `(image, label)` pairs.
    pub fn mean_loss(&self, prepared: &PreparedImages, items: &[(ImageId, usize)]) -> Result<f64> {
        let mut total = 0.0;
        for &(id, label) in items {
            total += cross_entropy(&self.logits(prepared.get(id))?, label)?.0;
        }
        Ok(total / items.len().max(1) as f64)
    }

    /// One momentum-SGD step on the mean cross-entropy of `items`.
    pub fn step(&mut self, prepared: &PreparedImages, items: &[(ImageId, usize)], lr: f64, momentum: f64) -> Result<f64> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let weight = 1.0 / items.len() as f64;
        let first = self.encoder.first_trainable();
        let mut grads = LayerGradients::zeros(self.encoder.arch());
        let mut gw = Tensor::zeros(self.head_w.value.shape());
        let mut gb = Tensor::zeros(self.head_b.value.shape());
        let mut total = 0.0;
        for &(id, label) in items {
            let cache = self.encoder.forward(prepared.get(id))?;
            let logits = dense(&cache.output, &self.head_w.value, &self.head_b.value)?;
            let (loss, dz) = cross_entropy(&logits, label)?;
            total += loss;
            let g = dense_backward(&cache.output, &self.head_w.value, &dz.scale(weight), true)?;
            gw.axpy(1.0, &g.dweight)?;
            gb.axpy(1.0, &g.dbias)?;
            let dx = g.dx.expect("requested");
            self.encoder.backward(&cache, &dx, first, &mut grads)?;
        }
        let loss = total * weight;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite(format!("classifier loss {loss} at lr {lr}")));
        }
        sgd_update(&mut self.head_w, &gw, lr, momentum, false)?;
        sgd_update(&mut self.head_b, &gb, lr, momentum, false)?;
        self.encoder.sgd_update(&grads, lr, momentum)?;
        Ok(loss)
    }

    /// Drop the head; velocities reset so the body starts fresh if fine-tuned.
    pub fn into_encoder(self) -> EncoderParams {
        let mut e = self.encoder;
        e.zero_velocities();
        e
    }
}

/// Train a property classifier on `pool` with cross-entropy. Returns the
/// trained classifier and its per-step mean loss.
pub fn train_classifier(
    corpus: &Corpus,
    prepared: &PreparedImages,
    pool: &ImagePool,
    arch: Architecture,
    hyper: &ClassifierHyper,
) -> Result<(Classifier, Vec<f64>)> {
    hyper.validate()?;
    if pool.is_empty() {
        return Err(Error::InvalidArgument("empty classifier pool".into()));
    }
    let mut clf = Classifier::new(arch, corpus.dims().properties, hyper.seed)?;
    let mut r = rng::stream(hyper.seed, &[0xC1A5, 1]);
    let quarter = hyper.steps.div_ceil(4).max(1);
    let mut losses = Vec::with_capacity(hyper.steps);
    for step in 0..hyper.steps {
        let items: Vec<(ImageId, usize)> = (0..hyper.batch_size)
            .map(|_| {
                let id = pool.ids()[r.random_range(0..pool.len())];
                (id, pool.labels(id).1)
            })
            .collect();
        let lr = hyper.lr * 0.5f64.powi((step / quarter) as i32);
        losses.push(clf.step(prepared, &items, lr, hyper.momentum)?);
    }
    Ok((clf, losses))
}

/// Classifier-pretrained encoder body for the baseline condition.
pub fn pretrain_classifier(
    corpus: &Corpus,
    prepared: &PreparedImages,
    pool: &ImagePool,
    arch: Architecture,
    hyper: &ClassifierHyper,
) -> Result<EncoderParams> {
    Ok(train_classifier(corpus, prepared, pool, arch, hyper)?.0.into_encoder())
}
