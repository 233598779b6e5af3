//! Four-branch contrastive training.

use std::io::Write;

use rayon::prelude::*;

use super::encoder::{EncoderParams, FreezeMode, LayerGradients};
use super::loss::{contrastive_with_grad, embed_pair, LossMode};
use crate::corpus::{ChannelMeans, Corpus, ImagePool, Splits};
use crate::error::{Error, Result};
use crate::quadruples::{sample_batch, BatchMix, Quadruple};
use crate::rng;
use crate::tensor::{NormMode, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub loss: LossMode,
    pub lr: f64,
    /// Learning rate is multiplied by this after every quarter of the run.
    pub lr_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub freeze: FreezeMode,
    pub mix: BatchMix,
    pub seed: u64,
    pub threads: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            loss: LossMode::default(),
            lr: 0.05,
            lr_decay: 0.5,
            momentum: 0.9,
            batch_size: 32,
            steps: 5000,
            freeze: FreezeMode::FcPlusLastConv,
            mix: BatchMix::default(),
            seed: 0,
            threads: 1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.mix.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let quarter = self.steps.div_ceil(4).max(1);
        self.lr * self.lr_decay.powi((step / quarter) as i32)
    }
}

/// Mean-subtracted encoder inputs for every image of a corpus.
#[derive(Debug, Clone)]
pub struct PreparedImages {
    pub means: ChannelMeans,
    images: Vec<Tensor>,
}

impl PreparedImages {
    /// Means come from `reference` only (the training pool), and are applied
    /// to every image in the corpus.
    pub fn new(corpus: &Corpus, reference: &ImagePool) -> Result<Self> {
        let means = ChannelMeans::from_pool(corpus, reference)?;
        let images = corpus
            .images()
            .iter()
            .map(|img| means.apply(&img.pixels))
            .collect::<Result<_>>()?;
        Ok(PreparedImages { means, images })
    }

    /// Inputs used as given, with zero means.
    pub fn from_tensors(images: Vec<Tensor>) -> Self {
        let channels = images.first().map_or(0, |t| t.shape()[0]);
        PreparedImages {
            means: ChannelMeans(vec![0.0; channels]),
            images,
        }
    }

    pub fn get(&self, id: crate::corpus::ImageId) -> &Tensor {
        &self.images[id.index()]
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Loss and embedding distance of one quadruple. With `grads`, adds
/// `weight * d loss / d params` for layers `first_layer..`.
pub fn quadruple_loss(
    params: &EncoderParams,
    inputs: [&Tensor; 4],
    positive: bool,
    loss: &LossMode,
    backprop: Option<(usize, f64, &mut LayerGradients)>,
) -> Result<(f64, f64)> {
    let caches = inputs
        .iter()
        .map(|x| params.forward(x))
        .collect::<Result<Vec<_>>>()?;
    let x12 = embed_pair(&caches[0].output, &caches[1].output, NormMode::Clamped)?;
    let x34 = embed_pair(&caches[2].output, &caches[3].output, NormMode::Clamped)?;
    let (value, distance, g12, g34) = contrastive_with_grad(loss, x12.vector(), x34.vector(), positive)?;
    if let Some((first_layer, weight, grads)) = backprop {
        if g12.max_abs() > 0.0 {
            let d12 = x12.backward(&g12)?.scale(weight);
            let d34 = x34.backward(&g34)?.scale(weight);
            let neg12 = d12.scale(-1.0);
            let neg34 = d34.scale(-1.0);
            for (cache, d) in caches.iter().zip([&d12, &neg12, &d34, &neg34]) {
                params.backward(cache, d, first_layer, grads)?;
            }
        }
    }
    Ok((value, distance))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// NaN when the batch has no positives.
    pub pos_dist_mean: f64,
    /// NaN when the batch has no negatives.
    pub neg_dist_mean: f64,
}

struct Partial {
    loss: f64,
    pos: (f64, usize),
    neg: (f64, usize),
    grads: LayerGradients,
}

fn accumulate_chunk(
    params: &EncoderParams,
    prepared: &PreparedImages,
    chunk: &[Quadruple],
    loss: &LossMode,
    first_layer: usize,
    weight: f64,
) -> Result<Partial> {
    let mut p = Partial {
        loss: 0.0,
        pos: (0.0, 0),
        neg: (0.0, 0),
        grads: LayerGradients::zeros(params.arch()),
    };
    for q in chunk {
        let inputs = q.images.map(|id| prepared.get(id));
        let (l, d) = quadruple_loss(params, inputs, q.positive, loss, Some((first_layer, weight, &mut p.grads)))?;
        p.loss += l;
        let slot = if q.positive { &mut p.pos } else { &mut p.neg };
        slot.0 += d;
        slot.1 += 1;
    }
    Ok(p)
}

/// Mean batch loss and its gradient for layers `first_layer..`.
///
/// With `threads > 1` the batch is cut into that many contiguous chunks
/// whose partial sums are reduced in chunk order, so results depend on the
/// thread count but never on scheduling.
pub fn batch_loss_and_grad(
    params: &EncoderParams,
    prepared: &PreparedImages,
    batch: &[Quadruple],
    loss: &LossMode,
    first_layer: usize,
    threads: usize,
) -> Result<(StepStats, LayerGradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let weight = 1.0 / batch.len() as f64;
    let partials: Vec<Partial> = if threads <= 1 {
        vec![accumulate_chunk(params, prepared, batch, loss, first_layer, weight)?]
    } else {
        let chunk = batch.len().div_ceil(threads);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| {
            batch
                .par_chunks(chunk)
                .map(|c| accumulate_chunk(params, prepared, c, loss, first_layer, weight))
                .collect::<Result<Vec<_>>>()
        })?
    };
    let mut it = partials.into_iter();
    let mut total = it.next().expect("at least one chunk");
    for p in it {
        total.loss += p.loss;
        total.pos.0 += p.pos.0;
        total.pos.1 += p.pos.1;
        total.neg.0 += p.neg.0;
        total.neg.1 += p.neg.1;
        total.grads.add_scaled(1.0, &p.grads)?;
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok((
        StepStats {
            loss: total.loss * weight,
            pos_dist_mean: mean(total.pos),
            neg_dist_mean: mean(total.neg),
        },
        total.grads,
    ))
}

/// One SGD step on the mean batch loss.
pub fn train_step(
    params: &mut EncoderParams,
    prepared: &PreparedImages,
    batch: &[Quadruple],
    hyper: &Hyperparams,
    lr: f64,
) -> Result<StepStats> {
    let first = params.first_trainable();
    let (stats, grads) = batch_loss_and_grad(params, prepared, batch, &hyper.loss, first, hyper.threads)?;
    if !stats.loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite(format!(
            "batch loss {} (pos dist {}, neg dist {}), lr {lr}, loss {}",
            stats.loss, stats.pos_dist_mean, stats.neg_dist_mean, hyper.loss
        )));
    }
    params.sgd_update(&grads, lr, hyper.momentum)?;
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub pos_dist_mean: f64,
    pub neg_dist_mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,loss,pos_dist_mean,neg_dist_mean")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.step, r.loss, r.pos_dist_mean, r.neg_dist_mean)?;
        }
        Ok(())
    }

    /// Mean of each column over rows `range`, ignoring NaN entries.
    pub fn window_means(&self, range: std::ops::Range<usize>) -> (f64, f64, f64) {
        let rows = &self.rows[range];
        let avg = |f: &dyn Fn(&LogRow) -> f64| {
            let vals: Vec<f64> = rows.iter().map(f).filter(|v| !v.is_nan()).collect();
            vals.iter().sum::<f64>() / vals.len().max(1) as f64
        };
        (avg(&|r| r.loss), avg(&|r| r.pos_dist_mean), avg(&|r| r.neg_dist_mean))
    }
}

/// Train on the training pool of `splits`. Starts from `init` when given
/// (its velocities are reset and the freeze mode re-applied), otherwise from
/// a seeded random initialization.
pub fn train(
    corpus: &Corpus,
    splits: &Splits,
    hyper: &Hyperparams,
    init: Option<EncoderParams>,
    arch: super::Architecture,
    mut progress: impl FnMut(&LogRow),
) -> Result<(EncoderParams, TrainingLog)> {
    hyper.validate()?;
    let prepared = PreparedImages::new(corpus, &splits.train)?;
    let mut params = match init {
        Some(mut p) => {
            p.zero_velocities();
            p.set_freeze(hyper.freeze);
            p
        }
        None => EncoderParams::init(arch, hyper.freeze, &mut rng::stream(hyper.seed, &[0x1A17]))?,
    };
    let mut sampler = rng::stream(hyper.seed, &[0xBA7C]);
    let mut log = TrainingLog::default();
    for step in 0..hyper.steps {
        let batch = sample_batch(&mut sampler, &splits.train, &splits.registry, hyper.batch_size, hyper.mix)?;
        let stats = train_step(&mut params, &prepared, &batch, hyper, hyper.lr_at(step))?;
        let row = LogRow {
            step,
            loss: stats.loss,
            pos_dist_mean: stats.pos_dist_mean,
            neg_dist_mean: stats.neg_dist_mean,
        };
        progress(&row);
        log.rows.push(row);
    }
    Ok((params, log))
}
