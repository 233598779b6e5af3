//! Built-in verification: gradient certification, loss identities, the
//! counting formula and sampler soundness.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::index;
use rand::Rng as _;

use crate::corpus::{GridDims, HeldoutRegistry, ImageId, ImagePool, SplitSpec};
use crate::error::Result;
use crate::model::{
    batch_loss_and_grad, loss_double_margin, loss_single_margin, quadruple_loss, Architecture, EncoderParams,
    FreezeMode, LossMode, PreparedImages,
};
use crate::quadruples::{
    analogy_type_of, count_positive_analogies, is_valid_analogy, sample_negative_hard, sample_negative_random,
    sample_positive, Quadruple,
};
use crate::rng;
use crate::tensor::{
    conv2d, conv2d_backward, dense, dense_backward, grad_check, grad_check_masked, l2_normalize,
    l2_normalize_backward, maxpool2d, maxpool2d_backward, NormMode, Tensor, DEFAULT_STEP, EPS_NORM,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Check at most this many coordinates per tensor, chosen at random.
    pub max_coords: Option<usize>,
    /// Test hook: perturb the analytic gradient of this layer, as a faulty
    /// backward pass would.
    pub corrupt_layer: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: DEFAULT_STEP,
            max_coords: None,
            corrupt_layer: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorError {
    pub layer: String,
    pub bias: bool,
    pub error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a relu kink, pooling tie or
    /// hinge.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub tensors: Vec<TensorError>,
}

impl GradReport {
    pub fn worst(&self) -> Option<&TensorError> {
        self.tensors.iter().max_by(|a, b| a.error.total_cmp(&b.error))
    }

    pub fn max_error(&self) -> f64 {
        self.worst().map_or(0.0, |t| t.error)
    }
}

/// Which linear piece of the batch objective `params` sits on.
fn signature(params: &EncoderParams, prepared: &PreparedImages, batch: &[Quadruple], loss: &LossMode) -> Result<Vec<u64>> {
    let mut sig = Vec::new();
    for q in batch {
        for id in q.images {
            params.forward(prepared.get(id))?.activation_pattern(&mut sig);
        }
        let inputs = q.images.map(|id| prepared.get(id));
        let (value, d) = quadruple_loss(params, inputs, q.positive, loss, None)?;
        sig.push(u64::from(value > 0.0));
        sig.push(u64::from(d > 0.0));
    }
    Ok(sig)
}

fn batch_value(params: &EncoderParams, prepared: &PreparedImages, batch: &[Quadruple], loss: &LossMode) -> f64 {
    let mut total = 0.0;
    for q in batch {
        let inputs = q.images.map(|id| prepared.get(id));
        match quadruple_loss(params, inputs, q.positive, loss, None) {
            Ok((v, _)) => total += v,
            Err(_) => return f64::NAN,
        }
    }
    total / batch.len() as f64
}

/// Compare the analytic gradient of the mean batch loss with central
/// differences for every trainable weight and bias tensor. Coordinates
/// whose ±h perturbation changes a relu sign, a pooling winner or a hinge
/// state are skipped.
pub fn check_batch_gradient(
    params: &EncoderParams,
    prepared: &PreparedImages,
    batch: &[Quadruple],
    loss: &LossMode,
    opts: &GradCheckOptions,
) -> Result<GradReport> {
    let first = params.first_trainable();
    let (_, mut grads) = batch_loss_and_grad(params, prepared, batch, loss, first, 1)?;
    if let Some(l) = opts.corrupt_layer {
        let (w, b) = &mut grads.layers[l];
        *w = w.scale(1.5);
        w.data_mut().iter_mut().for_each(|v| *v += 1e-3);
        *b = b.scale(1.5);
    }
    let base_sig = signature(params, prepared, batch, loss)?;
    let mut pick = rng::stream(opts.seed, &[0x6C]);
    let mut tensors = Vec::new();
    for layer in first..params.layers().len() {
        for bias in [false, true] {
            let l = &params.layers()[layer];
            let point = if bias { &l.bias.value } else { &l.weight.value };
            let analytic = if bias { &grads.layers[layer].1 } else { &grads.layers[layer].0 };
            let chosen: Option<BTreeSet<usize>> = opts.max_coords.filter(|&m| m < point.len()).map(|m| {
                index::sample(&mut pick, point.len(), m).into_iter().collect()
            });
            let with = |t: &Tensor| {
                let mut q = params.clone();
                let slot = &mut q.layers_mut()[layer];
                if bias {
                    slot.bias.value = t.clone();
                } else {
                    slot.weight.value = t.clone();
                }
                q
            };
            let mut skipped = 0;
            let mut checked = 0;
            let mut included = vec![false; point.len()];
            for (i, inc) in included.iter_mut().enumerate() {
                if chosen.as_ref().is_some_and(|c| !c.contains(&i)) {
                    continue;
                }
                let mut same = true;
                for s in [opts.h, -opts.h] {
                    let mut t = point.clone();
                    t.data_mut()[i] += s;
                    same &= signature(&with(&t), prepared, batch, loss)? == base_sig;
                }
                if same {
                    *inc = true;
                    checked += 1;
                } else {
                    skipped += 1;
                }
            }
            let error = grad_check_masked(
                |t: &Tensor| batch_value(&with(t), prepared, batch, loss),
                point,
                analytic,
                opts.h,
                |i| included[i],
            )?;
            tensors.push(TensorError {
                layer: l.name.clone(),
                bias,
                error,
                checked,
                skipped,
            });
        }
    }
    Ok(GradReport { tensors })
}

/// Random encoder inputs arranged into `n` quadruples that keep both hinges
/// active: positives use four independent images, negatives repeat the
/// first pair with small noise so the two pair embeddings nearly coincide.
pub fn random_quadruples(arch: &Architecture, n: usize, seed: u64) -> (PreparedImages, Vec<Quadruple>) {
    let mut r = rng::stream(seed, &[0x9A]);
    let shape = arch.input_shape();
    let mut images = Vec::with_capacity(4 * n);
    let mut batch = Vec::with_capacity(n);
    for q in 0..n {
        let positive = q % 2 == 0;
        let a = Tensor::randn(&shape, 1.0, &mut r);
        let b = Tensor::randn(&shape, 1.0, &mut r);
        let (c, d) = if positive {
            (Tensor::randn(&shape, 1.0, &mut r), Tensor::randn(&shape, 1.0, &mut r))
        } else {
            let mut c = a.clone();
            c.axpy(1.0, &Tensor::randn(&shape, 0.05, &mut r)).expect("same shape");
            let mut d = b.clone();
            d.axpy(1.0, &Tensor::randn(&shape, 0.05, &mut r)).expect("same shape");
            (c, d)
        };
        let base = images.len() as u32;
        images.extend([a, b, c, d]);
        batch.push(Quadruple {
            images: [ImageId(base), ImageId(base + 1), ImageId(base + 2), ImageId(base + 3)],
            positive,
        });
    }
    (PreparedImages::from_tensors(images), batch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SelfCheckOptions {
    pub corrupt_layer: Option<usize>,
}

fn op_gradients() -> Result<(bool, String)> {
    let mut r = rng::stream(11, &[]);
    let mut worst: Vec<(&str, f64)> = Vec::new();

    let x = Tensor::randn(&[2, 6, 6], 1.0, &mut r);
    let k = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut r);
    let b = Tensor::randn(&[3], 1.0, &mut r);
    let probe = Tensor::randn(&[3, 6, 6], 1.0, &mut r);
    let g = conv2d_backward(&x, &k, &probe, true)?;
    let e1 = grad_check(|t: &Tensor| conv2d(t, &k, &b).unwrap().dot(&probe), &x, g.dx.as_ref().unwrap(), DEFAULT_STEP)?;
    let e2 = grad_check(|t: &Tensor| conv2d(&x, t, &b).unwrap().dot(&probe), &k, &g.dkernels, DEFAULT_STEP)?;
    worst.push(("conv2d", e1.max(e2)));

    let x = Tensor::randn(&[2, 4, 4], 1.0, &mut r);
    let probe = Tensor::randn(&[2, 2, 2], 1.0, &mut r);
    let pooled = maxpool2d(&x)?;
    let dx = maxpool2d_backward(x.shape(), &pooled, &probe)?;
    worst.push((
        "maxpool2d",
        grad_check(|t: &Tensor| maxpool2d(t).unwrap().output.dot(&probe), &x, &dx, DEFAULT_STEP)?,
    ));

    let x = Tensor::randn(&[5], 1.0, &mut r);
    let w = Tensor::randn(&[4, 5], 1.0, &mut r);
    let bias = Tensor::randn(&[4], 1.0, &mut r);
    let probe = Tensor::randn(&[4], 1.0, &mut r);
    let g = dense_backward(&x, &w, &probe, true)?;
    let e1 = grad_check(|t: &Tensor| dense(t, &w, &bias).unwrap().dot(&probe), &x, g.dx.as_ref().unwrap(), DEFAULT_STEP)?;
    let e2 = grad_check(|t: &Tensor| dense(&x, t, &bias).unwrap().dot(&probe), &w, &g.dweight, DEFAULT_STEP)?;
    worst.push(("dense", e1.max(e2)));

    let v = Tensor::randn(&[6], 1.0, &mut r);
    let probe = Tensor::randn(&[6], 1.0, &mut r);
    let n = l2_normalize(&v, NormMode::Strict, EPS_NORM)?;
    let dv = l2_normalize_backward(&n, &probe)?;
    worst.push((
        "l2_normalize",
        grad_check(
            |t: &Tensor| l2_normalize(t, NormMode::Strict, EPS_NORM).unwrap().output.dot(&probe),
            &v,
            &dv,
            DEFAULT_STEP,
        )?,
    ));
    let passed = worst.iter().all(|(_, e)| *e < 1e-6);
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Ok((passed, detail))
}

fn encoder_gradients(corrupt: Option<usize>) -> Result<(bool, String)> {
    let arch = Architecture {
        image_size: 8,
        conv1: 3,
        conv2: 4,
        hidden: 8,
        embed_dim: 6,
        ..Architecture::default()
    };
    let mut worst: Option<(f64, String)> = None;
    for seed in 0..8u64 {
        let params = EncoderParams::init(arch, FreezeMode::All, &mut rng::stream(seed, &[0x5C])).expect("valid arch");
        let (prepared, batch) = random_quadruples(&arch, 2, seed);
        for loss in [LossMode::Single { margin: 0.4 }, LossMode::default()] {
            let report = check_batch_gradient(
                &params,
                &prepared,
                &batch,
                &loss,
                &GradCheckOptions {
                    corrupt_layer: corrupt,
                    seed,
                    ..GradCheckOptions::default()
                },
            )?;
            let t = report.worst().expect("at least one tensor");
            if worst.as_ref().is_none_or(|w| t.error > w.0) {
                worst = Some((
                    t.error,
                    format!("layer {}{} ({}, seed {seed})", t.layer, if t.bias { " bias" } else { "" }, loss.name()),
                ));
            }
        }
    }
    let (err, at) = worst.expect("checked");
    Ok((err < 1e-4, format!("max relative error {err:.2e} at {at}")))
}

fn loss_identities() -> (bool, String) {
    let mut r = rng::stream(12, &[]);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let x12 = Tensor::randn(&[4], 1.0, &mut r);
        let x34 = Tensor::randn(&[4], 1.0, &mut r);
        let m: f64 = r.random_range(0.01..3.0);
        let y = r.random_bool(0.5);
        let single = loss_single_margin(&x12, &x34, y, m).expect("same shape");
        let double = loss_double_margin(&x12, &x34, y, 0.0, m).expect("valid margins");
        if single != double || single < 0.0 {
            mismatches += 1;
        }
    }
    let a = Tensor::from_vec(vec![1.0, 0.0]);
    let b = Tensor::from_vec(vec![0.8, 0.6]);
    let v1 = loss_single_margin(&a, &b, false, 1.0).expect("same shape");
    let v3 = loss_double_margin(&a, &b, true, 0.2, 0.4).expect("valid margins");
    let passed = mismatches == 0 && (v1 - 0.36754).abs() < 1e-5 && (v3 - 0.43246).abs() < 1e-5;
    (
        passed,
        format!("{mismatches} mismatches in 10000; values {v1:.5}, {v3:.5}"),
    )
}

/// Count valid label quadruples on a `categories x properties` grid by
/// checking every one.
pub fn brute_force_count(categories: usize, properties: usize) -> u64 {
    let labels: Vec<(usize, usize)> = (0..categories)
        .flat_map(|c| (0..properties).map(move |p| (c, p)))
        .collect();
    let mut n = 0;
    for &a in &labels {
        for &b in &labels {
            for &c in &labels {
                for &d in &labels {
                    n += u64::from(is_valid_analogy([a, b, c, d]));
                }
            }
        }
    }
    n
}

fn counting() -> (bool, String) {
    let mut bad = Vec::new();
    for c in 2..=5 {
        for p in 2..=5 {
            if brute_force_count(c, p) != count_positive_analogies(c as u64, p as u64) {
                bad.push((c, p));
            }
        }
    }
    if bad.is_empty() {
        (true, "formula matches enumeration for 2..=5 categories and properties".into())
    } else {
        (false, format!("formula disagrees on (categories, properties) {bad:?}"))
    }
}

fn samplers() -> Result<(bool, String)> {
    let dims = GridDims {
        categories: 6,
        properties: 4,
        exemplars: 3,
    };
    let pool = ImagePool::from_ids(dims, (0..dims.len() as u32).map(ImageId).collect());
    let registry = HeldoutRegistry::new(SplitSpec::sample(dims, 0, 5, 7)?.heldout_types);
    let mut r = rng::stream(13, &[]);
    let n = 20_000;
    let (mut bad_pos, mut leaks, mut bad_rand, mut bad_hard) = (0, 0, 0, 0);
    for _ in 0..n {
        let q = sample_positive(&mut r, &pool, &registry)?;
        let labels = q.labels(&pool);
        bad_pos += usize::from(!is_valid_analogy(labels));
        leaks += usize::from(analogy_type_of(labels).is_some_and(|t| registry.contains(&t)));
        bad_rand += usize::from(is_valid_analogy(sample_negative_random(&mut r, &pool)?.labels(&pool)));
        bad_hard += usize::from(is_valid_analogy(sample_negative_hard(&mut r, &pool, &registry)?.labels(&pool)));
    }
    Ok((
        bad_pos + leaks + bad_rand + bad_hard == 0,
        format!(
            "{n} draws each: {bad_pos} invalid positives, {leaks} held-out leaks, {bad_rand} valid random negatives, {bad_hard} valid hard negatives"
        ),
    ))
}

/// Run every check. Never panics on a failed check; failures are reported.
pub fn run_selfcheck(opts: &SelfCheckOptions) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Result<(bool, String)>| {
        let t = Instant::now();
        let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        out.push(CheckOutcome {
            name,
            passed,
            detail,
            seconds: t.elapsed().as_secs_f64(),
        });
    };
    run("layer gradients", &mut op_gradients);
    run("encoder and loss gradients", &mut || encoder_gradients(opts.corrupt_layer));
    run("loss identities", &mut || Ok(loss_identities()));
    run("analogy counting", &mut || Ok(counting()));
    run("sampler soundness", &mut samplers);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CONV2;

    #[test]
    fn fresh_build_passes() {
        let results = run_selfcheck(&SelfCheckOptions::default());
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
        assert_eq!(results.len(), 5);
    }

    #[test]
    fn corrupted_backward_fails_and_names_layer() {
        let (passed, detail) = encoder_gradients(Some(CONV2)).unwrap();
        assert!(!passed);
        assert!(detail.contains("conv2"), "{detail}");
    }

    #[test]
    fn brute_force_small_grids() {
        assert_eq!(brute_force_count(2, 2), 4);
        assert_eq!(brute_force_count(3, 2), 12);
    }

    #[test]
    fn skipped_coordinates_are_reported() {
        let arch = Architecture {
            image_size: 4,
            conv1: 2,
            conv2: 2,
            hidden: 4,
            embed_dim: 3,
            ..Architecture::default()
        };
        let params = EncoderParams::init(arch, FreezeMode::FcOnly, &mut rng::stream(1, &[])).unwrap();
        let (prepared, batch) = random_quadruples(&arch, 2, 1);
        let report = check_batch_gradient(&params, &prepared, &batch, &LossMode::default(), &GradCheckOptions::default()).unwrap();
        // only the two dense layers are trainable
        assert_eq!(report.tensors.len(), 4);
        assert!(report.tensors.iter().all(|t| t.checked + t.skipped > 0));
        assert!(report.max_error() < 1e-4);
    }
}
