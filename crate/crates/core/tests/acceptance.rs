//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test -p analogy-core --test acceptance -- 1 2 5`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use analogy_core::config::RunConfig;
use analogy_core::corpus::{
    generate_corpus, load_corpus, make_splits, save_corpus, Corpus, CorpusSpec, ImageId, SplitSpec, Splits,
};
use analogy_core::model::{
    checkpoint_from_bytes, checkpoint_to_bytes, embed_pair, load_checkpoint, loss_double_margin, loss_single_margin,
    pretrain_classifier, save_checkpoint, train, Architecture, ClassifierHyper, EncoderParams, FreezeMode,
    Hyperparams, LossMode, PreparedImages,
};
use analogy_core::quadruples::{
    analogy_type_of, count_positive_analogies, is_valid_analogy, sample_negative_hard, sample_negative_random,
    sample_positive,
};
use analogy_core::retrieval::{
    build_questions, chance_recall, chance_recall_approx, evaluate, question_stream, AnalogyQuestion, FeatureBank,
    QuestionSpec, RandomScorer, Regime, UnseenMode,
};
use analogy_core::rng;
use analogy_core::selfcheck::{brute_force_count, check_batch_gradient, random_quadruples, GradCheckOptions};
use analogy_core::tensor::NormMode;
use analogy_core::{Error, Result, Tensor};
use rand::Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
const N_DISTRACTORS: usize = 100;
const K: usize = 10;

type Outcome = Result<(bool, String)>;

fn desk() -> Result<(RunConfig, Corpus, Splits)> {
    let cfg = RunConfig::default();
    let corpus = generate_corpus(&cfg.corpus_spec())?;
    let splits = make_splits(&corpus, &cfg.split_spec(corpus.dims())?)?;
    Ok((cfg, corpus, splits))
}

fn c1_gradients() -> Outcome {
    let arch = Architecture::default();
    let mut worst = (0.0f64, String::new());
    let (mut checked, mut skipped, mut quads) = (0, 0, 0);
    for seed in 0..4u64 {
        let params = EncoderParams::init(arch, FreezeMode::All, &mut rng::stream(seed, &[0xACC]))?;
        let (prepared, batch) = random_quadruples(&arch, 5, seed);
        quads += batch.len();
        for loss in [LossMode::Single { margin: 0.4 }, LossMode::default()] {
            let report = check_batch_gradient(
                &params,
                &prepared,
                &batch,
                &loss,
                &GradCheckOptions {
                    max_coords: Some(6),
                    seed,
                    ..GradCheckOptions::default()
                },
            )?;
            for t in &report.tensors {
                checked += t.checked;
                skipped += t.skipped;
                if t.error > worst.0 {
                    worst = (
                        t.error,
                        format!("{}{} ({}, seed {seed})", t.layer, if t.bias { " bias" } else { "" }, loss.name()),
                    );
                }
            }
        }
    }
    Ok((
        worst.0 < 1e-4 && quads >= 20 && checked > 0,
        format!(
            "{quads} quadruples x 2 losses, {checked} coordinates checked ({skipped} at kinks skipped), max relative error {:.2e} at {}",
            worst.0, worst.1
        ),
    ))
}

fn c2_loss_identities() -> Outcome {
    let mut r = rng::stream(2, &[0xACC]);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let dim = r.random_range(1..16);
        let x12 = Tensor::randn(&[dim], 1.0, &mut r);
        let x34 = Tensor::randn(&[dim], 1.0, &mut r);
        let mn: f64 = r.random_range(0.0..2.5);
        let y = r.random_bool(0.5);
        let single = loss_single_margin(&x12, &x34, y, mn)?;
        let double = loss_double_margin(&x12, &x34, y, 0.0, mn)?;
        if single.to_bits() != double.to_bits() {
            mismatches += 1;
        }
    }
    // T12 = (1, 0), T34 = (0.8, 0.6): distance sqrt(0.4)
    let t12 = Tensor::from_vec(vec![1.0, 0.0]);
    let t34 = Tensor::from_vec(vec![0.8, 0.6]);
    let single = loss_single_margin(&t12, &t34, false, 1.0)?;
    let double = loss_double_margin(&t12, &t34, true, 0.2, 0.4)?;
    let oracle_single = 1.0 - 0.4f64.sqrt();
    let oracle_double = 0.4f64.sqrt() - 0.2;
    let passed = mismatches == 0
        && (single - 0.36754).abs() < 1e-5
        && (double - 0.43246).abs() < 1e-5
        && (single - oracle_single).abs() < 1e-15
        && (double - oracle_double).abs() < 1e-15;
    Ok((
        passed,
        format!("{mismatches}/10000 mismatches; single {single:.5} (expect 0.36754), double {double:.5} (expect 0.43246)"),
    ))
}

fn c3_counting() -> Outcome {
    let stated = 999_240u64;
    let got = count_positive_analogies(1000, 16);
    let mut disagree = Vec::new();
    for c in 1..=8 {
        for p in 1..=8 {
            if brute_force_count(c, p) != count_positive_analogies(c as u64, p as u64) {
                disagree.push((c, p));
            }
        }
    }
    let detail = format!(
        "count(1000, 16) = {got}, required {stated}; brute force agrees for all grids up to 8x8: {}",
        if disagree.is_empty() { "yes".to_string() } else { format!("no, {disagree:?}") }
    );
    Ok((got == stated && disagree.is_empty(), detail))
}

fn c4_samplers() -> Outcome {
    let (_, _, splits) = desk()?;
    let pool = &splits.train;
    let reg = &splits.registry;
    let mut r = rng::stream(4, &[0xACC]);
    let n = 100_000;
    let (mut bad_pos, mut leaks, mut bad_rand, mut bad_hard) = (0, 0, 0, 0);
    for _ in 0..n {
        let labels = sample_positive(&mut r, pool, reg)?.labels(pool);
        bad_pos += usize::from(!is_valid_analogy(labels));
        leaks += usize::from(analogy_type_of(labels).is_some_and(|t| reg.contains(&t)));
        bad_rand += usize::from(is_valid_analogy(sample_negative_random(&mut r, pool)?.labels(pool)));
        bad_hard += usize::from(is_valid_analogy(sample_negative_hard(&mut r, pool, reg)?.labels(pool)));
    }
    Ok((
        bad_pos + leaks + bad_rand + bad_hard == 0,
        format!(
            "{n} draws each: {bad_pos} invalid positives, {leaks} held-out leaks ({} held-out types), {bad_rand} valid random negatives, {bad_hard} valid hard negatives",
            reg.len()
        ),
    ))
}

fn c5_chance() -> Outcome {
    // one exemplar per cell, so every question has exactly one correct answer
    let corpus = generate_corpus(&CorpusSpec {
        num_categories: 12,
        num_properties: 10,
        exemplars_per_cell: 1,
        image_size: 8,
        ..CorpusSpec::default()
    })?;
    let splits = make_splits(&corpus, &SplitSpec::sample(corpus.dims(), 2, 6, 0)?)?;
    let n_questions = 10_000;
    let spec = QuestionSpec {
        regime: Regime::Seen,
        unseen_mode: UnseenMode::Both,
        n_questions,
        distractor_size: N_DISTRACTORS,
    };
    let qs = build_questions(&mut rng::stream(5, &[0xACC]), &splits, &spec)?;
    if qs.iter().any(|q| q.positives.len() != 1) {
        return Ok((false, "questions with more than one correct answer".into()));
    }
    let ks = [1, 5, 10];
    let ev = evaluate(&RandomScorer { seed: 5 }, &qs, &ks, 1)?;
    let mut passed = true;
    let mut parts = Vec::new();
    for (&k, &got) in ks.iter().zip(&ev.curve.recall) {
        let p = k as f64 / (N_DISTRACTORS + 1) as f64;
        let se = (p * (1.0 - p) / n_questions as f64).sqrt();
        let z = (got - p) / se;
        passed &= z.abs() <= 3.0 && (chance_recall(N_DISTRACTORS, 1, k) - p).abs() < 1e-12;
        parts.push(format!(
            "recall@{k} {got:.4} vs k/(n+1) {p:.4} (z {z:+.2}; k/n {:.4})",
            chance_recall_approx(N_DISTRACTORS, k)
        ));
    }
    Ok((passed, parts.join(", ")))
}

/// Recall@10 on both regimes for every model of one seed.
struct SeedRun {
    seed: u64,
    double: [f64; 2],
    single: [f64; 2],
    random_init: [f64; 2],
    classifier: [f64; 2],
    double_bank: FeatureBank,
    questions: Vec<AnalogyQuestion>,
}

fn recall_pair(bank: &FeatureBank, sets: &[Vec<AnalogyQuestion>; 2]) -> Result<[f64; 2]> {
    let mut out = [0.0; 2];
    for (o, qs) in out.iter_mut().zip(sets) {
        *o = evaluate(bank, qs, &[K], 1)?.curve.recall[0];
    }
    Ok(out)
}

fn learning_runs() -> Result<Vec<SeedRun>> {
    let (cfg, corpus, splits) = desk()?;
    let arch = cfg.architecture();
    let prepared = PreparedImages::new(&corpus, &splits.train)?;
    let mut runs = Vec::new();
    for seed in SEEDS {
        let t = Instant::now();
        let sets = [Regime::Seen, Regime::Unseen].map(|regime| {
            build_questions(
                &mut question_stream(seed, regime, N_DISTRACTORS),
                &splits,
                &cfg.question_spec(regime, N_DISTRACTORS),
            )
        });
        let [seen, unseen] = sets;
        let sets = [seen?, unseen?];
        let bank = |p: &EncoderParams| FeatureBank::new(p, &prepared, 1);
        let double_hyper = Hyperparams {
            seed,
            ..cfg.hyperparams()
        };
        let single_hyper = Hyperparams {
            loss: LossMode::Single { margin: cfg.m },
            ..double_hyper.clone()
        };
        let init_hyper = Hyperparams {
            steps: 0,
            ..double_hyper.clone()
        };
        let (double_params, _) = train(&corpus, &splits, &double_hyper, None, arch, |_| {})?;
        let double_bank = bank(&double_params)?;
        let double = recall_pair(&double_bank, &sets)?;
        let (single_params, _) = train(&corpus, &splits, &single_hyper, None, arch, |_| {})?;
        let single = recall_pair(&bank(&single_params)?, &sets)?;
        let (init_params, _) = train(&corpus, &splits, &init_hyper, None, arch, |_| {})?;
        let random_init = recall_pair(&bank(&init_params)?, &sets)?;
        let clf = pretrain_classifier(
            &corpus,
            &prepared,
            &splits.train,
            arch,
            &ClassifierHyper {
                seed,
                ..cfg.classifier_hyper()
            },
        )?;
        let classifier = recall_pair(&bank(&clf)?, &sets)?;
        eprintln!(
            "  seed {seed} ({:.0}s): recall@{K} seen/unseen: double {:.3}/{:.3}, single {:.3}/{:.3}, random init {:.3}/{:.3}, classifier {:.3}/{:.3}",
            t.elapsed().as_secs_f64(),
            double[0],
            double[1],
            single[0],
            single[1],
            random_init[0],
            random_init[1],
            classifier[0],
            classifier[1]
        );
        let [seen, _] = sets;
        runs.push(SeedRun {
            seed,
            double,
            single,
            random_init,
            classifier,
            double_bank,
            questions: seen,
        });
    }
    Ok(runs)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn c6_beats_baselines(runs: &[SeedRun]) -> Outcome {
    let double = mean(runs.iter().map(|r| r.double[0]));
    let init = mean(runs.iter().map(|r| r.random_init[0]));
    let clf = mean(runs.iter().map(|r| r.classifier[0]));
    let chance = chance_recall_approx(N_DISTRACTORS, K);
    let exact = chance_recall(N_DISTRACTORS, runs[0].questions[0].positives.len(), K);
    Ok((
        double >= 3.0 * chance && double > init && double > clf,
        format!(
            "seen recall@{K}, mean of {} seeds: double margin {double:.4}, random-init encoder {init:.4}, classifier {clf:.4}; 3 x chance (k/n) = {:.2}; exact chance with {} correct answers {exact:.4}",
            runs.len(),
            3.0 * chance,
            runs[0].questions[0].positives.len()
        ),
    ))
}

fn c7_double_vs_single(runs: &[SeedRun]) -> Outcome {
    let n = runs.len() as f64;
    let d: Vec<f64> = runs.iter().map(|r| r.double[1]).collect();
    let s: Vec<f64> = runs.iter().map(|r| r.single[1]).collect();
    let var = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / n;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    };
    let (md, ms) = (d.iter().sum::<f64>() / n, s.iter().sum::<f64>() / n);
    let pooled_se = ((var(&d) + var(&s)) / n).sqrt();
    let verdict = if md >= ms {
        "double >= single"
    } else if ms - md <= pooled_se {
        "double below single within one pooled SE (soft)"
    } else {
        "double below single by more than one pooled SE"
    };
    Ok((
        ms - md <= pooled_se,
        format!(
            "unseen recall@{K} over seeds {:?}: double {md:.4} {d:.3?}, single {ms:.4} {s:.3?}, difference {:+.4}, pooled SE {pooled_se:.4}: {verdict}",
            runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
            md - ms
        ),
    ))
}

fn c8_invariance(runs: Option<&[SeedRun]>) -> Outcome {
    let mut failures = Vec::new();
    let mut r = rng::stream(8, &[0xACC]);
    for _ in 0..1000 {
        let dim = r.random_range(1..40);
        let a = Tensor::randn(&[dim], 1.0, &mut r);
        let b = Tensor::randn(&[dim], 1.0, &mut r);
        let s: f64 = r.random_range(1e-3..1e3);
        let ab = embed_pair(&a, &b, NormMode::Strict)?;
        let ba = embed_pair(&b, &a, NormMode::Strict)?;
        let abs = embed_pair(&a.scale(s), &b.scale(s), NormMode::Strict)?;
        if ab.vector().data().iter().zip(ba.vector().data()).any(|(x, y)| x != &-y) {
            failures.push("antisymmetry");
            break;
        }
        if ab.vector().data().iter().zip(abs.vector().data()).any(|(x, y)| (x - y).abs() > 1e-12) {
            failures.push("scale invariance");
            break;
        }
    }

    // a small trained model keeps this independent of criteria 6 and 7
    let spec = CorpusSpec {
        num_categories: 6,
        num_properties: 4,
        exemplars_per_cell: 3,
        image_size: 12,
        ..CorpusSpec::default()
    };
    let corpus = generate_corpus(&spec)?;
    if generate_corpus(&spec)?.to_bytes() != corpus.to_bytes() {
        failures.push("corpus reproducibility");
    }
    let splits = make_splits(&corpus, &SplitSpec::sample(corpus.dims(), 1, 2, 0)?)?;
    let arch = Architecture {
        image_size: 12,
        conv1: 4,
        conv2: 6,
        hidden: 16,
        embed_dim: 8,
        ..Architecture::default()
    };
    let hyper = Hyperparams {
        steps: 40,
        batch_size: 12,
        ..Hyperparams::default()
    };
    let (p1, log1) = train(&corpus, &splits, &hyper, None, arch, |_| {})?;
    let (p2, log2) = train(&corpus, &splits, &hyper, None, arch, |_| {})?;
    if p1 != p2 || log1 != log2 {
        failures.push("training reproducibility");
    }
    let prepared = PreparedImages::new(&corpus, &splits.train)?;
    let bank = FeatureBank::new(&p1, &prepared, 1)?;
    let qspec = QuestionSpec {
        regime: Regime::Seen,
        unseen_mode: UnseenMode::Both,
        n_questions: 200,
        distractor_size: 20,
    };
    let qs = build_questions(&mut rng::stream(8, &[1]), &splits, &qspec)?;
    let qs2 = build_questions(&mut rng::stream(8, &[1]), &splits, &qspec)?;
    if qs != qs2 {
        failures.push("question reproducibility");
    }
    let ks: Vec<usize> = (1..=21).collect();
    let ev = evaluate(&bank, &qs, &ks, 1)?;
    if evaluate(&bank, &qs, &ks, 4)? != ev || evaluate(&FeatureBank::new(&p2, &prepared, 3)?, &qs, &ks, 1)? != ev {
        failures.push("evaluation reproducibility");
    }
    if !ev.curve.recall.windows(2).all(|w| w[0] <= w[1]) {
        failures.push("curve monotonicity");
    }
    for a in [1e-3, 0.37, 2.0, 55.0] {
        if evaluate(&bank.scaled(a), &qs, &ks, 1)?.rows != ev.rows {
            failures.push("ranking scale invariance");
            break;
        }
    }
    let mut checked_desk = 0;
    if let Some(runs) = runs {
        for run in runs {
            let ks: Vec<usize> = (1..=run.questions[0].num_candidates()).collect();
            let base = evaluate(&run.double_bank, &run.questions, &ks, 1)?;
            if !base.curve.recall.windows(2).all(|w| w[0] <= w[1]) {
                failures.push("desk curve monotonicity");
            }
            if evaluate(&run.double_bank.scaled(7.5), &run.questions, &ks, 4)?.rows != base.rows {
                failures.push("desk ranking scale invariance");
            }
            checked_desk += 1;
        }
    }
    failures.dedup();
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            format!("antisymmetry, scale invariance, ranking invariance, monotone curves, reproducible corpus/training/evaluation; {checked_desk} desk models rechecked")
        } else {
            format!("violated: {}", failures.join(", "))
        },
    ))
}

fn c9_round_trips() -> Outcome {
    let mut failures: Vec<String> = Vec::new();
    let dir = tempfile::tempdir().map_err(|e| Error::io("tempdir", e))?;
    let spec = CorpusSpec {
        num_categories: 5,
        num_properties: 4,
        exemplars_per_cell: 2,
        image_size: 12,
        ..CorpusSpec::default()
    };
    let corpus = generate_corpus(&spec)?;
    let cpath = dir.path().join("c.vslc");
    save_corpus(&corpus, &cpath)?;
    let loaded = load_corpus(&cpath)?;
    let arch = Architecture {
        image_size: 12,
        conv1: 3,
        conv2: 4,
        hidden: 8,
        embed_dim: 6,
        ..Architecture::default()
    };
    let params = EncoderParams::init(arch, FreezeMode::All, &mut rng::stream(9, &[0xACC]))?;
    let pool = analogy_core::corpus::ImagePool::full(&corpus);
    let features = |c: &Corpus, p: &EncoderParams| -> Result<Vec<Vec<u64>>> {
        let prepared = PreparedImages::new(c, &pool)?;
        (0..c.len())
            .map(|i| Ok(p.encode(prepared.get(ImageId(i as u32)))?.data().iter().map(|v| v.to_bits()).collect()))
            .collect()
    };
    let base = features(&corpus, &params)?;
    if features(&loaded, &params)? != base {
        failures.push("corpus round trip changes features".into());
    }
    let kpath = dir.path().join("e.vslg");
    save_checkpoint(&params, &kpath)?;
    if features(&loaded, &load_checkpoint(&kpath, arch)?)? != base {
        failures.push("checkpoint round trip changes features".into());
    }

    let mut expect = |name: &str, got: Result<()>, ok: fn(&Error) -> bool| match got {
        Err(e) if ok(&e) => {}
        other => failures.push(format!("{name}: {other:?}")),
    };
    let cb = corpus.to_bytes();
    let kb = checkpoint_to_bytes(&params);
    let parse_c = |b: &[u8]| Corpus::from_bytes(b).map(|_| ());
    let parse_k = |b: &[u8]| checkpoint_from_bytes(b, arch).map(|_| ());
    for (what, bytes, parse) in [
        ("corpus", &cb, &parse_c as &dyn Fn(&[u8]) -> Result<()>),
        ("checkpoint", &kb, &parse_k),
    ] {
        let mut b = bytes.clone();
        b[0] ^= 0xFF;
        expect(&format!("{what} magic"), parse(&b), |e| matches!(e, Error::BadMagic { .. }));
        let mut b = bytes.clone();
        b[4] = 9;
        expect(&format!("{what} version"), parse(&b), |e| matches!(e, Error::UnsupportedVersion { .. }));
        for cut in [0, 3, 7, 11, 20, bytes.len() / 2, bytes.len() - 1] {
            expect(&format!("{what} truncated at {cut}"), parse(&bytes[..cut]), |e| {
                matches!(e, Error::Truncated(_) | Error::BadMagic { .. })
            });
        }
        let mut b = bytes.clone();
        b.push(0);
        expect(&format!("{what} trailing byte"), parse(&b), |e| matches!(e, Error::Malformed(_)));
    }
    // zero-sized grid in the corpus header
    let mut b = cb.clone();
    b[8..12].copy_from_slice(&0u32.to_le_bytes());
    expect("corpus zero dimension", parse_c(&b), |e| matches!(e, Error::Malformed(_)));
    // absurd layer count in the checkpoint header
    let mut b = kb.clone();
    b[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
    expect("checkpoint layer count", parse_k(&b), |e| matches!(e, Error::Malformed(_)));
    let other = Architecture { hidden: 9, ..arch };
    expect(
        "checkpoint architecture mismatch",
        checkpoint_from_bytes(&kb, other).map(|_| ()),
        |e| matches!(e, Error::LayerShape { .. }),
    );
    expect("missing corpus", load_corpus(dir.path().join("none")).map(|_| ()), |e| {
        matches!(e, Error::Io { .. })
    });
    expect("missing checkpoint", load_checkpoint(dir.path().join("none"), arch).map(|_| ()), |e| {
        matches!(e, Error::Io { .. })
    });
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            "VSLC and VSLG round trips give bit-identical features; magic, version, truncation, trailing bytes, zero dimension, layer count, architecture mismatch and missing-file errors all raised".into()
        } else {
            failures.join("; ")
        },
    ))
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut all_passed = true;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !want(n) {
            return;
        }
        let t = Instant::now();
        let (passed, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(Ok(v)) => v,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".into()),
        };
        all_passed &= passed;
        println!(
            "{} criterion {n}: {name} [{:.1}s] {detail}",
            if passed { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    };
    report(1, "gradient certification", &mut c1_gradients);
    report(2, "loss identities", &mut c2_loss_identities);
    report(3, "counting", &mut c3_counting);
    report(4, "sampler soundness", &mut c4_samplers);
    report(5, "chance law", &mut c5_chance);
    let runs = if want(6) || want(7) {
        let t = Instant::now();
        eprintln!("training desk models for criteria 6 and 7 (seeds {SEEDS:?})");
        let runs = learning_runs();
        eprintln!("  done in {:.0}s", t.elapsed().as_secs_f64());
        Some(runs)
    } else {
        None
    };
    if let Some(runs) = &runs {
        let shared = |f: fn(&[SeedRun]) -> Outcome| match runs {
            Ok(r) => f(r),
            Err(e) => Ok((false, format!("training failed: {e}"))),
        };
        report(6, "learning beats chance and baselines", &mut || shared(c6_beats_baselines));
        report(7, "double vs single margin on unseen", &mut || shared(c7_double_vs_single));
    }
    let desk_runs = runs.as_ref().and_then(|r| r.as_ref().ok()).map(|r| r.as_slice());
    report(8, "invariance suite", &mut || c8_invariance(desk_runs));
    report(9, "format round trips", &mut c9_round_trips);
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
