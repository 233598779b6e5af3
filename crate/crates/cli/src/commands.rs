use std::path::PathBuf;

use analogy_core::config::{InitMode, RunConfig};
use analogy_core::corpus::{generate_corpus, load_corpus, make_splits, save_corpus, Corpus, Splits};
use analogy_core::model::{
    load_checkpoint, pretrain_classifier, save_checkpoint, train as train_encoder, PreparedImages, LAYER_NAMES,
};
use analogy_core::retrieval::{
    build_questions, chance_recall, chance_recall_approx, evaluate, question_set_hash, question_stream, recall_svg,
    run_ablation, write_audit_csv, write_results_csv, FeatureBank, RandomScorer, Regime, ResultRow, Scorer,
    SvgSeries,
};
use analogy_core::selfcheck::{run_selfcheck, SelfCheckOptions};
use analogy_core::{Error, Result};

use crate::rundir::RunDir;

fn load(cfg: &RunConfig) -> Result<(Corpus, Splits)> {
    let corpus = load_corpus(&cfg.corpus)?;
    let h = corpus.header();
    if h.height != cfg.image_size || h.width != cfg.image_size {
        return Err(Error::Config(format!(
            "{} holds {}x{} images but image_size = {}",
            cfg.corpus.display(),
            h.height,
            h.width,
            cfg.image_size
        )));
    }
    let splits = make_splits(&corpus, &cfg.split_spec(corpus.dims())?)?;
    log::info!(
        "corpus {}: {} images, train pool {}, unseen categories {:?}, {} held-out types",
        cfg.corpus.display(),
        corpus.len(),
        splits.train.len(),
        splits.unseen_categories,
        splits.registry.len()
    );
    Ok((corpus, splits))
}

pub fn gen_corpus(cfg: &RunConfig, name: Option<&str>) -> Result<()> {
    let corpus = generate_corpus(&cfg.corpus_spec())?;
    let dir = RunDir::create(cfg, "gen-corpus", name)?;
    if let Some(parent) = cfg.corpus.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_corpus(&corpus, &cfg.corpus)?;
    dir.write("corpus_path.txt", format!("{}\n", cfg.corpus.display()).as_bytes())?;
    println!("wrote {} images to {}", corpus.len(), cfg.corpus.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, name: Option<&str>) -> Result<()> {
    let (corpus, splits) = load(cfg)?;
    let dir = RunDir::create(cfg, "train", name)?;
    let hyper = cfg.hyperparams();
    let arch = cfg.architecture();
    let init = match cfg.init {
        InitMode::Random => None,
        InitMode::Classifier => {
            let prepared = PreparedImages::new(&corpus, &splits.train)?;
            log::info!("pretraining classifier for {} steps", cfg.clf_steps);
            Some(pretrain_classifier(&corpus, &prepared, &splits.train, arch, &cfg.classifier_hyper())?)
        }
    };
    log::info!("training {} for {} steps, freeze {}", hyper.loss, hyper.steps, hyper.freeze);
    let every = (hyper.steps / 10).max(1);
    let (params, log) = train_encoder(&corpus, &splits, &hyper, init, arch, |row| {
        if (row.step + 1) % every == 0 {
            log::info!(
                "step {}: loss {:.4}, positive distance {:.3}, negative distance {:.3}",
                row.step + 1,
                row.loss,
                row.pos_dist_mean,
                row.neg_dist_mean
            );
        }
    })?;
    let ckpt = dir.file("encoder.vslg");
    save_checkpoint(&params, &ckpt)?;
    dir.write_with("train_log.csv", |w| log.write_csv(w))?;
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

pub enum EvalSource {
    Checkpoint(PathBuf),
    Classifier,
    Random,
}

pub fn eval(cfg: &RunConfig, source: &EvalSource, name: Option<&str>) -> Result<()> {
    let (corpus, splits) = load(cfg)?;
    let dir = RunDir::create(cfg, "eval", name)?;
    let prepared = PreparedImages::new(&corpus, &splits.train)?;
    let arch = cfg.architecture();
    let (scorer, loss_mode, freeze_mode): (Box<dyn Scorer>, String, String) = match source {
        EvalSource::Checkpoint(p) => {
            let params = load_checkpoint(p, arch)?;
            (
                Box::new(FeatureBank::new(&params, &prepared, cfg.threads)?),
                cfg.loss.clone(),
                cfg.freeze.to_string(),
            )
        }
        EvalSource::Classifier => {
            log::info!("pretraining classifier baseline for {} steps", cfg.clf_steps);
            let params = pretrain_classifier(&corpus, &prepared, &splits.train, arch, &cfg.classifier_hyper())?;
            save_checkpoint(&params, dir.file("baseline_classifier.vslg"))?;
            (
                Box::new(FeatureBank::new(&params, &prepared, cfg.threads)?),
                "classifier".into(),
                "all".into(),
            )
        }
        EvalSource::Random => (Box::new(RandomScorer { seed: cfg.seed }), "random".into(), "none".into()),
    };
    let mut rows = Vec::new();
    for &regime in &cfg.regimes {
        let mut series = Vec::new();
        for &n in &cfg.distractor_sizes {
            let spec = cfg.question_spec(regime, n);
            let qs = build_questions(&mut question_stream(cfg.seed, regime, n), &splits, &spec)?;
            let min_candidates = qs.iter().map(|q| q.num_candidates()).min().unwrap_or(0);
            let ks: Vec<usize> = cfg.ks.iter().copied().filter(|&k| k <= min_candidates).collect();
            let ev = evaluate(scorer.as_ref(), &qs, &ks, cfg.threads)?;
            dir.write_with(&format!("audit_{regime}_{n}.csv"), |w| write_audit_csv(&ev.rows, w))?;
            let positives = qs[0].positives.len();
            println!("{regime} n={n}: {} questions, set {}", qs.len(), question_set_hash(&qs));
            for (&k, &r) in ev.curve.ks.iter().zip(&ev.curve.recall) {
                println!(
                    "  recall@{k:<4} {r:.4}   chance {:.4} (k/n {:.4})",
                    chance_recall(n, positives, k),
                    chance_recall_approx(n, k)
                );
                rows.push(ResultRow {
                    regime: regime.to_string(),
                    loss_mode: loss_mode.clone(),
                    freeze_mode: freeze_mode.clone(),
                    seed: cfg.seed,
                    k,
                    n_distractors: n,
                    recall: r,
                });
            }
            series.push(SvgSeries {
                label: format!("n = {n}"),
                points: ev.curve.ks.iter().copied().zip(ev.curve.recall.iter().copied()).collect(),
            });
        }
        let title = format!("{regime} regime, {loss_mode}");
        dir.write(&format!("recall_{regime}.svg"), recall_svg(&title, &series).as_bytes())?;
    }
    let out = dir.write_with("results.csv", |w| write_results_csv(&rows, w))?;
    println!("results {}", out.display());
    Ok(())
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v.sqrt())
}

pub fn ablate(cfg: &RunConfig, name: Option<&str>) -> Result<()> {
    let (corpus, splits) = load(cfg)?;
    let dir = RunDir::create(cfg, "ablate", name)?;
    let config = cfg.ablation();
    let report = run_ablation(&corpus, &splits, &config, |msg| log::info!("{msg}"))?;
    dir.write_with("ablation.csv", |w| write_results_csv(&report.rows(), w))?;
    for (seed, regime, hash) in &report.question_hashes {
        println!("seed {seed} {regime} question set {hash} (shared by all arms)");
    }
    if !report.arms_consistent() {
        return Err(Error::CheckFailed("ablation arms differ in more than the ablated factors".into()));
    }
    println!("arms differ only in loss and freeze mode: settings hashes agree within each seed");
    let k_report = if config.ks.contains(&10) { 10 } else { config.ks[config.ks.len() - 1] };
    for regime in [Regime::Seen, Regime::Unseen] {
        let mut series = Vec::new();
        for loss in &config.losses {
            for &freeze in &config.freezes {
                let arms: Vec<_> = report
                    .arms
                    .iter()
                    .filter(|a| a.loss == *loss && a.freeze == freeze)
                    .collect();
                let curves: Vec<_> = arms
                    .iter()
                    .filter_map(|a| a.curves.iter().find(|(r, _)| *r == regime).map(|(_, c)| c))
                    .collect();
                let points = config
                    .ks
                    .iter()
                    .enumerate()
                    .map(|(i, &k)| (k, curves.iter().map(|c| c.recall[i]).sum::<f64>() / curves.len() as f64))
                    .collect();
                let (m, sd) = mean_sd(&report.recalls(regime, loss.name(), freeze, k_report));
                println!(
                    "{regime:<6} {:<6} {:<16} recall@{k_report} {m:.4} ± {sd:.4} over {} seeds",
                    loss.name(),
                    freeze.as_str(),
                    curves.len()
                );
                series.push(SvgSeries {
                    label: format!("{} {}", loss.name(), freeze.as_str()),
                    points,
                });
            }
        }
        let title = format!("{regime} regime, mean over {} seeds", config.seeds.len());
        dir.write(&format!("ablation_{regime}.svg"), recall_svg(&title, &series).as_bytes())?;
    }
    println!("report {}", dir.path.display());
    Ok(())
}

pub fn selfcheck(cfg: &RunConfig, corrupt: Option<&str>, _name: Option<&str>) -> Result<()> {
    let corrupt_layer = match corrupt {
        Some(n) => Some(
            LAYER_NAMES
                .iter()
                .position(|l| *l == n)
                .ok_or_else(|| Error::Config(format!("unknown layer `{n}` (expected one of {LAYER_NAMES:?})")))?,
        ),
        None => None,
    };
    let _ = cfg;
    let results = run_selfcheck(&SelfCheckOptions { corrupt_layer });
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{} {:<28} {:>6.2}s  {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        );
        if !r.passed {
            failed.push(format!("{}: {}", r.name, r.detail));
        }
    }
    if failed.is_empty() {
        println!("selfcheck passed");
        Ok(())
    } else {
        Err(Error::CheckFailed(failed.join("; ")))
    }
}
