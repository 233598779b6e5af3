//! Loss-mode x freeze-depth x regime comparison on shared data.

use super::report::{question_set_hash, sha256_hex, ResultRow};
use super::{build_questions, question_stream, evaluate, FeatureBank, QuestionSpec, RecallCurve, Regime, UnseenMode};
use crate::corpus::{Corpus, Splits};
use crate::error::{Error, Result};
use crate::model::{
    pretrain_classifier, train, Architecture, ClassifierHyper, EncoderParams, FreezeMode, Hyperparams, LossMode,
    PreparedImages,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    /// Shared settings; `loss`, `freeze` and `seed` are set per arm.
    pub base: Hyperparams,
    pub arch: Architecture,
    pub losses: Vec<LossMode>,
    pub freezes: Vec<FreezeMode>,
    pub seeds: Vec<u64>,
    /// When set, every arm of a seed starts from the same classifier-pretrained body.
    pub pretrain: Option<ClassifierHyper>,
    pub ks: Vec<usize>,
    pub n_questions: usize,
    pub distractor_size: usize,
    pub unseen_mode: UnseenMode,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            base: Hyperparams::default(),
            arch: Architecture::default(),
            losses: vec![
                LossMode::Single { margin: 0.4 },
                LossMode::Double {
                    pos_margin: 0.2,
                    neg_margin: 0.4,
                },
            ],
            freezes: vec![FreezeMode::FcOnly, FreezeMode::FcPlusLastConv],
            seeds: vec![0, 1, 2],
            pretrain: None,
            ks: vec![1, 2, 5, 10, 20, 50, 100],
            n_questions: 1000,
            distractor_size: 100,
            unseen_mode: UnseenMode::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationArm {
    pub loss: LossMode,
    pub freeze: FreezeMode,
    pub seed: u64,
    /// Hash of everything except the loss and freeze settings.
    pub shared_hash: String,
    pub curves: Vec<(Regime, RecallCurve)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub arms: Vec<AblationArm>,
    /// `(seed, regime, hash)` of every question set.
    pub question_hashes: Vec<(u64, Regime, String)>,
}

/// Hash of an arm's settings with the ablated factors blanked out.
pub fn arm_config_hash(hyper: &Hyperparams, arch: &Architecture, extra: &str) -> String {
    let blank = Hyperparams {
        loss: LossMode::Single { margin: 1.0 },
        freeze: FreezeMode::All,
        ..hyper.clone()
    };
    sha256_hex(&format!("{blank:?}|{arch:?}|{extra}"))
}

impl AblationReport {
    pub fn rows(&self) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for arm in &self.arms {
            for (regime, curve) in &arm.curves {
                for (&k, &recall) in curve.ks.iter().zip(&curve.recall) {
                    rows.push(ResultRow {
                        regime: regime.to_string(),
                        loss_mode: arm.loss.name().to_string(),
                        freeze_mode: arm.freeze.to_string(),
                        seed: arm.seed,
                        k,
                        n_distractors: curve.n_distractors,
                        recall,
                    });
                }
            }
        }
        rows
    }

    /// Per-seed recall@k of one cell, in seed order.
    pub fn recalls(&self, regime: Regime, loss: &str, freeze: FreezeMode, k: usize) -> Vec<f64> {
        self.arms
            .iter()
            .filter(|a| a.loss.name() == loss && a.freeze == freeze)
            .filter_map(|a| a.curves.iter().find(|(r, _)| *r == regime).and_then(|(_, c)| c.at(k)))
            .collect()
    }

    /// True when all arms of each seed share one settings hash.
    pub fn arms_consistent(&self) -> bool {
        self.arms.iter().all(|a| {
            self.arms
                .iter()
                .filter(|b| b.seed == a.seed)
                .all(|b| b.shared_hash == a.shared_hash)
        })
    }
}

/// Train and evaluate every (loss, freeze, seed) arm. Within a seed all arms
/// share the initialization, the training batches and both question sets.
pub fn run_ablation(
    corpus: &Corpus,
    splits: &Splits,
    config: &AblationConfig,
    mut progress: impl FnMut(&str),
) -> Result<AblationReport> {
    if config.seeds.is_empty() || config.losses.is_empty() || config.freezes.is_empty() {
        return Err(Error::Config("ablation needs at least one seed, loss and freeze mode".into()));
    }
    let prepared = PreparedImages::new(corpus, &splits.train)?;
    let mut arms = Vec::new();
    let mut question_hashes = Vec::new();
    for &seed in &config.seeds {
        let mut sets = Vec::new();
        for regime in [Regime::Seen, Regime::Unseen] {
            let spec = QuestionSpec {
                regime,
                unseen_mode: config.unseen_mode,
                n_questions: config.n_questions,
                distractor_size: config.distractor_size,
            };
            let qs = build_questions(&mut question_stream(seed, regime, config.distractor_size), splits, &spec)?;
            let hash = question_set_hash(&qs);
            progress(&format!("seed {seed}: {regime} question set {hash}"));
            question_hashes.push((seed, regime, hash.clone()));
            sets.push((regime, qs, hash));
        }
        let init: Option<EncoderParams> = match &config.pretrain {
            Some(ch) => {
                let ch = ClassifierHyper {
                    seed: rng::derive_seed(seed, &[0xC1A5]),
                    ..ch.clone()
                };
                Some(pretrain_classifier(corpus, &prepared, &splits.train, config.arch, &ch)?)
            }
            None => None,
        };
        let extra: String = sets.iter().map(|(_, _, h)| h.as_str()).collect::<Vec<_>>().join(",")
            + &format!("|{:?}|{:?}|{:?}", config.pretrain, config.ks, config.unseen_mode);
        for &loss in &config.losses {
            for &freeze in &config.freezes {
                let hyper = Hyperparams {
                    loss,
                    freeze,
                    seed,
                    ..config.base.clone()
                };
                progress(&format!("seed {seed}: training {} / {freeze}", loss));
                let (params, _) = train(corpus, splits, &hyper, init.clone(), config.arch, |_| {})?;
                let bank = FeatureBank::new(&params, &prepared, hyper.threads)?;
                let mut curves = Vec::new();
                for (regime, qs, _) in &sets {
                    let ev = evaluate(&bank, qs, &config.ks, hyper.threads)?;
                    progress(&format!(
                        "seed {seed}: {} / {freeze} / {regime}: recall {:?}",
                        loss.name(),
                        ev.curve.recall
                    ));
                    curves.push((*regime, ev.curve));
                }
                arms.push(AblationArm {
                    loss,
                    freeze,
                    seed,
                    shared_hash: arm_config_hash(&hyper, &config.arch, &extra),
                    curves,
                });
            }
        }
    }
    Ok(AblationReport { arms, question_hashes })
}
