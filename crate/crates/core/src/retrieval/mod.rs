//! Answering analogy questions by ranked retrieval, and recall@k.

mod ablation;
mod questions;
mod report;

use rayon::prelude::*;

pub use ablation::{arm_config_hash, run_ablation, AblationArm, AblationConfig, AblationReport};
pub use questions::{
    build_questions, eligible_types, AnalogyQuestion, QuestionSpec, Regime, UnseenMode,
};
pub use report::{question_set_hash, recall_svg, write_audit_csv, write_results_csv, ResultRow, SvgSeries};

use crate::corpus::ImageId;
use crate::error::{Error, Result};
use crate::model::{embed_pair, EncoderParams, PreparedImages};
use crate::rng::{derive_seed, mix64};
use crate::tensor::{NormMode, Tensor};

/// Random stream for the question set of one (seed, regime, distractor size).
pub fn question_stream(seed: u64, regime: Regime, distractor_size: usize) -> crate::rng::Rng {
    crate::rng::stream(seed, &[0x0E5, regime as u64, distractor_size as u64])
}

/// Cosine of two pair embeddings. Both are renormalized first, which is an
/// identity for unit inputs.
pub fn score(x12: &Tensor, x3i: &Tensor) -> Result<f64> {
    x12.expect_same_shape("score", x3i)?;
    let d = x12.dot(x3i);
    let n = x12.norm() * x3i.norm();
    if n.is_nan() || n <= 0.0 {
        return Err(Error::DegeneratePair { norm: n, eps: 0.0 });
    }
    Ok((d / n).clamp(-1.0, 1.0))
}

/// Candidates by descending score, ties by ascending image index; `None`
/// scores (degenerate pairs) go last, also by index.
pub fn rank_candidates(mut scored: Vec<(ImageId, Option<f64>)>) -> Vec<ImageId> {
    scored.sort_by(|(ia, sa), (ib, sb)| match (sa, sb) {
        (Some(a), Some(b)) => b.total_cmp(a).then(ia.cmp(ib)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => ia.cmp(ib),
    });
    scored.into_iter().map(|(id, _)| id).collect()
}

/// 1-based rank of the best-placed positive, if any positive is ranked.
pub fn rank_of_first_positive(ranking: &[ImageId], positives: &[ImageId]) -> Option<usize> {
    ranking.iter().position(|id| positives.contains(id)).map(|r| r + 1)
}

/// 1 if some positive is in the top `k`, else 0.
pub fn recall_at_k(ranking: &[ImageId], positives: &[ImageId], k: usize) -> Result<u8> {
    if k == 0 || k > ranking.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={}",
            ranking.len()
        )));
    }
    Ok(u8::from(ranking[..k].iter().any(|id| positives.contains(id))))
}

/// Expected recall@k of a uniformly random ranking:
/// `1 - C(n, k) / C(n + positives, k)`.
pub fn chance_recall(n_distractors: usize, n_positives: usize, k: usize) -> f64 {
    let total = n_distractors + n_positives;
    if k > n_distractors {
        return 1.0;
    }
    let mut miss = 1.0;
    for i in 0..k {
        miss *= (n_distractors - i) as f64 / (total - i) as f64;
    }
    1.0 - miss
}

/// The `k / n` approximation of chance.
pub fn chance_recall_approx(n_distractors: usize, k: usize) -> f64 {
    k as f64 / n_distractors as f64
}

/// Anything that can order a question's candidates.
pub trait Scorer: Sync {
    fn rank(&self, question: &AnalogyQuestion) -> Result<Vec<ImageId>>;
}

/// Encoder features of every corpus image, computed once.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    features: Vec<Tensor>,
}

impl FeatureBank {
    pub fn new(params: &EncoderParams, prepared: &PreparedImages, threads: usize) -> Result<Self> {
        let encode = |i: usize| params.encode(prepared.get(ImageId(i as u32)));
        let features = if threads <= 1 {
            (0..prepared.len()).map(encode).collect::<Result<_>>()?
        } else {
            thread_pool(threads)?.install(|| (0..prepared.len()).into_par_iter().map(encode).collect::<Result<_>>())?
        };
        Ok(FeatureBank { features })
    }

    pub fn from_features(features: Vec<Tensor>) -> Self {
        FeatureBank { features }
    }

    pub fn get(&self, id: ImageId) -> &Tensor {
        &self.features[id.index()]
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Every feature multiplied by `a`.
    pub fn scaled(&self, a: f64) -> FeatureBank {
        FeatureBank {
            features: self.features.iter().map(|f| f.scale(a)).collect(),
        }
    }
}

impl Scorer for FeatureBank {
    /// A degenerate query pair is an error; a degenerate candidate pair is
    /// ranked last with a warning.
    fn rank(&self, q: &AnalogyQuestion) -> Result<Vec<ImageId>> {
        let [i1, i2, i3] = q.query;
        let x12 = embed_pair(self.get(i1), self.get(i2), NormMode::Strict)?;
        let x3 = self.get(i3);
        let scored = q
            .candidates()
            .map(|c| match embed_pair(x3, self.get(c), NormMode::Strict) {
                Ok(x3c) => Ok((c, Some(score(x12.vector(), x3c.vector())?))),
                Err(Error::DegeneratePair { norm, .. }) => {
                    log::warn!(
                        "question {}: candidate {} has a degenerate pair with the query image (norm {norm:e}); ranked last",
                        q.id,
                        c.0
                    );
                    Ok((c, None))
                }
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(rank_candidates(scored))
    }
}

/// Uniform random scores, a pure function of (seed, question id, candidate).
#[derive(Debug, Clone, Copy)]
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn rank(&self, q: &AnalogyQuestion) -> Result<Vec<ImageId>> {
        let base = derive_seed(self.seed, &[q.id as u64]);
        let scored = q
            .candidates()
            .map(|c| {
                let u = (mix64(base ^ u64::from(c.0)) >> 11) as f64 / (1u64 << 53) as f64;
                (c, Some(u))
            })
            .collect();
        Ok(rank_candidates(scored))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditRow {
    pub question_id: usize,
    pub rank_of_first_positive: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallCurve {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub n_questions: usize,
    pub n_distractors: usize,
}

impl RecallCurve {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub curve: RecallCurve,
    pub rows: Vec<AuditRow>,
}

/// Recall@k from audit rows: the fraction of questions whose first
/// positive ranks within `k`.
pub fn curve_from_rows(rows: &[AuditRow], ks: &[usize], n_distractors: usize) -> RecallCurve {
    let n = rows.len() as f64;
    let recall = ks
        .iter()
        .map(|&k| rows.iter().filter(|r| r.rank_of_first_positive <= k).count() as f64 / n)
        .collect();
    RecallCurve {
        ks: ks.to_vec(),
        recall,
        n_questions: rows.len(),
        n_distractors,
    }
}

/// Rank every question and average recall@k. Rows come back in question
/// order regardless of `threads`.
pub fn evaluate(scorer: &dyn Scorer, questions: &[AnalogyQuestion], ks: &[usize], threads: usize) -> Result<Evaluation> {
    if questions.is_empty() {
        return Err(Error::InvalidArgument("no questions to evaluate".into()));
    }
    if ks.is_empty() {
        return Err(Error::InvalidArgument("no k values".into()));
    }
    let n_distractors = questions[0].distractors.len();
    let min_candidates = questions.iter().map(|q| q.num_candidates()).min().unwrap_or(0);
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > min_candidates) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={min_candidates}"
        )));
    }
    let one = |q: &AnalogyQuestion| -> Result<AuditRow> {
        let ranking = scorer.rank(q)?;
        let rank = rank_of_first_positive(&ranking, &q.positives)
            .ok_or_else(|| Error::InvalidArgument(format!("question {} has no ranked positive", q.id)))?;
        Ok(AuditRow {
            question_id: q.id,
            rank_of_first_positive: rank,
        })
    };
    let rows: Vec<AuditRow> = if threads <= 1 {
        questions.iter().map(one).collect::<Result<_>>()?
    } else {
        thread_pool(threads)?.install(|| questions.par_iter().map(one).collect::<Result<_>>())?
    };
    Ok(Evaluation {
        curve: curve_from_rows(&rows, ks, n_distractors),
        rows,
    })
}

pub(crate) fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}
