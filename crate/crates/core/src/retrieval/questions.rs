//! Analogy questions with distractor sets.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::corpus::{ImageId, Splits};
use crate::error::{Error, Result};
use crate::quadruples::{all_types, AnalogyType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    Seen,
    Unseen,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Seen => "seen",
            Regime::Unseen => "unseen",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which withheld material the unseen regime draws its analogy types from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum UnseenMode {
    /// Types from the held-out registry.
    Types,
    /// Types whose two categories are both unseen.
    Categories,
    /// Alternate between the two, question by question.
    #[default]
    Both,
}

impl UnseenMode {
    pub fn as_str(self) -> &'static str {
        match self {
            UnseenMode::Types => "types",
            UnseenMode::Categories => "categories",
            UnseenMode::Both => "both",
        }
    }
}

impl fmt::Display for UnseenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UnseenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "types" => Ok(UnseenMode::Types),
            "categories" => Ok(UnseenMode::Categories),
            "both" => Ok(UnseenMode::Both),
            _ => Err(Error::Config(format!(
                "unknown unseen mode `{s}` (expected types, categories or both)"
            ))),
        }
    }
}

/// `I1 : I2 :: I3 : ?` with its correct answers and distractors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalogyQuestion {
    pub id: usize,
    pub query: [ImageId; 3],
    /// Every image labeled (category of I3, property of I2), ascending.
    pub positives: Vec<ImageId>,
    /// Ascending.
    pub distractors: Vec<ImageId>,
    pub analogy_type: AnalogyType,
    pub regime: Regime,
}

impl AnalogyQuestion {
    /// Positives followed by distractors.
    pub fn candidates(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.positives.iter().chain(&self.distractors).copied()
    }

    pub fn num_candidates(&self) -> usize {
        self.positives.len() + self.distractors.len()
    }

    pub fn is_positive(&self, id: ImageId) -> bool {
        self.positives.binary_search(&id).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuestionSpec {
    pub regime: Regime,
    pub unseen_mode: UnseenMode,
    pub n_questions: usize,
    pub distractor_size: usize,
}

/// Eligible analogy types of each family for `regime`.
pub fn eligible_types(splits: &Splits, regime: Regime, mode: UnseenMode) -> Result<Vec<Vec<AnalogyType>>> {
    let realizable = |t: &AnalogyType| t.slots().iter().all(|&(c, p)| !splits.full.cell(c, p).is_empty());
    let families = match regime {
        Regime::Seen => {
            let seen: Vec<_> = all_types(splits.train.categories(), splits.train.properties())
                .filter(|t| !splits.registry.contains(t))
                .collect();
            vec![seen]
        }
        Regime::Unseen => {
            let held: Vec<_> = splits.registry.types().copied().filter(realizable).collect();
            let cats: Vec<usize> = splits.unseen_categories.iter().copied().collect();
            let novel: Vec<_> = all_types(&cats, splits.full.properties()).filter(realizable).collect();
            match mode {
                UnseenMode::Types => vec![held],
                UnseenMode::Categories => vec![novel],
                UnseenMode::Both => vec![held, novel].into_iter().filter(|f| !f.is_empty()).collect(),
            }
        }
    };
    if families.iter().all(|f| f.is_empty()) {
        return Err(Error::Exhausted(format!(
            "no eligible analogy types for the {regime} regime ({mode} mode)"
        )));
    }
    Ok(families.into_iter().filter(|f| !f.is_empty()).collect())
}

fn triple_count(splits: &Splits, t: &AnalogyType) -> usize {
    let [a, b, c, _] = t.slots().map(|(c, p)| splits.full.cell(c, p).len());
    a * b * c
}

fn random_triple<R: Rng + ?Sized>(rng: &mut R, splits: &Splits, t: &AnalogyType) -> [ImageId; 3] {
    let s = t.slots();
    [0, 1, 2].map(|i| {
        let cell = splits.full.cell(s[i].0, s[i].1);
        cell[rng.random_range(0..cell.len())]
    })
}

fn all_triples(splits: &Splits, types: &[AnalogyType]) -> Vec<([ImageId; 3], AnalogyType)> {
    let mut out = Vec::new();
    for t in types {
        let s = t.slots();
        let cell = |i: usize| splits.full.cell(s[i].0, s[i].1);
        for &a in cell(0) {
            for &b in cell(1) {
                for &c in cell(2) {
                    out.push(([a, b, c], *t));
                }
            }
        }
    }
    out
}

/// Query triples for one family: distinct whenever the family has at least
/// `n` triples, otherwise every triple once and the rest redrawn uniformly.
fn family_triples<R: Rng + ?Sized>(
    rng: &mut R,
    splits: &Splits,
    types: &[AnalogyType],
    n: usize,
) -> Vec<([ImageId; 3], AnalogyType)> {
    let space: usize = types.iter().map(|t| triple_count(splits, t)).sum();
    if space <= 2 * n {
        let mut all = all_triples(splits, types);
        all.shuffle(rng);
        let mut out: Vec<_> = all.iter().take(n).copied().collect();
        while out.len() < n {
            out.push(all[rng.random_range(0..all.len())]);
        }
        out.shuffle(rng);
        return out;
    }
    // cells of a complete grid are equally sized, so a uniform type followed
    // by uniform exemplars is uniform over triples
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = types[rng.random_range(0..types.len())];
        let q = random_triple(rng, splits, &t);
        if seen.insert(q) {
            out.push((q, t));
        }
    }
    out
}

/// Build `n_questions` questions. Distractors are drawn uniformly without
/// replacement from the whole corpus minus the query and positive images.
pub fn build_questions<R: Rng + ?Sized>(
    rng: &mut R,
    splits: &Splits,
    spec: &QuestionSpec,
) -> Result<Vec<AnalogyQuestion>> {
    if spec.n_questions == 0 || spec.distractor_size == 0 {
        return Err(Error::Config("n_questions and distractor_size must be >= 1".into()));
    }
    let families = eligible_types(splits, spec.regime, spec.unseen_mode)?;
    let nf = families.len();
    let per_family: Vec<usize> = (0..nf)
        .map(|f| spec.n_questions / nf + usize::from(f < spec.n_questions % nf))
        .collect();
    let mut drawn: Vec<Vec<_>> = families
        .iter()
        .zip(&per_family)
        .map(|(types, &n)| family_triples(rng, splits, types, n))
        .collect();
    for d in &mut drawn {
        d.reverse();
    }

    let full = splits.full.ids();
    let mut questions = Vec::with_capacity(spec.n_questions);
    for id in 0..spec.n_questions {
        let (query, t) = drawn[id % nf].pop().expect("per-family counts cover every question");
        let positives = splits.full.cell(t.target_category, t.to_property).to_vec();
        let excluded = |x: &ImageId| query.contains(x) || positives.binary_search(x).is_ok();
        let available = full.len() - positives.len() - 3;
        if available < spec.distractor_size {
            return Err(Error::Exhausted(format!(
                "{} distractors requested but only {available} images are available",
                spec.distractor_size
            )));
        }
        let pool: Vec<ImageId> = full.iter().copied().filter(|x| !excluded(x)).collect();
        let mut distractors: Vec<ImageId> = index::sample(rng, pool.len(), spec.distractor_size)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        distractors.sort_unstable();
        questions.push(AnalogyQuestion {
            id,
            query,
            positives,
            distractors,
            analogy_type: t,
            regime: spec.regime,
        });
    }
    Ok(questions)
}
