use std::collections::BTreeSet;

use rand::seq::index::sample;

use super::{Corpus, GridDims, ImagePool};
use crate::error::{Error, Result};
use crate::quadruples::AnalogyType;
use crate::rng;

/// Which categories never reach training and which analogy types are kept
/// out of training positives.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitSpec {
    pub unseen_categories: BTreeSet<usize>,
    pub heldout_types: BTreeSet<AnalogyType>,
    pub seed: u64,
}

impl SplitSpec {
    /// Draw `n_unseen` categories and then `n_heldout` analogy types over the
    /// remaining (training) categories, uniformly at random.
    pub fn sample(dims: GridDims, n_unseen: usize, n_heldout: usize, seed: u64) -> Result<SplitSpec> {
        if n_unseen + 2 > dims.categories {
            return Err(Error::Config(format!(
                "{n_unseen} unseen categories leave fewer than 2 of {} for training",
                dims.categories
            )));
        }
        let mut r = rng::stream(seed, &[0x5B11]);
        let unseen: BTreeSet<usize> = sample(&mut r, dims.categories, n_unseen).into_iter().collect();
        let train: Vec<usize> = (0..dims.categories).filter(|c| !unseen.contains(c)).collect();
        let available = train.len() * (train.len() - 1) * dims.properties * (dims.properties - 1);
        if n_heldout > available {
            return Err(Error::Config(format!(
                "{n_heldout} held-out analogy types requested, only {available} exist"
            )));
        }
        let mut heldout = BTreeSet::new();
        while heldout.len() < n_heldout {
            let pair = sample(&mut r, train.len(), 2);
            let props = sample(&mut r, dims.properties, 2);
            heldout.insert(AnalogyType {
                source_category: train[pair.index(0)],
                target_category: train[pair.index(1)],
                from_property: props.index(0),
                to_property: props.index(1),
            });
        }
        Ok(SplitSpec {
            unseen_categories: unseen,
            heldout_types: heldout,
            seed,
        })
    }
}

/// Analogy types banned from training positives.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HeldoutRegistry {
    types: BTreeSet<AnalogyType>,
}

impl HeldoutRegistry {
    pub fn new(types: BTreeSet<AnalogyType>) -> Self {
        HeldoutRegistry { types }
    }

    pub fn contains(&self, t: &AnalogyType) -> bool {
        self.types.contains(t)
    }

    pub fn types(&self) -> impl Iterator<Item = &AnalogyType> {
        self.types.iter()
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    /// Every image whose category is not unseen.
    pub train: ImagePool,
    /// Every image of an unseen category.
    pub unseen: ImagePool,
    pub full: ImagePool,
    pub registry: HeldoutRegistry,
    pub unseen_categories: BTreeSet<usize>,
}

impl Splits {
    pub fn dims(&self) -> GridDims {
        self.full.dims()
    }
}

pub fn make_splits(corpus: &Corpus, spec: &SplitSpec) -> Result<Splits> {
    let d = corpus.dims();
    if let Some(&c) = spec.unseen_categories.iter().find(|&&c| c >= d.categories) {
        return Err(Error::Config(format!(
            "unseen category {c} outside 0..{}",
            d.categories
        )));
    }
    if spec.unseen_categories.len() >= d.categories {
        return Err(Error::Config("every category is unseen; nothing to train on".into()));
    }
    for t in &spec.heldout_types {
        t.check(d.categories, d.properties)?;
        if spec.unseen_categories.contains(&t.source_category)
            || spec.unseen_categories.contains(&t.target_category)
        {
            return Err(Error::Config(format!(
                "held-out type {t} uses an unseen category"
            )));
        }
    }
    let unseen = &spec.unseen_categories;
    Ok(Splits {
        train: ImagePool::filter(corpus, |img| !unseen.contains(&img.category_id)),
        unseen: ImagePool::filter(corpus, |img| unseen.contains(&img.category_id)),
        full: ImagePool::full(corpus),
        registry: HeldoutRegistry::new(spec.heldout_types.clone()),
        unseen_categories: unseen.clone(),
    })
}
