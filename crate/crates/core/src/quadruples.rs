//! Analogy quadruples: the validity predicate, positive sampling, the two
//! negative-generation strategies (uniform rejection and single-slot
//! substitution), and mixed training batches.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{HeldoutRegistry, ImageId, ImagePool};
use crate::error::{Error, Result};

/// The label template `(c_i, p_1) : (c_i, p_2) :: (c_o, p_1) : (c_o, p_2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnalogyType {
    pub source_category: usize,
    pub target_category: usize,
    pub from_property: usize,
    pub to_property: usize,
}

impl AnalogyType {
    pub fn check(&self, num_categories: usize, num_properties: usize) -> Result<()> {
        let ok = self.source_category < num_categories
            && self.target_category < num_categories
            && self.from_property < num_properties
            && self.to_property < num_properties
            && self.source_category != self.target_category
            && self.from_property != self.to_property;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "analogy type {self} is not valid on a {num_categories}x{num_properties} grid"
            )))
        }
    }

    /// Labels of the four slots.
    pub fn slots(&self) -> [(usize, usize); 4] {
        [
            (self.source_category, self.from_property),
            (self.source_category, self.to_property),
            (self.target_category, self.from_property),
            (self.target_category, self.to_property),
        ]
    }

    fn realizable(&self, pool: &ImagePool) -> bool {
        self.slots().iter().all(|&(c, p)| !pool.cell(c, p).is_empty())
    }
}

impl fmt::Display for AnalogyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[({c},{p}):({c},{q})::({o},{p}):({o},{q})]",
            c = self.source_category,
            o = self.target_category,
            p = self.from_property,
            q = self.to_property
        )
    }
}

/// True iff the four (category, property) labels form a valid analogy.
pub fn is_valid_analogy(labels: [(usize, usize); 4]) -> bool {
    let [(c1, p1), (c2, p2), (c3, p3), (c4, p4)] = labels;
    c1 == c2 && c3 == c4 && c1 != c3 && p1 == p3 && p2 == p4 && p1 != p2
}

/// The analogy type a valid quadruple instantiates.
pub fn analogy_type_of(labels: [(usize, usize); 4]) -> Option<AnalogyType> {
    is_valid_analogy(labels).then(|| AnalogyType {
        source_category: labels[0].0,
        target_category: labels[2].0,
        from_property: labels[0].1,
        to_property: labels[1].1,
    })
}

/// Positive analogies on a grid with one image per cell:
/// `C(categories, 2) * C(properties, 2) * 4`.
pub fn count_positive_analogies(num_categories: u64, num_properties: u64) -> u64 {
    let pairs = |n: u64| n * n.saturating_sub(1) / 2;
    pairs(num_categories) * pairs(num_properties) * 4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Quadruple {
    pub images: [ImageId; 4],
    pub positive: bool,
}

impl Quadruple {
    pub fn labels(&self, pool: &ImagePool) -> [(usize, usize); 4] {
        self.images.map(|id| pool.labels(id))
    }

    pub fn y(&self) -> f64 {
        if self.positive {
            1.0
        } else {
            0.0
        }
    }
}

const TYPE_ATTEMPTS: usize = 64;
const NEGATIVE_ATTEMPTS: usize = 1000;

fn pick<R: Rng + ?Sized>(rng: &mut R, ids: &[ImageId]) -> ImageId {
    ids[rng.random_range(0..ids.len())]
}

/// Uniform over admissible types: realizable in `pool` and not held out.
pub fn sample_analogy_type<R: Rng + ?Sized>(
    rng: &mut R,
    pool: &ImagePool,
    registry: &HeldoutRegistry,
) -> Result<AnalogyType> {
    let cats = pool.categories();
    let props = pool.properties();
    if cats.len() < 2 || props.len() < 2 {
        return Err(Error::Exhausted(format!(
            "analogy type ({} categories, {} properties in pool)",
            cats.len(),
            props.len()
        )));
    }
    let admissible = |t: &AnalogyType| !registry.contains(t) && t.realizable(pool);
    for _ in 0..TYPE_ATTEMPTS {
        let t = draw_type(rng, cats, props);
        if admissible(&t) {
            return Ok(t);
        }
    }
    // sparse support: enumerate so the draw stays uniform
    let all: Vec<AnalogyType> = all_types(cats, props).filter(admissible).collect();
    if all.is_empty() {
        return Err(Error::Exhausted("analogy type outside the held-out registry".into()));
    }
    Ok(all[rng.random_range(0..all.len())])
}

fn draw_type<R: Rng + ?Sized>(rng: &mut R, cats: &[usize], props: &[usize]) -> AnalogyType {
    let ci = rng.random_range(0..cats.len());
    let mut co = rng.random_range(0..cats.len() - 1);
    if co >= ci {
        co += 1;
    }
    let p1 = rng.random_range(0..props.len());
    let mut p2 = rng.random_range(0..props.len() - 1);
    if p2 >= p1 {
        p2 += 1;
    }
    AnalogyType {
        source_category: cats[ci],
        target_category: cats[co],
        from_property: props[p1],
        to_property: props[p2],
    }
}

pub fn all_types<'a>(cats: &'a [usize], props: &'a [usize]) -> impl Iterator<Item = AnalogyType> + 'a {
    cats.iter().flat_map(move |&ci| {
        cats.iter().filter(move |&&co| co != ci).flat_map(move |&co| {
            props.iter().flat_map(move |&p1| {
                props.iter().filter(move |&&p2| p2 != p1).map(move |&p2| AnalogyType {
                    source_category: ci,
                    target_category: co,
                    from_property: p1,
                    to_property: p2,
                })
            })
        })
    })
}

/// One exemplar per slot of `t`, uniform within each cell.
pub fn instantiate<R: Rng + ?Sized>(rng: &mut R, pool: &ImagePool, t: &AnalogyType) -> Quadruple {
    let images = t.slots().map(|(c, p)| pick(rng, pool.cell(c, p)));
    Quadruple {
        images,
        positive: true,
    }
}

pub fn sample_positive<R: Rng + ?Sized>(
    rng: &mut R,
    pool: &ImagePool,
    registry: &HeldoutRegistry,
) -> Result<Quadruple> {
    let t = sample_analogy_type(rng, pool, registry)?;
    Ok(instantiate(rng, pool, &t))
}

/// Four images uniformly from the pool, redrawn until they are not an analogy.
pub fn sample_negative_random<R: Rng + ?Sized>(rng: &mut R, pool: &ImagePool) -> Result<Quadruple> {
    if pool.is_empty() {
        return Err(Error::Exhausted("image in an empty pool".into()));
    }
    for _ in 0..NEGATIVE_ATTEMPTS {
        let images = [(); 4].map(|_| pick(rng, pool.ids()));
        if !is_valid_analogy(images.map(|id| pool.labels(id))) {
            return Ok(Quadruple {
                images,
                positive: false,
            });
        }
    }
    Err(Error::Exhausted(format!(
        "non-analogy quadruple after {NEGATIVE_ATTEMPTS} draws"
    )))
}

/// Break a positive by replacing I3 or I4: either keep the slot's category
/// and swap in a third property, or keep its property and swap in a third
/// category. When the chosen substitution has no candidates the other one is
/// used.
pub fn sample_negative_hard<R: Rng + ?Sized>(
    rng: &mut R,
    pool: &ImagePool,
    registry: &HeldoutRegistry,
) -> Result<Quadruple> {
    let t = sample_analogy_type(rng, pool, registry)?;
    let mut q = instantiate(rng, pool, &t);
    let slot = if rng.random_bool(0.5) { 2 } else { 3 };
    let (slot_c, slot_p) = t.slots()[slot];

    let property_subs: Vec<usize> = pool
        .properties()
        .iter()
        .copied()
        .filter(|&p| p != t.from_property && p != t.to_property && !pool.cell(slot_c, p).is_empty())
        .collect();
    let category_subs: Vec<usize> = pool
        .categories()
        .iter()
        .copied()
        .filter(|&c| c != t.source_category && c != t.target_category && !pool.cell(c, slot_p).is_empty())
        .collect();

    let by_property = match (property_subs.is_empty(), category_subs.is_empty()) {
        (true, true) => {
            return Err(Error::Exhausted(format!(
                "hard-negative substitute for {t}"
            )))
        }
        (false, true) => true,
        (true, false) => false,
        (false, false) => rng.random_bool(0.5),
    };
    q.images[slot] = if by_property {
        let p = property_subs[rng.random_range(0..property_subs.len())];
        pick(rng, pool.cell(slot_c, p))
    } else {
        let c = category_subs[rng.random_range(0..category_subs.len())];
        pick(rng, pool.cell(c, slot_p))
    };
    q.positive = false;
    debug_assert!(!is_valid_analogy(q.labels(pool)));
    Ok(q)
}

/// Mixing proportions for [`sample_batch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchMix {
    pub pos_fraction: f64,
    /// Share of the negatives drawn by substitution rather than uniformly.
    pub hard_fraction: f64,
}

impl Default for BatchMix {
    fn default() -> Self {
        BatchMix {
            pos_fraction: 0.5,
            hard_fraction: 0.5,
        }
    }
}

impl BatchMix {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pos_fraction) || !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(Error::Config(format!("batch fractions out of [0, 1]: {self:?}")));
        }
        Ok(())
    }
}

/// `round(size * pos_fraction)` positives, the rest negatives split by
/// `hard_fraction`, shuffled.
pub fn sample_batch<R: Rng + ?Sized>(
    rng: &mut R,
    pool: &ImagePool,
    registry: &HeldoutRegistry,
    size: usize,
    mix: BatchMix,
) -> Result<Vec<Quadruple>> {
    if size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    mix.validate()?;
    let positives = (size as f64 * mix.pos_fraction).round() as usize;
    let negatives = size - positives;
    let hard = (negatives as f64 * mix.hard_fraction).round() as usize;
    let mut batch = Vec::with_capacity(size);
    for _ in 0..positives {
        batch.push(sample_positive(rng, pool, registry)?);
    }
    for _ in 0..hard {
        batch.push(sample_negative_hard(rng, pool, registry)?);
    }
    for _ in hard..negatives {
        batch.push(sample_negative_random(rng, pool)?);
    }
    batch.shuffle(rng);
    Ok(batch)
}

/// Debug dump, one row per quadruple: `i1,i2,i3,i4,y`.
pub fn write_batch_csv<W: Write>(batch: &[Quadruple], mut out: W) -> std::io::Result<()> {
    writeln!(out, "i1,i2,i3,i4,y")?;
    for q in batch {
        let [a, b, c, d] = q.images;
        writeln!(out, "{},{},{},{},{}", a.0, b.0, c.0, d.0, u8::from(q.positive))?;
    }
    Ok(())
}
