//! Labelled image corpus on a category x property grid.

mod format;
mod render;
mod split;

use std::ops::Index;

pub use format::{load_corpus, save_corpus, CORPUS_MAGIC, CORPUS_VERSION};
pub(crate) use format::Reader;
pub use render::{quantize, render_image, Glyph, PropertyEffect};
pub use split::{make_splits, HeldoutRegistry, SplitSpec, Splits};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Per-exemplar nuisance variation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub max_shift_px: f64,
    /// Fractional change of glyph radius, applied as `1 ± max_scale`.
    pub max_scale: f64,
    pub noise_amplitude: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            max_shift_px: 2.0,
            max_scale: 0.10,
            noise_amplitude: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub num_categories: usize,
    pub num_properties: usize,
    pub exemplars_per_cell: usize,
    pub image_size: usize,
    pub channels: usize,
    /// Property ids below this are hues, the rest are rotations. `None`
    /// splits the properties evenly.
    pub hue_properties: Option<usize>,
    pub jitter: Jitter,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            num_categories: 12,
            num_properties: 8,
            exemplars_per_cell: 6,
            image_size: 24,
            channels: 3,
            hue_properties: None,
            jitter: Jitter::default(),
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_categories < 2 {
            return bad(format!("num_categories must be >= 2, got {}", self.num_categories));
        }
        if self.num_properties < 2 {
            return bad(format!("num_properties must be >= 2, got {}", self.num_properties));
        }
        if self.exemplars_per_cell < 1 {
            return bad("exemplars_per_cell must be >= 1".into());
        }
        if self.image_size < 4 || !self.image_size.is_multiple_of(4) {
            return bad(format!(
                "image_size must be a positive multiple of 4, got {}",
                self.image_size
            ));
        }
        if self.channels != 3 {
            return bad(format!("channels must be 3, got {}", self.channels));
        }
        if self.hue_count() > self.num_properties {
            return bad("hue_properties exceeds num_properties".into());
        }
        let j = &self.jitter;
        if !(j.max_shift_px >= 0.0 && j.max_scale >= 0.0 && j.max_scale < 1.0 && j.noise_amplitude >= 0.0) {
            return bad(format!("jitter out of range: {j:?}"));
        }
        let total = self
            .num_categories
            .checked_mul(self.num_properties)
            .and_then(|n| n.checked_mul(self.exemplars_per_cell));
        match total {
            Some(n) if n <= u32::MAX as usize => Ok(()),
            _ => bad("corpus too large".into()),
        }
    }

    pub fn hue_count(&self) -> usize {
        self.hue_properties.unwrap_or(self.num_properties / 2)
    }

    pub fn dims(&self) -> GridDims {
        GridDims {
            categories: self.num_categories,
            properties: self.num_properties,
            exemplars: self.exemplars_per_cell,
        }
    }
}

/// Index of an image within its corpus. Images are stored in
/// (category, property, exemplar) lexicographic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImageId(pub u32);

impl ImageId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDims {
    pub categories: usize,
    pub properties: usize,
    pub exemplars: usize,
}

impl GridDims {
    pub fn len(&self) -> usize {
        self.categories * self.properties * self.exemplars
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn id(&self, category: usize, property: usize, exemplar: usize) -> ImageId {
        ImageId(((category * self.properties + property) * self.exemplars + exemplar) as u32)
    }

    /// (category, property) of an image.
    pub fn labels(&self, id: ImageId) -> (usize, usize) {
        let i = id.index() / self.exemplars;
        (i / self.properties, i % self.properties)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `3 x H x W`, values in [0, 1].
    pub pixels: Tensor,
    pub category_id: usize,
    pub property_id: usize,
    pub exemplar_id: usize,
    pub render_seed: u64,
}

/// Everything the corpus file records besides the images themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusHeader {
    pub dims: GridDims,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    header: CorpusHeader,
    images: Vec<LabeledImage>,
}

impl Corpus {
    /// Checks grid order, labels and pixel shapes.
    pub fn from_parts(header: CorpusHeader, images: Vec<LabeledImage>) -> Result<Self> {
        let d = header.dims;
        if images.len() != d.len() {
            return Err(Error::Malformed(format!(
                "expected {} images, got {}",
                d.len(),
                images.len()
            )));
        }
        let shape = [header.channels, header.height, header.width];
        for (i, img) in images.iter().enumerate() {
            let e = i % d.exemplars;
            let (c, p) = d.labels(ImageId(i as u32));
            if (img.category_id, img.property_id, img.exemplar_id) != (c, p, e) {
                return Err(Error::Malformed(format!(
                    "image {i} labelled ({}, {}, {}), grid position is ({c}, {p}, {e})",
                    img.category_id, img.property_id, img.exemplar_id
                )));
            }
            img.pixels.expect_shape("corpus image", &shape)?;
        }
        Ok(Corpus { header, images })
    }

    pub fn header(&self) -> &CorpusHeader {
        &self.header
    }

    pub fn dims(&self) -> GridDims {
        self.header.dims
    }

    pub fn images(&self) -> &[LabeledImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, category: usize, property: usize, exemplar: usize) -> Option<&LabeledImage> {
        let d = self.dims();
        if category >= d.categories || property >= d.properties || exemplar >= d.exemplars {
            return None;
        }
        self.images.get(d.id(category, property, exemplar).index())
    }

    pub fn ids(&self) -> impl Iterator<Item = ImageId> {
        (0..self.images.len() as u32).map(ImageId)
    }
}

impl Index<ImageId> for Corpus {
    type Output = LabeledImage;

    fn index(&self, id: ImageId) -> &LabeledImage {
        &self.images[id.index()]
    }
}

/// Render the full grid. Exemplar seeds are derived from the corpus seed and
/// the grid position.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let d = spec.dims();
    let mut images = Vec::with_capacity(d.len());
    for c in 0..d.categories {
        for p in 0..d.properties {
            for e in 0..d.exemplars {
                let seed = rng::derive_seed(spec.seed, &[0xC0DE, c as u64, p as u64, e as u64]);
                let mut img = render_image(spec, c, p, seed)?;
                img.exemplar_id = e;
                images.push(img);
            }
        }
    }
    Corpus::from_parts(
        CorpusHeader {
            dims: d,
            height: spec.image_size,
            width: spec.image_size,
            channels: spec.channels,
            seed: spec.seed,
        },
        images,
    )
}

/// A subset of a corpus, indexed by (category, property) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePool {
    dims: GridDims,
    ids: Vec<ImageId>,
    cells: Vec<Vec<ImageId>>,
    member: Vec<bool>,
    categories: Vec<usize>,
    properties: Vec<usize>,
}

impl ImagePool {
    pub fn from_ids(dims: GridDims, mut ids: Vec<ImageId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        let mut cells = vec![Vec::new(); dims.categories * dims.properties];
        let mut member = vec![false; dims.len()];
        for &id in &ids {
            let (c, p) = dims.labels(id);
            cells[c * dims.properties + p].push(id);
            member[id.index()] = true;
        }
        let categories = (0..dims.categories)
            .filter(|&c| (0..dims.properties).any(|p| !cells[c * dims.properties + p].is_empty()))
            .collect();
        let properties = (0..dims.properties)
            .filter(|&p| (0..dims.categories).any(|c| !cells[c * dims.properties + p].is_empty()))
            .collect();
        ImagePool {
            dims,
            ids,
            cells,
            member,
            categories,
            properties,
        }
    }

    pub fn full(corpus: &Corpus) -> Self {
        Self::from_ids(corpus.dims(), corpus.ids().collect())
    }

    pub fn filter(corpus: &Corpus, mut keep: impl FnMut(&LabeledImage) -> bool) -> Self {
        let ids = corpus.ids().filter(|&id| keep(&corpus[id])).collect();
        Self::from_ids(corpus.dims(), ids)
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn ids(&self) -> &[ImageId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn cell(&self, category: usize, property: usize) -> &[ImageId] {
        if category >= self.dims.categories || property >= self.dims.properties {
            return &[];
        }
        &self.cells[category * self.dims.properties + property]
    }

    pub fn contains(&self, id: ImageId) -> bool {
        self.member.get(id.index()).copied().unwrap_or(false)
    }

    /// Categories with at least one image in the pool.
    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn properties(&self) -> &[usize] {
        &self.properties
    }

    pub fn labels(&self, id: ImageId) -> (usize, usize) {
        self.dims.labels(id)
    }
}

/// Per-channel pixel means of a pool; subtracted from every image before it
/// reaches the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMeans(pub Vec<f64>);

impl ChannelMeans {
    pub fn from_pool(corpus: &Corpus, pool: &ImagePool) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::InvalidArgument("channel means of an empty pool".into()));
        }
        let h = corpus.header();
        let plane = h.height * h.width;
        let mut sums = vec![0.0; h.channels];
        for &id in pool.ids() {
            for (ch, s) in sums.iter_mut().enumerate() {
                *s += corpus[id].pixels.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
            }
        }
        let n = (pool.len() * plane) as f64;
        Ok(ChannelMeans(sums.into_iter().map(|s| s / n).collect()))
    }

    pub fn apply(&self, pixels: &Tensor) -> Result<Tensor> {
        let s = pixels.shape();
        if s.len() != 3 || s[0] != self.0.len() {
            return Err(Error::ShapeMismatch {
                op: "mean subtraction",
                expected: vec![self.0.len(), 0, 0],
                got: s.to_vec(),
            });
        }
        let plane = s[1] * s[2];
        let mut out = pixels.clone();
        for (ch, m) in self.0.iter().enumerate() {
            out.data_mut()[ch * plane..(ch + 1) * plane]
                .iter_mut()
                .for_each(|v| *v -= m);
        }
        Ok(out)
    }
}
