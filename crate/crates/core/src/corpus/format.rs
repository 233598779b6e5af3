//! Binary corpus file.
//!
//! ```text
//! "VSLC"  u32 version  u32 categories  u32 properties  u32 exemplars
//! u32 height  u32 width  u32 channels  u64 seed
//! per image, (c, p, e) order:  u64 render_seed  u8[channels*height*width]
//! ```
//!
//! Little-endian. Pixels are stored as `round(255 x)` and read back as `/255`.

use std::fs;
use std::path::Path;

use super::{Corpus, CorpusHeader, GridDims, LabeledImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CORPUS_MAGIC: [u8; 4] = *b"VSLC";
pub const CORPUS_VERSION: u32 = 1;

impl Corpus {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = self.header();
        let d = h.dims;
        let px = h.channels * h.height * h.width;
        let mut out = Vec::with_capacity(40 + self.len() * (8 + px));
        out.extend_from_slice(&CORPUS_MAGIC);
        out.extend_from_slice(&CORPUS_VERSION.to_le_bytes());
        for v in [d.categories, d.properties, d.exemplars, h.height, h.width, h.channels] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&h.seed.to_le_bytes());
        for img in self.images() {
            out.extend_from_slice(&img.render_seed.to_le_bytes());
            out.extend(img.pixels.data().iter().map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Corpus> {
        let mut r = Reader::new(bytes);
        let magic = r.array::<4>("magic")?;
        if magic != CORPUS_MAGIC {
            return Err(Error::BadMagic {
                expected: CORPUS_MAGIC,
                found: magic,
            });
        }
        let version = r.u32("version")?;
        if version != CORPUS_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: CORPUS_VERSION,
            });
        }
        let mut f = [0usize; 6];
        for v in f.iter_mut() {
            *v = r.u32("header")? as usize;
        }
        let [categories, properties, exemplars, height, width, channels] = f;
        let seed = r.u64("header")?;
        if f.contains(&0) {
            return Err(Error::Malformed(format!("zero dimension in header {f:?}")));
        }
        let dims = GridDims {
            categories,
            properties,
            exemplars,
        };
        let px = channels
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::Malformed("image size overflows".into()))?;
        let count = categories
            .checked_mul(properties)
            .and_then(|n| n.checked_mul(exemplars))
            .filter(|&n| n <= u32::MAX as usize)
            .ok_or_else(|| Error::Malformed("image count overflows".into()))?;
        let body = count
            .checked_mul(px.checked_add(8).ok_or_else(|| Error::Malformed("image size overflows".into()))?)
            .ok_or_else(|| Error::Malformed("body size overflows".into()))?;
        if r.remaining() < body {
            return Err(Error::Truncated("image data"));
        }
        if r.remaining() > body {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after image data",
                r.remaining() - body
            )));
        }
        let mut images = Vec::with_capacity(count);
        for i in 0..count {
            let render_seed = r.u64("render seed")?;
            let raw = r.take(px, "pixels")?;
            let pixels = raw.iter().map(|&b| f64::from(b) / 255.0).collect();
            let cell = i / exemplars;
            images.push(LabeledImage {
                pixels: Tensor::new(vec![channels, height, width], pixels)?,
                category_id: cell / properties,
                property_id: cell % properties,
                exemplar_id: i % exemplars,
                render_seed,
            });
        }
        Corpus::from_parts(
            CorpusHeader {
                dims,
                height,
                width,
                channels,
                seed,
            },
            images,
        )
    }
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, corpus.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_bytes(&bytes)
}

/// Little-endian cursor shared by the binary readers.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N, what)?);
        Ok(a)
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }
}
