//! Procedural glyph renderer.
//!
//! A category picks a glyph family and a shape parameter; a property picks
//! either a hue (at zero rotation) or a rotation (in a neutral grey). Every
//! glyph carries a marker dot just outside its rim on the +x axis so
//! rotations are visible even on rotationally symmetric shapes.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use super::{CorpusSpec, LabeledImage};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

const BACKGROUND: [f64; 3] = [0.1, 0.1, 0.1];
const NEUTRAL: [f64; 3] = [0.85, 0.85, 0.85];
const GLYPH_RADIUS: f64 = 0.3;
const SUPERSAMPLE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Glyph {
    Polygon { sides: usize },
    Star { points: usize },
    Ring { hole: f64 },
    Cross { half_width: f64 },
}

impl Glyph {
    pub fn for_category(category_id: usize) -> Glyph {
        let variant = category_id / 4;
        match category_id % 4 {
            0 => Glyph::Polygon { sides: 3 + variant },
            1 => Glyph::Star { points: 5 + variant },
            2 => Glyph::Ring {
                hole: (0.25 * variant as f64).min(0.7),
            },
            _ => Glyph::Cross {
                half_width: (0.16 + 0.08 * variant as f64).min(0.45),
            },
        }
    }

    /// Membership test in glyph coordinates scaled so the outer radius is 1.
    fn contains(&self, x: f64, y: f64) -> bool {
        let r = x.hypot(y);
        match *self {
            Glyph::Polygon { sides } => {
                let n = sides as f64;
                let apothem = (PI / n).cos();
                (0..sides).all(|k| {
                    let phi = (2 * k + 1) as f64 * PI / n;
                    x * phi.cos() + y * phi.sin() <= apothem
                })
            }
            Glyph::Star { points } => {
                let sector = TAU / points as f64;
                let t = y.atan2(x).rem_euclid(sector) / sector;
                let inner = 0.45;
                let bound = 1.0 + (inner - 1.0) * (1.0 - (2.0 * t - 1.0).abs());
                r <= bound
            }
            Glyph::Ring { hole } => r <= 1.0 && r >= hole,
            Glyph::Cross { half_width } => {
                (x.abs() <= half_width && y.abs() <= 1.0) || (y.abs() <= half_width && x.abs() <= 1.0)
            }
        }
    }
}

/// What a property id does to a glyph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PropertyEffect {
    Hue { degrees: f64 },
    Rotation { degrees: f64 },
}

impl CorpusSpec {
    pub fn property_effect(&self, property_id: usize) -> PropertyEffect {
        let hues = self.hue_count();
        if property_id < hues {
            PropertyEffect::Hue {
                degrees: 360.0 * property_id as f64 / hues as f64,
            }
        } else {
            let rotations = self.num_properties - hues;
            let q = property_id - hues;
            PropertyEffect::Rotation {
                degrees: 180.0 * (q + 1) as f64 / (rotations + 1) as f64,
            }
        }
    }
}

fn hue_to_rgb(degrees: f64) -> [f64; 3] {
    let h = degrees.rem_euclid(360.0) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    match h as u32 {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

/// Pixel values are stored at 8-bit precision so that a saved corpus reloads
/// bit-identically.
pub fn quantize(v: f64) -> f64 {
    (255.0 * v.clamp(0.0, 1.0)).round() / 255.0
}

/// Render one image. The output is a pure function of `spec.seed`, the two
/// labels, and `exemplar_seed`; the exemplar seed only moves, rescales and
/// adds noise, it never changes what the labels mean. `exemplar_id` of the
/// result is 0; corpus generation fills it in.
pub fn render_image(
    spec: &CorpusSpec,
    category_id: usize,
    property_id: usize,
    exemplar_seed: u64,
) -> Result<LabeledImage> {
    if category_id >= spec.num_categories || property_id >= spec.num_properties {
        return Err(Error::InvalidArgument(format!(
            "label ({category_id}, {property_id}) outside a {}x{} grid",
            spec.num_categories, spec.num_properties
        )));
    }
    let mut rng = rng::stream(
        spec.seed,
        &[category_id as u64, property_id as u64, exemplar_seed],
    );
    let j = &spec.jitter;
    let shift_x = rng.random_range(-1.0..=1.0) * j.max_shift_px;
    let shift_y = rng.random_range(-1.0..=1.0) * j.max_shift_px;
    let scale = 1.0 + rng.random_range(-1.0..=1.0) * j.max_scale;

    let (color, angle) = match spec.property_effect(property_id) {
        PropertyEffect::Hue { degrees } => (hue_to_rgb(degrees), 0.0),
        PropertyEffect::Rotation { degrees } => (NEUTRAL, degrees.to_radians()),
    };
    let glyph = Glyph::for_category(category_id);
    let size = spec.image_size;
    let radius = GLYPH_RADIUS * size as f64 * scale;
    let center = size as f64 / 2.0;
    let (sin_a, cos_a) = angle.sin_cos();

    let channels = spec.channels;
    let mut pixels = vec![0.0; channels * size * size];
    for py in 0..size {
        for px in 0..size {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let fx = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - center - shift_x;
                    let fy = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - center - shift_y;
                    // undo the glyph rotation, image y axis points down
                    let gx = (cos_a * fx - sin_a * fy) / radius;
                    let gy = -(sin_a * fx + cos_a * fy) / radius;
                    let marker = (gx - 1.15).hypot(gy) <= 0.25;
                    if marker || glyph.contains(gx, gy) {
                        hits += 1;
                    }
                }
            }
            let coverage = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            for ch in 0..channels {
                let fg = color[ch % 3];
                let bg = BACKGROUND[ch % 3];
                let noise = rng.random_range(-1.0..=1.0) * j.noise_amplitude;
                pixels[(ch * size + py) * size + px] = quantize(bg + (fg - bg) * coverage + noise);
            }
        }
    }
    Ok(LabeledImage {
        pixels: Tensor::new(vec![channels, size, size], pixels)?,
        category_id,
        property_id,
        exemplar_id: 0,
        render_seed: exemplar_seed,
    })
}
