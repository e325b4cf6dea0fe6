//! Deterministic synthetic smear generator.
//!
//! Each slide is rendered once as a wide canvas; its view-fields are
//! windows sliding right by `(1 - overlap_fraction) * W`, so neighbouring
//! fields share real content. Bacilli are anti-aliased rods bent once in
//! the middle, drawn in red/magenta over a pale-blue background, and every
//! rod's tight box (pixels at least half covered) is annotated in each field
//! it reaches.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{label_patch, tile_positions, AnnotatedField, BBox, Corpus, CorpusError, ImageFormat, LabelRule, Slide, ViewField};
use crate::micronet::PATCH_SIZE;
use crate::seed::derive_seed;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorRange {
    pub min: [u8; 3],
    pub max: [u8; 3],
}

impl ColorRange {
    fn sample(&self, rng: &mut impl Rng) -> [f32; 3] {
        std::array::from_fn(|c| rng.random_range(self.min[c] as f32..=self.max[c] as f32))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StainPalette {
    pub background: ColorRange,
    pub foreground: ColorRange,
}

impl Default for StainPalette {
    fn default() -> Self {
        StainPalette {
            background: ColorRange {
                min: [150, 172, 212],
                max: [182, 198, 238],
            },
            foreground: ColorRange {
                min: [168, 22, 70],
                max: [214, 64, 124],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub slides: usize,
    pub viewfields_per_slide: usize,
    /// `(H, W)` in pixels.
    pub field_size: (usize, usize),
    pub overlap_fraction: f64,
    /// Rod groups seeded in each field's own (non-shared) strip of the canvas.
    pub bacilli_per_field: (usize, usize),
    pub bacillus_length: (f64, f64),
    pub bacillus_width: (f64, f64),
    pub stain_palette: StainPalette,
    /// Per-pixel Gaussian noise, byte scale.
    pub noise_sigma: f64,
    /// Chance that a rod group is a cluster of 2-4 rods instead of one.
    pub cluster_probability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            slides: 4,
            viewfields_per_slide: 12,
            field_size: (200, 200),
            overlap_fraction: 0.5,
            bacilli_per_field: (0, 2),
            bacillus_length: (8.0, 18.0),
            bacillus_width: (2.0, 4.0),
            stain_palette: StainPalette::default(),
            noise_sigma: 6.0,
            cluster_probability: 0.3,
        }
    }
}

const MAX_BEND: f64 = 30.0 * PI / 180.0;
const CLUSTER_SPREAD: f64 = 6.0;
const FIELD_TINT: f32 = 8.0;
const MOTTLE: f32 = 5.0;

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.viewfields_per_slide == 0 {
            return bad("viewfields_per_slide must be at least 1".into());
        }
        if self.field_size.0 < 40 || self.field_size.1 < 40 {
            return bad(format!("field size {:?} below 40x40", self.field_size));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return bad(format!("overlap_fraction {} not in [0, 1)", self.overlap_fraction));
        }
        if self.bacilli_per_field.0 > self.bacilli_per_field.1 {
            return bad(format!("bacilli_per_field {:?} has min > max", self.bacilli_per_field));
        }
        for (name, (lo, hi)) in [("bacillus_length", self.bacillus_length), ("bacillus_width", self.bacillus_width)] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return bad(format!("{name} ({lo}, {hi}) must satisfy 0 < min <= max"));
            }
        }
        let max_extent = self.bacillus_length.1 + self.bacillus_width.1 + 2.0 * CLUSTER_SPREAD + 4.0;
        if max_extent > self.field_size.0.min(self.field_size.1) as f64 {
            return bad("bacilli are too large for the field".into());
        }
        for range in [self.stain_palette.background, self.stain_palette.foreground] {
            if (0..3).any(|c| range.min[c] > range.max[c]) {
                return bad(format!("color range {range:?} has min > max"));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma {} must be non-negative", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.cluster_probability) {
            return bad(format!("cluster_probability {} not in [0, 1]", self.cluster_probability));
        }
        Ok(())
    }

    /// Horizontal canvas offset between consecutive view-fields.
    pub fn step(&self) -> usize {
        (((1.0 - self.overlap_fraction) * self.field_size.1 as f64).round() as usize).max(1)
    }

    pub fn canvas_width(&self) -> usize {
        self.field_size.1 + (self.viewfields_per_slide - 1) * self.step()
    }
}

/// A rendered bacillus in canvas coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Rod {
    /// Polyline end, bend, end as `(x, y)`.
    pub points: [(f64, f64); 3],
    pub width: f64,
    pub color: [f32; 3],
    /// Canvas pixels with coverage >= 0.5, as `(x, y)`.
    pub core_pixels: Vec<(usize, usize)>,
}

impl Rod {
    pub fn bbox(&self) -> Option<BBox> {
        bbox_of(self.core_pixels.iter().copied())
    }
}

fn bbox_of(pixels: impl Iterator<Item = (usize, usize)>) -> Option<BBox> {
    pixels.fold(None, |acc: Option<BBox>, (x, y)| {
        Some(match acc {
            None => BBox::new(x, y, x + 1, y + 1),
            Some(b) => BBox::new(b.x_min.min(x), b.y_min.min(y), b.x_max.max(x + 1), b.y_max.max(y + 1)),
        })
    })
}

/// Everything generated for one slide, before and after cropping.
#[derive(Debug, Clone)]
pub struct SlideCanvas {
    pub canvas: Tensor,
    pub rods: Vec<Rod>,
    /// Canvas x offset of each view-field.
    pub offsets: Vec<usize>,
    pub slide: Slide,
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

fn make_rod(cfg: &SynthConfig, center: (f64, f64), rng: &mut impl Rng) -> Rod {
    let length = rng.random_range(cfg.bacillus_length.0..=cfg.bacillus_length.1);
    let width = rng.random_range(cfg.bacillus_width.0..=cfg.bacillus_width.1);
    let angle = rng.random_range(0.0..PI);
    let bend = rng.random_range(-MAX_BEND..=MAX_BEND);
    let half = length / 2.0;
    let (a1, a2) = (angle - bend / 2.0, angle + bend / 2.0);
    Rod {
        points: [
            (center.0 - half * a1.cos(), center.1 - half * a1.sin()),
            center,
            (center.0 + half * a2.cos(), center.1 + half * a2.sin()),
        ],
        width,
        color: cfg.stain_palette.foreground.sample(rng),
        core_pixels: Vec::new(),
    }
}

/// Blends `rod` into the canvas and records its core pixels.
fn draw_rod(canvas: &mut Tensor, rod: &mut Rod) {
    let (h, w, _) = canvas.hwc().unwrap();
    let pad = rod.width / 2.0 + 1.0;
    let xs = rod.points.iter().map(|p| p.0);
    let ys = rod.points.iter().map(|p| p.1);
    let x0 = (xs.clone().fold(f64::INFINITY, f64::min) - pad).floor().max(0.0) as usize;
    let x1 = ((xs.fold(f64::NEG_INFINITY, f64::max) + pad).ceil() as usize).min(w - 1);
    let y0 = (ys.clone().fold(f64::INFINITY, f64::min) - pad).floor().max(0.0) as usize;
    let y1 = ((ys.fold(f64::NEG_INFINITY, f64::max) + pad).ceil() as usize).min(h - 1);
    let data = canvas.data_mut();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let d = segment_distance(p, rod.points[0], rod.points[1])
                .min(segment_distance(p, rod.points[1], rod.points[2]));
            let coverage = (rod.width / 2.0 + 0.5 - d).clamp(0.0, 1.0) as f32;
            if coverage <= 0.0 {
                continue;
            }
            let px = &mut data[(y * w + x) * 3..][..3];
            for c in 0..3 {
                px[c] = px[c] * (1.0 - coverage) + rod.color[c] * coverage;
            }
            if coverage >= 0.5 {
                rod.core_pixels.push((x, y));
            }
        }
    }
}

/// Renders slide `slide_index` of `cfg`.
pub fn generate_slide(cfg: &SynthConfig, slide_index: usize) -> Result<SlideCanvas, SynthError> {
    cfg.validate()?;
    let slide_id = format!("slide{slide_index:02}");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("synth/{slide_id}")));
    let (h, fw) = cfg.field_size;
    let n = cfg.viewfields_per_slide;
    let step = cfg.step();
    let cw = cfg.canvas_width();

    let base = cfg.stain_palette.background.sample(&mut rng);
    let phase: [f64; 2] = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
    let mut canvas = Tensor::zeros(&[h, cw, 3])?;
    {
        let data = canvas.data_mut();
        for y in 0..h {
            for x in 0..cw {
                let m = MOTTLE * ((x as f64 / 23.0 + phase[0]).sin() * (y as f64 / 31.0 + phase[1]).cos()) as f32;
                for c in 0..3 {
                    data[(y * cw + x) * 3 + c] = base[c] + m;
                }
            }
        }
    }

    let margin = cfg.bacillus_length.1 / 2.0 + cfg.bacillus_width.1 + CLUSTER_SPREAD + 1.0;
    let mut rods = Vec::new();
    for k in 0..n {
        let strip_start = k * step;
        let strip_end = if k + 1 == n { cw } else { strip_start + step };
        let groups = rng.random_range(cfg.bacilli_per_field.0..=cfg.bacilli_per_field.1);
        for _ in 0..groups {
            let cx = rng
                .random_range(strip_start as f64..strip_end as f64)
                .clamp(margin, cw as f64 - margin);
            let cy = rng.random_range(margin..h as f64 - margin);
            let members = if rng.random_bool(cfg.cluster_probability) {
                rng.random_range(2..=4)
            } else {
                1
            };
            for m in 0..members {
                let center = if m == 0 {
                    (cx, cy)
                } else {
                    (
                        cx + rng.random_range(-CLUSTER_SPREAD..=CLUSTER_SPREAD),
                        cy + rng.random_range(-CLUSTER_SPREAD..=CLUSTER_SPREAD),
                    )
                };
                let mut rod = make_rod(cfg, center, &mut rng);
                draw_rod(&mut canvas, &mut rod);
                rods.push(rod);
            }
        }
    }

    let noise = Normal::new(0.0f64, cfg.noise_sigma).unwrap();
    let offsets: Vec<usize> = (0..n).map(|k| k * step).collect();
    let mut fields = Vec::with_capacity(n);
    for (k, &off) in offsets.iter().enumerate() {
        let mut frng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("synth/{slide_id}/field{k}")));
        let tint: [f32; 3] = std::array::from_fn(|_| frng.random_range(-FIELD_TINT..=FIELD_TINT));
        let mut image = canvas.slice_patch(0, off, h, fw)?;
        for (i, v) in image.data_mut().iter_mut().enumerate() {
            let n = if cfg.noise_sigma > 0.0 { noise.sample(&mut frng) as f32 } else { 0.0 };
            *v = (*v + tint[i % 3] + n).round().clamp(0.0, 255.0);
        }
        let boxes = rods
            .iter()
            .filter_map(|r| {
                bbox_of(
                    r.core_pixels
                        .iter()
                        .filter(|&&(x, _)| x >= off && x < off + fw)
                        .map(|&(x, y)| (x - off, y)),
                )
            })
            .collect();
        fields.push(AnnotatedField {
            field: ViewField {
                slide_id: slide_id.clone(),
                index: k,
                image,
            },
            boxes,
        });
    }
    Ok(SlideCanvas {
        canvas,
        rods,
        offsets,
        slide: Slide { id: slide_id, fields },
    })
}

/// Generates every slide of `cfg`.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Corpus, SynthError> {
    cfg.validate()?;
    let slides = (0..cfg.slides)
        .map(|i| generate_slide(cfg, i).map(|s| s.slide))
        .collect::<Result<_, _>>()?;
    Ok(Corpus { slides })
}

/// Generates a corpus and writes it in the standard directory layout (PPM images).
pub fn write_corpus(cfg: &SynthConfig, root: &Path) -> Result<Corpus, SynthError> {
    let corpus = generate_corpus(cfg)?;
    corpus.save(root, ImageFormat::Ppm)?;
    Ok(corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub slides: usize,
    pub fields: usize,
    pub bboxes: usize,
    pub positive_tiles: usize,
    pub negative_tiles: usize,
}

impl CorpusStats {
    /// Negative tiles per positive tile; infinite when there are no positives.
    pub fn negative_to_positive(&self) -> f64 {
        self.negative_tiles as f64 / self.positive_tiles as f64
    }
}

/// Field/box counts and the class balance of the stride-20 tiling.
pub fn corpus_stats(corpus: &Corpus, rule: &LabelRule) -> CorpusStats {
    let mut stats = CorpusStats {
        slides: corpus.slides.len(),
        fields: corpus.field_count(),
        bboxes: corpus.box_count(),
        ..CorpusStats::default()
    };
    for af in corpus.slides.iter().flat_map(|s| &s.fields) {
        for (top, left) in tile_positions(af.field.height(), af.field.width(), PATCH_SIZE) {
            if label_patch(top, left, &af.boxes, rule).is_positive() {
                stats.positive_tiles += 1;
            } else {
                stats.negative_tiles += 1;
            }
        }
    }
    stats
}
