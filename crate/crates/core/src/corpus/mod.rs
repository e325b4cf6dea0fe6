//! Slides, view-fields, annotations, the consecutive train/unused/test split
//! and patch sampling.
//!
//! A slide is an ordered run of view-fields; consecutive fields overlap
//! spatially, so the split keeps an unused gap between the train and test
//! ranges of every slide.

mod io;
mod pack;

use std::collections::HashSet;
use std::ops::Range;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binfmt::FormatError;
use crate::micronet::{PATCH_CHANNELS, PATCH_SIZE};
use crate::seed::derive_seed;
use crate::tensor::{Tensor, TensorError};

pub use io::{image_to_tensor, read_image, tensor_to_rgb, write_image, ImageFormat, ANNOTATIONS_FILE, IMAGES_DIR, MANIFEST_FILE};
pub use pack::{read_pack, write_pack, PACK_MAGIC};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("slide has no view-fields")]
    EmptySlide,
    #[error("invalid split fractions: {0}")]
    Fractions(String),
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error("insufficient negatives: requested {requested}, only {available} negative windows")]
    InsufficientNegatives { requested: usize, available: usize },
    #[error("split error: {0}")]
    Split(String),
    #[error("corpus layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("patch pack: {0}")]
    Format(#[from] FormatError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Axis-aligned box in pixel coordinates, inclusive min / exclusive max.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Self {
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> usize {
        self.x_max.saturating_sub(self.x_min)
    }

    pub fn height(&self) -> usize {
        self.y_max.saturating_sub(self.y_min)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BBox) -> usize {
        let w = self.x_max.min(other.x_max).saturating_sub(self.x_min.max(other.x_min));
        let h = self.y_max.min(other.y_max).saturating_sub(self.y_min.max(other.y_min));
        w * h
    }

    /// Checks `x_min < x_max <= width` and `y_min < y_max <= height`.
    pub fn validate(&self, width: usize, height: usize) -> Result<(), CorpusError> {
        if self.x_min >= self.x_max || self.y_min >= self.y_max || self.x_max > width || self.y_max > height {
            return Err(CorpusError::Annotation(format!(
                "box {self:?} invalid for a {width}x{height} image"
            )));
        }
        Ok(())
    }
}

/// One annotation row: a box on a specific view-field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub slide_id: String,
    pub viewfield_index: usize,
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl Annotation {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

/// One microscope image; pixel values are byte-scale (0..=255) in `[H, W, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewField {
    pub slide_id: String,
    pub index: usize,
    pub image: Tensor,
}

impl ViewField {
    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }
    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedField {
    pub field: ViewField,
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slide {
    pub id: String,
    /// `fields[i].field.index == i`.
    pub fields: Vec<AnnotatedField>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub slides: Vec<Slide>,
}

impl Corpus {
    pub fn field_count(&self) -> usize {
        self.slides.iter().map(|s| s.fields.len()).sum()
    }

    pub fn box_count(&self) -> usize {
        self.slides
            .iter()
            .flat_map(|s| &s.fields)
            .map(|f| f.boxes.len())
            .sum()
    }

    /// All boxes flattened into annotation rows, in slide/field order.
    pub fn annotations(&self) -> Vec<Annotation> {
        let mut out = Vec::new();
        for s in &self.slides {
            for f in &s.fields {
                for b in &f.boxes {
                    out.push(Annotation {
                        slide_id: s.id.clone(),
                        viewfield_index: f.field.index,
                        x_min: b.x_min,
                        y_min: b.y_min,
                        x_max: b.x_max,
                        y_max: b.y_max,
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        for s in &self.slides {
            if s.fields.is_empty() {
                return Err(CorpusError::EmptySlide);
            }
            for (i, f) in s.fields.iter().enumerate() {
                if f.field.index != i || f.field.slide_id != s.id {
                    return Err(CorpusError::Layout(format!(
                        "slide {} field {} is out of order",
                        s.id, i
                    )));
                }
                let (h, w, c) = f.field.image.hwc()?;
                if c != PATCH_CHANNELS || h < PATCH_SIZE || w < PATCH_SIZE {
                    return Err(CorpusError::Layout(format!(
                        "view-field {}_{} is {h}x{w}x{c}, need at least {PATCH_SIZE}x{PATCH_SIZE}x{PATCH_CHANNELS}",
                        s.id, i
                    )));
                }
                for b in &f.boxes {
                    b.validate(w, h)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn from_positive(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

/// Where a patch came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub slide_id: String,
    pub viewfield: usize,
    pub top: usize,
    pub left: usize,
}

impl PatchOrigin {
    pub fn new(slide_id: impl Into<String>, viewfield: usize, top: usize, left: usize) -> Self {
        PatchOrigin {
            slide_id: slide_id.into(),
            viewfield,
            top,
            left,
        }
    }

    pub fn window(&self) -> BBox {
        BBox::new(self.left, self.top, self.left + PATCH_SIZE, self.top + PATCH_SIZE)
    }
}

/// A labeled 20x20x3 byte-scale patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub pixels: Tensor,
    pub label: Label,
    pub origin: PatchOrigin,
}

/// Ground-truth rule for patches: positive iff some box covers at least
/// `min_overlap` of the patch area, or the patch holds at least
/// `min_box_fraction` of that box's area. The second clause is what makes
/// bacilli much smaller than a patch count at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelRule {
    pub min_overlap: f64,
    pub min_box_fraction: f64,
}

impl Default for LabelRule {
    fn default() -> Self {
        LabelRule {
            min_overlap: 0.25,
            min_box_fraction: 0.5,
        }
    }
}

impl LabelRule {
    /// Intersection area over window area.
    pub fn patch_fraction(window: &BBox, bbox: &BBox) -> f64 {
        window.intersection_area(bbox) as f64 / window.area() as f64
    }

    /// Intersection area over box area.
    pub fn box_fraction(window: &BBox, bbox: &BBox) -> f64 {
        window.intersection_area(bbox) as f64 / bbox.area() as f64
    }

    /// Whether `bbox` alone makes `window` positive.
    pub fn covers(&self, window: &BBox, bbox: &BBox) -> bool {
        window.intersection_area(bbox) > 0
            && (Self::patch_fraction(window, bbox) >= self.min_overlap
                || Self::box_fraction(window, bbox) >= self.min_box_fraction)
    }

    pub fn label(&self, window: &BBox, boxes: &[BBox]) -> Label {
        Label::from_positive(boxes.iter().any(|b| self.covers(window, b)))
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, v) in [("min_overlap", self.min_overlap), ("min_box_fraction", self.min_box_fraction)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(CorpusError::Fractions(format!("{name} {v} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Labels the 20x20 window whose top-left corner is `(top, left)`.
pub fn label_patch(top: usize, left: usize, boxes: &[BBox], rule: &LabelRule) -> Label {
    rule.label(&PatchOrigin::new("", 0, top, left).window(), boxes)
}

/// Fractions of each slide given to train, unused gap and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub train: f64,
    pub unused: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            unused: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.train, self.unused, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(CorpusError::Fractions(format!("negative or non-finite: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Fractions(format!("must sum to 1: {self:?}")));
        }
        Ok(())
    }
}

/// Index ranges of one slide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideSplit {
    pub train: Range<usize>,
    pub unused: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Unused,
    Test,
}

impl SlideSplit {
    pub fn range(&self, p: Partition) -> Range<usize> {
        match p {
            Partition::Train => self.train.clone(),
            Partition::Unused => self.unused.clone(),
            Partition::Test => self.test.clone(),
        }
    }

    pub fn partition_of(&self, index: usize) -> Option<Partition> {
        [Partition::Train, Partition::Unused, Partition::Test]
            .into_iter()
            .find(|&p| self.range(p).contains(&index))
    }
}

// Slack against binary representation error, e.g. 0.6 * 5 = 2.9999999999999996.
const ROUNDING_SLACK: f64 = 1e-9;

/// Consecutive split of `n` view-fields: train takes `ceil(train * n)` from
/// the front, test takes `floor(test * n)` from the back, and the unused gap
/// gets the rest, so rounding never removes the gap while both sides exist.
pub fn split_slide(n: usize, fractions: &SplitFractions) -> Result<SlideSplit, CorpusError> {
    fractions.validate()?;
    if n == 0 {
        return Err(CorpusError::EmptySlide);
    }
    let nf = n as f64;
    let n_train = ((fractions.train * nf - ROUNDING_SLACK).ceil().max(0.0) as usize).min(n);
    let n_test = ((fractions.test * nf + ROUNDING_SLACK).floor() as usize).min(n - n_train);
    let test_start = n - n_test;
    if n_test == 0 {
        log::warn!("slide with {n} view-field(s) has an empty test range");
    }
    Ok(SlideSplit {
        train: 0..n_train,
        unused: n_train..test_start,
        test: test_start..n,
    })
}

/// Per-slide split of a whole corpus, keyed by slide id in corpus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub slides: Vec<(String, SlideSplit)>,
}

impl SplitAssignment {
    pub fn for_corpus(corpus: &Corpus, fractions: &SplitFractions) -> Result<Self, CorpusError> {
        let slides = corpus
            .slides
            .iter()
            .map(|s| Ok((s.id.clone(), split_slide(s.fields.len(), fractions)?)))
            .collect::<Result<_, CorpusError>>()?;
        Ok(SplitAssignment { slides })
    }

    pub fn get(&self, slide_id: &str) -> Option<&SlideSplit> {
        self.slides.iter().find(|(id, _)| id == slide_id).map(|(_, s)| s)
    }

    /// Fields of `corpus` in partition `p`, in slide/field order.
    pub fn fields<'a>(&self, corpus: &'a Corpus, p: Partition) -> Vec<&'a AnnotatedField> {
        corpus
            .slides
            .iter()
            .filter_map(|s| self.get(&s.id).map(|sp| (s, sp.range(p))))
            .flat_map(|(s, r)| s.fields[r.start.min(s.fields.len())..r.end.min(s.fields.len())].iter())
            .collect()
    }
}

/// Top-left corners of every 20x20 window at `stride` that fits an `h x w`
/// image, row-major.
pub fn tile_positions(h: usize, w: usize, stride: usize) -> Vec<(usize, usize)> {
    assert!(stride >= 1, "stride must be at least 1");
    if h < PATCH_SIZE || w < PATCH_SIZE {
        return Vec::new();
    }
    let rows = (h - PATCH_SIZE) / stride + 1;
    let cols = (w - PATCH_SIZE) / stride + 1;
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r * stride, c * stride)))
        .collect()
}

fn make_sample(af: &AnnotatedField, top: usize, left: usize, label: Label) -> Result<PatchSample, CorpusError> {
    Ok(PatchSample {
        pixels: af.field.image.slice_patch(top, left, PATCH_SIZE, PATCH_SIZE)?,
        label,
        origin: PatchOrigin::new(af.field.slide_id.clone(), af.field.index, top, left),
    })
}

fn clamp_start(lo: usize, hi: usize, extent: usize) -> usize {
    // Window start that centers [lo, hi) in PATCH_SIZE, clamped to [0, extent - PATCH_SIZE].
    let start = (lo as i64 + hi as i64 - PATCH_SIZE as i64).div_euclid(2);
    start.clamp(0, (extent - PATCH_SIZE) as i64) as usize
}

/// Positive patches of one view-field: one window centered on each box
/// (clamped to the image) plus, for boxes wider or taller than a patch, a
/// stride-20 tiling of the box. Only windows that pass the label rule are
/// kept; duplicate positions are dropped.
pub fn extract_positive_patches(af: &AnnotatedField, rule: &LabelRule) -> Result<Vec<PatchSample>, CorpusError> {
    extract_jittered_positives(af, rule, 0, 0)
}

/// [`extract_positive_patches`] plus, per box, up to `per_box` extra windows
/// drawn (seeded) from the stride-1 positions where that box alone makes the
/// window positive. Off-center positives match what a fixed tiling sees.
pub fn extract_jittered_positives(
    af: &AnnotatedField,
    rule: &LabelRule,
    per_box: usize,
    seed: u64,
) -> Result<Vec<PatchSample>, CorpusError> {
    let (h, w) = (af.field.height(), af.field.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for b in &af.boxes {
        b.validate(w, h)?;
        let mut windows = vec![(clamp_start(b.y_min, b.y_max, h), clamp_start(b.x_min, b.x_max, w))];
        if b.width() > PATCH_SIZE || b.height() > PATCH_SIZE {
            let mut top = b.y_min;
            while top < b.y_max {
                let mut left = b.x_min;
                while left < b.x_max {
                    windows.push((top.min(h - PATCH_SIZE), left.min(w - PATCH_SIZE)));
                    left += PATCH_SIZE;
                }
                top += PATCH_SIZE;
            }
        }
        if per_box > 0 {
            let mut candidates = Vec::new();
            for top in (b.y_min + 1).saturating_sub(PATCH_SIZE)..=b.y_max.min(h) - 1 {
                for left in (b.x_min + 1).saturating_sub(PATCH_SIZE)..=b.x_max.min(w) - 1 {
                    if top + PATCH_SIZE > h || left + PATCH_SIZE > w {
                        continue;
                    }
                    let win = PatchOrigin::new("", 0, top, left).window();
                    if rule.covers(&win, b) {
                        candidates.push((top, left));
                    }
                }
            }
            let k = per_box.min(candidates.len());
            let mut picked = index::sample(&mut rng, candidates.len(), k).into_vec();
            picked.sort_unstable();
            windows.extend(picked.into_iter().map(|i| candidates[i]));
        }
        for (top, left) in windows {
            if !seen.insert((top, left)) {
                continue;
            }
            if label_patch(top, left, &af.boxes, rule).is_positive() {
                out.push(make_sample(af, top, left, Label::Positive)?);
            }
        }
    }
    Ok(out)
}

/// Draws `k` distinct negative windows uniformly from every stride-1 position
/// of the given fields.
pub fn sample_negatives_across(
    fields: &[&AnnotatedField],
    k: usize,
    seed: u64,
    rule: &LabelRule,
) -> Result<Vec<PatchSample>, CorpusError> {
    let mut candidates = Vec::new();
    for (fi, af) in fields.iter().enumerate() {
        for (top, left) in tile_positions(af.field.height(), af.field.width(), 1) {
            if !label_patch(top, left, &af.boxes, rule).is_positive() {
                candidates.push((fi, top, left));
            }
        }
    }
    if candidates.len() < k {
        return Err(CorpusError::InsufficientNegatives {
            requested: k,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, candidates.len(), k).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let (fi, top, left) = candidates[i];
            make_sample(fields[fi], top, left, Label::Negative)
        })
        .collect()
}

/// Draws `k` distinct negative windows from one view-field.
pub fn sample_negatives(
    af: &AnnotatedField,
    k: usize,
    seed: u64,
    rule: &LabelRule,
) -> Result<Vec<PatchSample>, CorpusError> {
    sample_negatives_across(&[af], k, seed, rule)
}

/// Balances a two-class sample set by keeping every sample of the minority
/// class and a seeded uniform subset of the majority class of the same size.
/// Relative order is preserved. Returns the input unchanged when one class
/// is absent.
pub fn undersample_majority(samples: Vec<PatchSample>, seed: u64) -> Vec<PatchSample> {
    undersample_capped(samples, None, seed)
}

/// [`undersample_majority`], additionally limiting each class to `cap` samples.
pub fn undersample_capped(samples: Vec<PatchSample>, cap: Option<usize>, seed: u64) -> Vec<PatchSample> {
    let (neg, pos): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&i| !samples[i].label.is_positive());
    if neg.is_empty() || pos.is_empty() {
        return samples;
    }
    let target = neg.len().min(pos.len()).min(cap.unwrap_or(usize::MAX));
    if neg.len() == target && pos.len() == target {
        return samples;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(2 * target);
    for class in [neg, pos] {
        if class.len() == target {
            keep.extend(class);
        } else {
            keep.extend(index::sample(&mut rng, class.len(), target).into_iter().map(|j| class[j]));
        }
    }
    keep.sort_unstable();
    let mut slots: Vec<Option<PatchSample>> = samples.into_iter().map(Some).collect();
    keep.into_iter().map(|i| slots[i].take().unwrap()).collect()
}

/// Labeled stride-`stride` tiling of every field in partition `p`.
pub fn tile_partition(
    corpus: &Corpus,
    split: &SplitAssignment,
    p: Partition,
    stride: usize,
    rule: &LabelRule,
) -> Result<Vec<PatchSample>, CorpusError> {
    let mut out = Vec::new();
    for af in split.fields(corpus, p) {
        for (top, left) in tile_positions(af.field.height(), af.field.width(), stride) {
            out.push(make_sample(af, top, left, label_patch(top, left, &af.boxes, rule))?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PatchDataset {
    pub train: Vec<PatchSample>,
    pub test: Vec<PatchSample>,
}

impl PatchDataset {
    pub fn class_counts(samples: &[PatchSample]) -> (usize, usize) {
        let pos = samples.iter().filter(|s| s.label.is_positive()).count();
        (samples.len() - pos, pos)
    }
}

/// Builds train and test patch sets.
///
/// Train comes from the train ranges only: every positive patch (with
/// `jitter` extra off-center windows per box), plus
/// (balanced) as many seeded random negatives per slide as that slide has
/// positives, or (unbalanced) every negative window of the stride-20 tiling.
/// Test is the exhaustive stride-20 tiling of the test ranges with its true
/// class skew.
pub fn build_patch_dataset(
    corpus: &Corpus,
    split: &SplitAssignment,
    balanced: bool,
    jitter: usize,
    seed: u64,
    rule: &LabelRule,
) -> Result<PatchDataset, CorpusError> {
    let mut train = Vec::new();
    for slide in &corpus.slides {
        let Some(sp) = split.get(&slide.id) else {
            continue;
        };
        let fields: Vec<&AnnotatedField> = slide.fields[sp.train.clone()].iter().collect();
        let mut positives = Vec::new();
        for af in &fields {
            let field_seed = derive_seed(seed, &format!("jitter/{}/{}", slide.id, af.field.index));
            positives.extend(extract_jittered_positives(af, rule, jitter, field_seed)?);
        }
        let negatives = if balanced {
            if positives.is_empty() {
                Vec::new()
            } else {
                let slide_seed = derive_seed(seed, &format!("negatives/{}", slide.id));
                sample_negatives_across(&fields, positives.len(), slide_seed, rule)?
            }
        } else {
            let mut negs = Vec::new();
            for af in &fields {
                for (top, left) in tile_positions(af.field.height(), af.field.width(), PATCH_SIZE) {
                    if !label_patch(top, left, &af.boxes, rule).is_positive() {
                        negs.push(make_sample(af, top, left, Label::Negative)?);
                    }
                }
            }
            negs
        };
        train.extend(positives);
        train.extend(negatives);
    }
    let test = tile_partition(corpus, split, Partition::Test, PATCH_SIZE, rule)?;
    if train.is_empty() {
        return Err(CorpusError::Split("train partition yields no patches".into()));
    }
    if test.is_empty() {
        return Err(CorpusError::Split("test partition yields no patches".into()));
    }
    Ok(PatchDataset { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(slide: &str, index: usize, h: usize, w: usize, boxes: Vec<BBox>) -> AnnotatedField {
        let data = (0..h * w * 3).map(|i| (i % 251) as f32).collect();
        AnnotatedField {
            field: ViewField {
                slide_id: slide.into(),
                index,
                image: Tensor::from_vec(&[h, w, 3], data).unwrap(),
            },
            boxes,
        }
    }

    fn slide(id: &str, n: usize, boxes_per_field: impl Fn(usize) -> Vec<BBox>) -> Slide {
        Slide {
            id: id.into(),
            fields: (0..n).map(|i| field(id, i, 100, 100, boxes_per_field(i))).collect(),
        }
    }

    #[test]
    fn split_ten() {
        let s = split_slide(10, &SplitFractions::default()).unwrap();
        assert_eq!(s.train, 0..6);
        assert_eq!(s.unused, 6..8);
        assert_eq!(s.test, 8..10);
    }

    #[test]
    fn split_five() {
        let s = split_slide(5, &SplitFractions::default()).unwrap();
        assert_eq!(s.train, 0..3);
        assert_eq!(s.unused, 3..4);
        assert_eq!(s.test, 4..5);
    }

    #[test]
    fn split_degenerate() {
        let s = split_slide(1, &SplitFractions::default()).unwrap();
        assert_eq!(s.train, 0..1);
        assert!(s.unused.is_empty() && s.test.is_empty());
        assert!(matches!(
            split_slide(0, &SplitFractions::default()),
            Err(CorpusError::EmptySlide)
        ));
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let f = SplitFractions {
            train: 0.7,
            unused: 0.2,
            test: 0.2,
        };
        assert!(matches!(split_slide(10, &f), Err(CorpusError::Fractions(_))));
    }

    proptest! {
        #[test]
        fn split_ranges_are_consecutive_and_gapped(n in 1usize..10_000) {
            let s = split_slide(n, &SplitFractions::default()).unwrap();
            prop_assert_eq!(s.train.start, 0);
            prop_assert_eq!(s.train.end, s.unused.start);
            prop_assert_eq!(s.unused.end, s.test.start);
            prop_assert_eq!(s.test.end, n);
            prop_assert!((s.train.len() as f64 - 0.6 * n as f64).abs() < 1.0);
            prop_assert!((s.test.len() as f64 - 0.2 * n as f64).abs() < 1.0);
            if !s.test.is_empty() {
                prop_assert!(!s.unused.is_empty());
            }
        }
    }

    #[test]
    fn label_examples() {
        let inside = [BBox::new(0, 0, 40, 40)];
        assert_eq!(label_patch(10, 10, &inside, &LabelRule::default()), Label::Positive);
        let far = [BBox::new(60, 60, 80, 80)];
        assert_eq!(label_patch(0, 0, &far, &LabelRule::default()), Label::Negative);
        // 10x10 corner overlap = 100 px = 25% of the window.
        let corner = [BBox::new(10, 10, 40, 40)];
        assert_eq!(label_patch(0, 0, &corner, &LabelRule::default()), Label::Positive);
        // one pixel column less: 90 px of 400, and of the 900 px box
        let corner = [BBox::new(11, 10, 41, 40)];
        assert_eq!(label_patch(0, 0, &corner, &LabelRule::default()), Label::Negative);
    }

    #[test]
    fn label_small_box_uses_box_area() {
        // 10x6 box fully inside the window: 60 px is only 15% of the patch.
        let small = [BBox::new(45, 47, 55, 53)];
        assert_eq!(label_patch(40, 40, &small, &LabelRule::default()), Label::Positive);
        // window holding 5 of its 10 columns: 30 / 60 = 0.5
        assert_eq!(label_patch(40, 50, &small, &LabelRule::default()), Label::Positive);
        // window holding 4 of its 10 columns: 24 / 60 = 0.4
        assert_eq!(label_patch(40, 51, &small, &LabelRule::default()), Label::Negative);
        let patch_only = LabelRule {
            min_box_fraction: 1.0,
            ..LabelRule::default()
        };
        assert_eq!(label_patch(40, 50, &small, &patch_only), Label::Negative);
        assert_eq!(label_patch(40, 40, &small, &patch_only), Label::Positive);
    }

    #[test]
    fn label_rule_validation() {
        assert!(LabelRule::default().validate().is_ok());
        assert!(LabelRule { min_overlap: 0.0, ..LabelRule::default() }.validate().is_err());
        assert!(LabelRule { min_box_fraction: 1.5, ..LabelRule::default() }.validate().is_err());
    }

    #[test]
    fn centered_positive() {
        let af = field("s", 0, 100, 100, vec![BBox::new(45, 47, 55, 53)]);
        let p = extract_positive_patches(&af, &LabelRule::default()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].origin.top, p[0].origin.left), (40, 40));
        assert_eq!(p[0].pixels.shape(), &[20, 20, 3]);
        assert_eq!(p[0].label, Label::Positive);
    }

    #[test]
    fn corner_positive_is_clamped() {
        let af = field("s", 0, 100, 100, vec![BBox::new(0, 0, 4, 6)]);
        let p = extract_positive_patches(&af, &LabelRule::default()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].origin.top, p[0].origin.left), (0, 0));
        let af = field("s", 0, 100, 100, vec![BBox::new(95, 97, 100, 100)]);
        let p = extract_positive_patches(&af, &LabelRule::default()).unwrap();
        assert_eq!((p[0].origin.top, p[0].origin.left), (80, 80));
    }

    #[test]
    fn large_box_is_tiled() {
        let af = field("s", 0, 100, 100, vec![BBox::new(10, 10, 55, 35)]);
        let p = extract_positive_patches(&af, &LabelRule::default()).unwrap();
        // centered window plus a 3x2 tiling; the (30, 50) tile only holds a
        // 5x5 corner and is dropped
        assert_eq!(p.len(), 6);
        assert!(!p.iter().any(|s| (s.origin.top, s.origin.left) == (30, 50)));
        for s in &p {
            assert_eq!(label_patch(s.origin.top, s.origin.left, &af.boxes, &LabelRule::default()), Label::Positive);
        }
    }

    #[test]
    fn no_annotations_no_positives() {
        let af = field("s", 0, 100, 100, vec![]);
        assert!(extract_positive_patches(&af, &LabelRule::default()).unwrap().is_empty());
    }

    #[test]
    fn box_outside_image_is_error() {
        let af = field("s", 0, 100, 100, vec![BBox::new(90, 90, 110, 95)]);
        assert!(matches!(
            extract_positive_patches(&af, &LabelRule::default()),
            Err(CorpusError::Annotation(_))
        ));
    }

    #[test]
    fn negatives_are_seeded_distinct_and_negative() {
        let af = field("s", 0, 60, 60, vec![BBox::new(20, 20, 30, 30)]);
        let rule = LabelRule::default();
        let a = sample_negatives(&af, 37, 5, &rule).unwrap();
        let b = sample_negatives(&af, 37, 5, &rule).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 37);
        let positions: HashSet<_> = a.iter().map(|s| (s.origin.top, s.origin.left)).collect();
        assert_eq!(positions.len(), 37);
        for s in &a {
            assert_eq!(label_patch(s.origin.top, s.origin.left, &af.boxes, &rule), Label::Negative);
        }
        let c = sample_negatives(&af, 37, 6, &rule).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fully_annotated_field_has_no_negatives() {
        let af = field("s", 0, 40, 40, vec![BBox::new(0, 0, 40, 40)]);
        assert!(matches!(
            sample_negatives(&af, 1, 0, &LabelRule::default()),
            Err(CorpusError::InsufficientNegatives { requested: 1, available: 0 })
        ));
    }

    #[test]
    fn undersampling_balances_and_keeps_minority() {
        let af = field("s", 0, 60, 60, vec![]);
        let mk = |i: usize, pos: bool| PatchSample {
            pixels: af.field.image.slice_patch(0, 0, 20, 20).unwrap(),
            label: Label::from_positive(pos),
            origin: PatchOrigin::new("s", 0, i, 0),
        };
        let samples: Vec<_> = (0..30).map(|i| mk(i, i % 7 == 0)).collect();
        let capped = undersample_capped(samples.clone(), Some(2), 3);
        assert_eq!(PatchDataset::class_counts(&capped), (2, 2));
        let out = undersample_majority(samples.clone(), 3);
        let (neg, pos) = PatchDataset::class_counts(&out);
        assert_eq!((neg, pos), (5, 5));
        assert!(out.windows(2).all(|w| w[0].origin.top < w[1].origin.top));
        assert_eq!(out, undersample_majority(samples.clone(), 3));
        let only_neg: Vec<_> = samples.into_iter().filter(|s| !s.label.is_positive()).collect();
        assert_eq!(undersample_majority(only_neg.clone(), 3), only_neg);
    }

    #[test]
    fn tiling_counts() {
        assert_eq!(tile_positions(100, 100, 20).len(), 25);
        assert_eq!(tile_positions(100, 100, 10).len(), 81);
        assert_eq!(tile_positions(19, 100, 1).len(), 0);
        assert_eq!(tile_positions(100, 100, 20)[5], (20, 0));
    }

    #[test]
    fn balanced_dataset_respects_split() {
        let corpus = Corpus {
            slides: vec![
                slide("a", 10, |i| vec![BBox::new(5 + i, 30, 15 + i, 36), BBox::new(60, 60, 70, 66)]),
                slide("b", 10, |i| if i % 2 == 0 { vec![BBox::new(40, 40, 48, 52)] } else { vec![] }),
            ],
        };
        corpus.validate().unwrap();
        let split = SplitAssignment::for_corpus(&corpus, &SplitFractions::default()).unwrap();
        let ds = build_patch_dataset(&corpus, &split, true, 0, 9, &LabelRule::default()).unwrap();
        let (neg, pos) = PatchDataset::class_counts(&ds.train);
        assert_eq!(neg, pos);
        assert!(pos > 0);
        // test: 2 fields per slide, 25 tiles each
        assert_eq!(ds.test.len(), 2 * 2 * 25);
        for slide_id in ["a", "b"] {
            let max_train = ds.train.iter().filter(|s| s.origin.slide_id == slide_id).map(|s| s.origin.viewfield).max().unwrap();
            let min_test = ds.test.iter().filter(|s| s.origin.slide_id == slide_id).map(|s| s.origin.viewfield).min().unwrap();
            assert!(max_train < min_test);
        }
        // every sample relabels to its own label
        for s in ds.train.iter().chain(&ds.test) {
            let af = &corpus.slides.iter().find(|sl| sl.id == s.origin.slide_id).unwrap().fields[s.origin.viewfield];
            assert_eq!(label_patch(s.origin.top, s.origin.left, &af.boxes, &LabelRule::default()), s.label);
        }
        let again = build_patch_dataset(&corpus, &split, true, 0, 9, &LabelRule::default()).unwrap();
        assert_eq!(again.train, ds.train);

        let unbalanced = build_patch_dataset(&corpus, &split, false, 0, 9, &LabelRule::default()).unwrap();
        let (neg_u, pos_u) = PatchDataset::class_counts(&unbalanced.train);
        assert_eq!(pos_u, pos);
        assert!(neg_u > pos_u);
    }

    #[test]
    fn jittered_positives_are_distinct_and_positive() {
        let b = BBox::new(45, 47, 55, 53);
        let af = AnnotatedField {
            field: ViewField {
                slide_id: "s".into(),
                index: 0,
                image: Tensor::zeros(&[100, 100, 3]).unwrap(),
            },
            boxes: vec![b],
        };
        let rule = LabelRule::default();
        let plain = extract_positive_patches(&af, &rule).unwrap();
        let jit = extract_jittered_positives(&af, &rule, 6, 3).unwrap();
        assert_eq!(jit.len(), 7);
        assert_eq!(jit[0], plain[0]);
        let distinct: HashSet<_> = jit.iter().map(|s| (s.origin.top, s.origin.left)).collect();
        assert_eq!(distinct.len(), 7);
        for s in &jit {
            assert!(rule.covers(&s.origin.window(), &b));
        }
        assert_eq!(extract_jittered_positives(&af, &rule, 6, 3).unwrap(), jit);
        assert_ne!(extract_jittered_positives(&af, &rule, 6, 4).unwrap(), jit);
        // asking for more than exist returns every candidate once
        let all = extract_jittered_positives(&af, &rule, 100_000, 3).unwrap();
        let brute = tile_positions(100, 100, 1)
            .into_iter()
            .filter(|&(t, l)| rule.covers(&PatchOrigin::new("", 0, t, l).window(), &b))
            .count();
        assert_eq!(all.len(), brute);
    }

    #[test]
    fn empty_test_partition_is_split_error() {
        let corpus = Corpus {
            slides: vec![slide("a", 3, |_| vec![BBox::new(40, 40, 48, 52)])],
        };
        let split = SplitAssignment::for_corpus(&corpus, &SplitFractions::default()).unwrap();
        assert!(matches!(
            build_patch_dataset(&corpus, &split, true, 0, 0, &LabelRule::default()),
            Err(CorpusError::Split(_))
        ));
    }
}
