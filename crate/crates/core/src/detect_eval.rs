//! Sliding-window detection, patchwise confusion counts and overlays.
//!
//! The unit of truth is the 20x20 window: there is no box merging or
//! suppression. Metrics with a zero denominator are NaN in memory and
//! `null` in JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{CascadeError, CascadeModel, StageTrace};
use crate::corpus::{
    label_patch, tile_positions, write_image, AnnotatedField, BBox, Corpus, CorpusError, ImageFormat,
    LabelRule, Partition, PatchOrigin, SplitAssignment, ViewField,
};
use crate::micronet::PATCH_SIZE;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("view-field {slide_id}/{index} is {height}x{width}, smaller than a 20x20 patch")]
    TooSmall {
        slide_id: String,
        index: usize,
        height: usize,
        width: usize,
    },
    #[error("stride must be at least 1")]
    Stride,
    #[error("test partition is empty")]
    EmptyTest,
    #[error("overlay output {0} must end in .png or .ppm")]
    OverlayFormat(String),
    #[error("cascade: {0}")]
    Cascade(#[from] CascadeError),
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One classified window of a view-field. `truth` is absent when the field
/// carries no annotations (plain detection).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub top: usize,
    pub left: usize,
    pub stage1_probability: f32,
    pub stage1_positive: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage2_probability: Option<f32>,
    pub positive: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub truth: Option<bool>,
}

impl WindowRecord {
    fn from_trace(t: StageTrace, truth: Option<bool>) -> Self {
        WindowRecord {
            top: t.origin.top,
            left: t.origin.left,
            stage1_probability: t.stage1_probability,
            stage1_positive: t.stage1_positive,
            stage2_probability: t.stage2_probability,
            positive: t.positive,
            truth,
        }
    }

    pub fn window(&self) -> BBox {
        BBox::new(self.left, self.top, self.left + PATCH_SIZE, self.top + PATCH_SIZE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRecord {
    pub slide_id: String,
    pub viewfield: usize,
    pub windows: Vec<WindowRecord>,
}

/// Classifies every 20x20 window at `(r * stride, c * stride)`, row-major.
pub fn detect_viewfield(vf: &ViewField, model: &CascadeModel, stride: usize) -> Result<Vec<StageTrace>, EvalError> {
    if stride == 0 {
        return Err(EvalError::Stride);
    }
    let (height, width, _) = vf.image.hwc().map_err(CorpusError::from)?;
    if height < PATCH_SIZE || width < PATCH_SIZE {
        return Err(EvalError::TooSmall {
            slide_id: vf.slide_id.clone(),
            index: vf.index,
            height,
            width,
        });
    }
    tile_positions(height, width, stride)
        .into_iter()
        .map(|(top, left)| {
            let patch = vf
                .image
                .slice_patch(top, left, PATCH_SIZE, PATCH_SIZE)
                .map_err(CorpusError::from)?;
            Ok(model.classify(&patch, PatchOrigin::new(vf.slide_id.clone(), vf.index, top, left))?)
        })
        .collect()
}

fn evaluate_field(af: &AnnotatedField, model: &CascadeModel, stride: usize, rule: &LabelRule) -> Result<FieldRecord, EvalError> {
    let windows = detect_viewfield(&af.field, model, stride)?
        .into_iter()
        .map(|t| {
            let truth = label_patch(t.origin.top, t.origin.left, &af.boxes, rule).is_positive();
            WindowRecord::from_trace(t, Some(truth))
        })
        .collect();
    Ok(FieldRecord {
        slide_id: af.field.slide_id.clone(),
        viewfield: af.field.index,
        windows,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, truth: bool) {
        match (predicted, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Counts over every window that has ground truth.
    pub fn from_records(fields: &[FieldRecord]) -> Confusion {
        let mut c = Confusion::default();
        for w in fields.iter().flat_map(|f| &f.windows) {
            if let Some(truth) = w.truth {
                c.add(w.positive, truth);
            }
        }
        c
    }

    pub fn metrics(&self) -> Metrics {
        let ratio = |num: usize, den: usize| if den == 0 { f64::NAN } else { num as f64 / den as f64 };
        Metrics {
            recall: ratio(self.tp, self.tp + self.fn_),
            precision: ratio(self.tp, self.tp + self.fp),
            accuracy: ratio(self.tp + self.tn, self.total()),
        }
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Patchwise metrics; NaN marks an undefined ratio.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(with = "nan_as_null")]
    pub recall: f64,
    #[serde(with = "nan_as_null")]
    pub precision: f64,
    #[serde(with = "nan_as_null")]
    pub accuracy: f64,
}

impl PartialEq for Metrics {
    fn eq(&self, other: &Self) -> bool {
        let same = |a: f64, b: f64| (a.is_nan() && b.is_nan()) || a == b;
        same(self.recall, other.recall) && same(self.precision, other.precision) && same(self.accuracy, other.accuracy)
    }
}

/// Settings that produced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub stride: usize,
    pub label_rule: LabelRule,
    pub threshold_1: f32,
    pub threshold_2: f32,
    pub stage2_pass_through: bool,
    pub stage1_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage2_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub settings: EvalSettings,
    pub windows: usize,
    pub confusion: Confusion,
    pub metrics: Metrics,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub fields: Vec<FieldRecord>,
}

impl DetectionReport {
    pub fn from_fields(settings: EvalSettings, fields: Vec<FieldRecord>) -> Self {
        let confusion = Confusion::from_records(&fields);
        if confusion.tp + confusion.fn_ == 0 {
            log::warn!("no positive windows in the evaluated fields; recall is undefined");
        }
        DetectionReport {
            settings,
            windows: fields.iter().map(|f| f.windows.len()).sum(),
            confusion,
            metrics: confusion.metrics(),
            fields,
        }
    }

    /// Pretty JSON; per-window records only when `with_records`.
    pub fn to_json(&self, with_records: bool) -> String {
        let out = if with_records {
            serde_json::to_string_pretty(self)
        } else {
            serde_json::to_string_pretty(&DetectionReport {
                fields: Vec::new(),
                ..self.clone()
            })
        };
        out.expect("report serializes")
    }

    /// Origins of every window the model accepted.
    pub fn accepted(&self) -> Vec<PatchOrigin> {
        self.fields
            .iter()
            .flat_map(|f| {
                f.windows
                    .iter()
                    .filter(|w| w.positive)
                    .map(|w| PatchOrigin::new(f.slide_id.clone(), f.viewfield, w.top, w.left))
            })
            .collect()
    }
}

fn settings_for(model: &CascadeModel, stride: usize, rule: &LabelRule) -> EvalSettings {
    EvalSettings {
        stride,
        label_rule: *rule,
        threshold_1: model.threshold_1,
        threshold_2: model.threshold_2,
        stage2_pass_through: model.stage2.is_pass_through(),
        stage1_seed: model.stage1.seed(),
        stage2_seed: match &model.stage2 {
            crate::cascade::Stage2::Network(m) => Some(m.seed()),
            crate::cascade::Stage2::PassThrough => None,
        },
    }
}

/// Evaluates `model` on the test partition. Fields are spread over up to
/// `threads` workers; records keep slide/field order regardless.
pub fn evaluate(
    corpus: &Corpus,
    split: &SplitAssignment,
    model: &CascadeModel,
    stride: usize,
    rule: &LabelRule,
    threads: usize,
) -> Result<DetectionReport, EvalError> {
    let fields = split.fields(corpus, Partition::Test);
    if fields.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let records = evaluate_fields(&fields, model, stride, rule, threads)?;
    Ok(DetectionReport::from_fields(settings_for(model, stride, rule), records))
}

/// Evaluates an explicit list of annotated fields.
pub fn evaluate_fields(
    fields: &[&AnnotatedField],
    model: &CascadeModel,
    stride: usize,
    rule: &LabelRule,
    threads: usize,
) -> Result<Vec<FieldRecord>, EvalError> {
    let threads = threads.clamp(1, fields.len().max(1));
    if threads == 1 {
        return fields.iter().map(|af| evaluate_field(af, model, stride, rule)).collect();
    }
    let chunk = fields.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = fields
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|af| evaluate_field(af, model, stride, rule))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(fields.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

pub const TP_COLOR: [u8; 3] = [0, 200, 0];
pub const FP_COLOR: [u8; 3] = [255, 220, 0];
pub const FN_COLOR: [u8; 3] = [0, 220, 255];

fn stroke(img: &mut Tensor, top: usize, left: usize, color: [u8; 3]) {
    let (h, w, _) = img.hwc().expect("rank-3 image");
    let bottom = (top + PATCH_SIZE).min(h);
    let right = (left + PATCH_SIZE).min(w);
    for y in top..bottom {
        for x in left..right {
            if y == top || y == bottom - 1 || x == left || x == right - 1 {
                for (k, &c) in color.iter().enumerate() {
                    img.set(&[y, x, k], c as f32);
                }
            }
        }
    }
}

/// Copy of `image` with 1-px window borders: green for accepted windows
/// (true positives when truth is known), yellow for false positives and
/// cyan for missed positives.
pub fn overlay_image(image: &Tensor, windows: &[WindowRecord]) -> Tensor {
    let mut out = image.clone();
    let color = |w: &WindowRecord| match (w.positive, w.truth) {
        (true, Some(false)) => Some(FP_COLOR),
        (true, _) => Some(TP_COLOR),
        (false, Some(true)) => Some(FN_COLOR),
        (false, _) => None,
    };
    // misses first so accepted windows stay on top
    for pass in [false, true] {
        for w in windows.iter().filter(|w| w.positive == pass) {
            if let Some(c) = color(w) {
                stroke(&mut out, w.top, w.left, c);
            }
        }
    }
    out
}

/// Writes [`overlay_image`] to `path`; the format follows the extension.
pub fn render_overlay(vf: &ViewField, windows: &[WindowRecord], path: &Path) -> Result<(), EvalError> {
    let format = ImageFormat::from_path(path).ok_or_else(|| EvalError::OverlayFormat(path.display().to_string()))?;
    write_image(&overlay_image(&vf.image, windows), path, format)?;
    Ok(())
}

/// Window records for plain detection (no ground truth).
pub fn records_from_traces(traces: Vec<StageTrace>) -> Vec<WindowRecord> {
    traces.into_iter().map(|t| WindowRecord::from_trace(t, None)).collect()
}
