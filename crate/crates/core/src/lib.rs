//! Patchwise bacillus detection in sputum-smear view-fields.
//!
//! 20x20 RGB patches are classified by a small fully-convolutional network;
//! a second network of the same shape, trained on the first one's positives,
//! vetoes its false positives. The crate carries its own numerics
//! ([`tensor`], [`micronet`]), the slide/split/sampling protocol
//! ([`corpus`]), a synthetic smear generator ([`synthgen`]), the cascade
//! ([`cascade`]) and the patchwise evaluation harness ([`detect_eval`]).

mod binfmt;
pub mod cascade;
pub mod corpus;
pub mod detect_eval;
pub mod micronet;
pub mod seed;
pub mod synthgen;
pub mod tensor;

pub use binfmt::FormatError;
pub use corpus::{
    AnnotatedField, Annotation, BBox, Corpus, CorpusError, Label, LabelRule, PatchOrigin,
    PatchSample, Slide, SplitAssignment, SplitFractions, ViewField,
};
pub use micronet::{ConvLayerSpec, NetError, NetworkModel, TrainConfig};
pub use tensor::{Tensor, TensorError};
pub use cascade::{CascadeError, CascadeModel, CascadeTrainConfig, Stage2, StageTrace};
pub use detect_eval::{Confusion, DetectionReport, EvalError, Metrics, WindowRecord};
pub use synthgen::{SynthConfig, SynthError};
