//! Two-stage cascade.
//!
//! Stage 1 is trained on a class-balanced patch set and over-fires on the
//! real, heavily skewed distribution. Stage 2 has the same architecture and
//! is trained on stage 1's positives over the exhaustive train tiling,
//! relabelled true positive (1) vs false positive (0). At inference a patch
//! is positive only if both stages accept it; stage 2 runs only on patches
//! stage 1 accepted.

mod format;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    build_patch_dataset, label_patch, AnnotatedField, undersample_capped, Corpus, CorpusError,
    LabelRule, Partition, PatchDataset, PatchOrigin, PatchSample, SplitAssignment, SplitFractions,
};
use crate::micronet::{sgd_train, NetError, NetworkModel, TrainConfig, PATCH_SIZE};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

pub use format::{CASCADE_MAGIC, CASCADE_VERSION};

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("stage-1 training set is not balanced: {negatives} negatives vs {positives} positives")]
    Unbalanced { negatives: usize, positives: usize },
    #[error("stage 1 accepted no train patch; nothing to harvest")]
    EmptyHarvest,
    #[error("invalid threshold {0}: must lie in (0, 1)")]
    Threshold(f32),
    #[error("invalid cascade config: {0}")]
    Config(String),
    #[error("cascade format: {0}")]
    Format(#[from] crate::FormatError),
    #[error("micronet: {0}")]
    Net(#[from] NetError),
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Second stage: a trained network, or a pass-through that accepts everything.
#[derive(Debug, Clone, PartialEq)]
pub enum Stage2 {
    Network(NetworkModel),
    PassThrough,
}

impl Stage2 {
    pub fn positive_probability(&self, raw_patch: &Tensor) -> Result<f32, NetError> {
        match self {
            Stage2::Network(m) => Ok(m.predict(raw_patch)?[1]),
            Stage2::PassThrough => Ok(1.0),
        }
    }

    pub fn is_pass_through(&self) -> bool {
        matches!(self, Stage2::PassThrough)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub stage1: NetworkModel,
    pub stage2: Stage2,
    pub threshold_1: f32,
    pub threshold_2: f32,
}

/// One patch's path through the cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub origin: PatchOrigin,
    pub stage1_probability: f32,
    pub stage1_positive: bool,
    /// Present iff `stage1_positive`.
    pub stage2_probability: Option<f32>,
    pub positive: bool,
}

fn check_threshold(t: f32) -> Result<f32, CascadeError> {
    if t > 0.0 && t < 1.0 {
        Ok(t)
    } else {
        Err(CascadeError::Threshold(t))
    }
}

impl CascadeModel {
    pub fn new(stage1: NetworkModel, stage2: Stage2, threshold_1: f32, threshold_2: f32) -> Result<Self, CascadeError> {
        Ok(CascadeModel {
            stage1,
            stage2,
            threshold_1: check_threshold(threshold_1)?,
            threshold_2: check_threshold(threshold_2)?,
        })
    }

    /// The same cascade with stage 2 replaced by a pass-through.
    pub fn stage1_only(&self) -> CascadeModel {
        CascadeModel {
            stage2: Stage2::PassThrough,
            ..self.clone()
        }
    }

    /// Classifies one byte-scale 20x20x3 patch.
    pub fn classify(&self, raw_patch: &Tensor, origin: PatchOrigin) -> Result<StageTrace, CascadeError> {
        let p1 = self.stage1.predict(raw_patch)?[1];
        let fired = p1 >= self.threshold_1;
        let p2 = if fired {
            Some(self.stage2.positive_probability(raw_patch)?)
        } else {
            None
        };
        Ok(StageTrace {
            origin,
            stage1_probability: p1,
            stage1_positive: fired,
            stage2_probability: p2,
            positive: p2.is_some_and(|p| p >= self.threshold_2),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CascadeError> {
        format::decode(bytes)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), CascadeError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CascadeError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Free-function form of [`CascadeModel::classify`].
pub fn cascade_classify(raw_patch: &Tensor, origin: PatchOrigin, model: &CascadeModel) -> Result<StageTrace, CascadeError> {
    model.classify(raw_patch, origin)
}

/// Trains stage 1 from a fresh initialization. The sample set must hold
/// exactly as many negatives as positives.
pub fn train_stage1(samples: &[PatchSample], cfg: &TrainConfig) -> Result<crate::micronet::TrainOutcome, CascadeError> {
    let (negatives, positives) = PatchDataset::class_counts(samples);
    if negatives != positives {
        return Err(CascadeError::Unbalanced {
            negatives,
            positives,
        });
    }
    let init = NetworkModel::with_default_architecture(cfg.seed, cfg.weight_init_scale)?;
    Ok(sgd_train(init, samples, cfg)?)
}

/// Stage 1's accepted patches, relabelled: 1 for true positives, 0 for false positives.
#[derive(Debug, Clone)]
pub struct Harvest {
    pub samples: Vec<PatchSample>,
    pub true_positives: usize,
    pub false_positives: usize,
    /// Size of the tiling the harvest was drawn from.
    pub scanned: usize,
}

/// Runs stage 1 over a labelled tiling and keeps every patch it accepts.
pub fn harvest_stage2_set(stage1: &NetworkModel, tiling: &[PatchSample], threshold_1: f32) -> Result<Harvest, CascadeError> {
    let mut samples = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for s in tiling {
        if stage1.predict(&s.pixels)?[1] >= threshold_1 {
            if s.label.is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            samples.push(s.clone());
        }
    }
    if samples.is_empty() {
        return Err(CascadeError::EmptyHarvest);
    }
    Ok(Harvest {
        samples,
        true_positives: tp,
        false_positives: fp,
        scanned: tiling.len(),
    })
}

/// Keeps a seeded uniform subset of at most `cap` items from a stream.
struct Reservoir<T> {
    cap: Option<usize>,
    seen: usize,
    items: Vec<T>,
}

impl<T> Reservoir<T> {
    fn new(cap: Option<usize>) -> Self {
        Reservoir {
            cap,
            seen: 0,
            items: Vec::new(),
        }
    }

    fn offer(&mut self, rng: &mut ChaCha8Rng, make: impl FnOnce() -> T) {
        self.seen += 1;
        match self.cap {
            Some(cap) if self.items.len() >= cap => {
                let j = rng.random_range(0..self.seen);
                if j < cap {
                    self.items[j] = make();
                }
            }
            _ => self.items.push(make()),
        }
    }
}

/// Harvest over the stride-`stride` tiling of `fields`. Stage 1 is run
/// densely where that is cheaper, so small strides stay affordable. With
/// `max_per_label`, a seeded uniform subset of at most that many patches of
/// each label is kept; the counts always cover the whole scan.
pub fn harvest_fields(
    stage1: &NetworkModel,
    fields: &[&AnnotatedField],
    stride: usize,
    threshold_1: f32,
    rule: &LabelRule,
    max_per_label: Option<usize>,
    seed: u64,
) -> Result<Harvest, CascadeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = [Reservoir::new(max_per_label), Reservoir::new(max_per_label)];
    let mut scanned = 0;
    let mut order = 0usize;
    for af in fields {
        for (top, left, p) in stage1.tiled_probabilities(&af.field.image, stride)? {
            scanned += 1;
            if p < threshold_1 {
                continue;
            }
            let label = label_patch(top, left, &af.boxes, rule);
            order += 1;
            kept[label.index()].offer(&mut rng, || (order, top, left, *af));
        }
    }
    let (tp, fp) = (kept[1].seen, kept[0].seen);
    if tp + fp == 0 {
        return Err(CascadeError::EmptyHarvest);
    }
    let mut picked: Vec<_> = kept.into_iter().flat_map(|r| r.items).collect();
    picked.sort_unstable_by_key(|&(o, ..)| o);
    let samples = picked
        .into_iter()
        .map(|(_, top, left, af)| {
            Ok(PatchSample {
                pixels: af.field.image.slice_patch(top, left, PATCH_SIZE, PATCH_SIZE).map_err(CorpusError::from)?,
                label: label_patch(top, left, &af.boxes, rule),
                origin: PatchOrigin::new(af.field.slide_id.clone(), af.field.index, top, left),
            })
        })
        .collect::<Result<_, CascadeError>>()?;
    Ok(Harvest {
        samples,
        true_positives: tp,
        false_positives: fp,
        scanned,
    })
}

#[derive(Debug, Clone)]
pub struct Stage2Outcome {
    pub stage2: Stage2,
    pub epoch_losses: Vec<f32>,
    /// Samples actually trained on after balancing and holdout.
    pub trained_on: usize,
    pub validation: Option<Validation>,
}

/// Accuracy of stage 2 on held-out harvested patches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub samples: usize,
    pub accuracy: f64,
}

/// How a harvest becomes the stage-2 training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Sampling {
    /// Upper bound on each label after balancing.
    pub max_per_class: Option<usize>,
    /// Fraction of each balanced label held out for validation.
    pub holdout: f64,
    /// Acceptance threshold used when scoring the holdout.
    pub threshold: f32,
    pub seed: u64,
}

impl Default for Stage2Sampling {
    fn default() -> Self {
        Stage2Sampling {
            max_per_class: None,
            holdout: 0.0,
            threshold: 0.5,
            seed: 0,
        }
    }
}

/// Moves `round(fraction * n)` samples of each label into the second set.
/// Both halves keep their input order.
pub fn holdout_split(samples: Vec<PatchSample>, fraction: f64, seed: u64) -> (Vec<PatchSample>, Vec<PatchSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = vec![false; samples.len()];
    for positive in [false, true] {
        let idx: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].label.is_positive() == positive)
            .collect();
        let k = ((fraction * idx.len() as f64).round() as usize).min(idx.len());
        for j in rand::seq::index::sample(&mut rng, idx.len(), k) {
            held[idx[j]] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (s, h) in samples.into_iter().zip(held) {
        if h {
            val.push(s);
        } else {
            train.push(s);
        }
    }
    (train, val)
}

/// Trains stage 2 on a harvest after undersampling its majority label,
/// capping both labels and holding some of each out for validation. A
/// harvest holding a single label gives a pass-through stage.
pub fn train_stage2(harvest: &Harvest, cfg: &TrainConfig, sampling: &Stage2Sampling) -> Result<Stage2Outcome, CascadeError> {
    if harvest.true_positives == 0 || harvest.false_positives == 0 {
        log::warn!(
            "harvest has {} true and {} false positives; stage 2 is a pass-through",
            harvest.true_positives,
            harvest.false_positives
        );
        return Ok(Stage2Outcome {
            stage2: Stage2::PassThrough,
            epoch_losses: Vec::new(),
            trained_on: 0,
            validation: None,
        });
    }
    let balanced = undersample_capped(harvest.samples.clone(), sampling.max_per_class, sampling.seed);
    let (train, val) = holdout_split(balanced, sampling.holdout, derive_seed(sampling.seed, "holdout"));
    let init = NetworkModel::with_default_architecture(cfg.seed, cfg.weight_init_scale)?;
    let out = sgd_train(init, &train, cfg)?;
    let validation = if val.is_empty() {
        None
    } else {
        let mut correct = 0;
        for s in &val {
            let p = out.model.predict(&s.pixels)?[1];
            if (p >= sampling.threshold) == s.label.is_positive() {
                correct += 1;
            }
        }
        Some(Validation {
            samples: val.len(),
            accuracy: correct as f64 / val.len() as f64,
        })
    };
    Ok(Stage2Outcome {
        stage2: Stage2::Network(out.model),
        epoch_losses: out.epoch_losses,
        trained_on: train.len(),
        validation,
    })
}

/// Everything needed to train a cascade from a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeTrainConfig {
    /// Root seed; every random stream is derived from it by name.
    pub seed: u64,
    pub fractions: SplitFractions,
    pub label_rule: LabelRule,
    /// Extra off-center positive windows per box in the stage-1 set.
    pub positive_jitter: usize,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub stage2_enabled: bool,
    /// Stride of the train tiling that stage 1 is harvested over.
    pub harvest_stride: usize,
    /// Upper bound on each label of the balanced stage-2 set.
    pub stage2_max_per_class: Option<usize>,
    /// Fraction of each stage-2 label held out to measure its accuracy.
    pub stage2_holdout: f64,
    pub threshold_1: f32,
    pub threshold_2: f32,
}

/// Init bound multiplier for cascade stages; sqrt(6) is He-uniform, which
/// keeps the ReLU stack out of the dead start a unit bound gives it.
pub const CASCADE_INIT_SCALE: f32 = 2.449;

impl Default for CascadeTrainConfig {
    fn default() -> Self {
        CascadeTrainConfig {
            seed: 42,
            fractions: SplitFractions::default(),
            label_rule: LabelRule::default(),
            positive_jitter: 4,
            stage1: TrainConfig {
                weight_init_scale: CASCADE_INIT_SCALE,
                ..TrainConfig::default()
            },
            stage2: TrainConfig {
                batch_size: 8,
                weight_init_scale: CASCADE_INIT_SCALE,
                ..TrainConfig::default()
            },
            stage2_enabled: true,
            harvest_stride: 1,
            stage2_max_per_class: Some(1000),
            stage2_holdout: 0.2,
            threshold_1: 0.5,
            threshold_2: 0.5,
        }
    }
}

impl CascadeTrainConfig {
    /// Stage configs with their seeds replaced by the derived ones.
    pub fn effective_stage_configs(&self) -> (TrainConfig, TrainConfig) {
        (
            TrainConfig {
                seed: derive_seed(self.seed, "stage1"),
                ..self.stage1.clone()
            },
            TrainConfig {
                seed: derive_seed(self.seed, "stage2"),
                ..self.stage2.clone()
            },
        )
    }
}

/// Counts and loss traces gathered while training a cascade.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingLog {
    pub config: CascadeTrainConfig,
    pub stage1_seed: u64,
    pub stage2_seed: u64,
    pub train_positives: usize,
    pub train_negatives: usize,
    pub stage1_losses: Vec<f32>,
    pub harvest_scanned: usize,
    pub harvest_true_positives: usize,
    pub harvest_false_positives: usize,
    pub stage2_trained_on: usize,
    pub stage2_validation: Option<Validation>,
    pub stage2_losses: Vec<f32>,
    pub stage2_pass_through: bool,
}

#[derive(Debug, Clone)]
pub struct TrainedCascade {
    pub model: CascadeModel,
    pub log: TrainingLog,
}

/// The balanced patch set stage 1 is trained on.
pub fn stage1_training_set(
    corpus: &Corpus,
    split: &SplitAssignment,
    cfg: &CascadeTrainConfig,
) -> Result<Vec<PatchSample>, CascadeError> {
    let seed = derive_seed(cfg.seed, "negatives");
    Ok(build_patch_dataset(corpus, split, true, cfg.positive_jitter, seed, &cfg.label_rule)?.train)
}

/// Split, balanced extraction, stage 1, harvest over the train fields,
/// stage 2.
pub fn train_cascade(corpus: &Corpus, cfg: &CascadeTrainConfig) -> Result<TrainedCascade, CascadeError> {
    check_threshold(cfg.threshold_1)?;
    check_threshold(cfg.threshold_2)?;
    if !(0.0..1.0).contains(&cfg.stage2_holdout) {
        return Err(CascadeError::Config(format!("stage2_holdout {} not in [0, 1)", cfg.stage2_holdout)));
    }
    if cfg.harvest_stride == 0 {
        return Err(CascadeError::Config("harvest_stride must be at least 1".into()));
    }
    cfg.label_rule.validate()?;
    corpus.validate()?;
    let split = SplitAssignment::for_corpus(corpus, &cfg.fractions)?;
    let train = stage1_training_set(corpus, &split, cfg)?;
    let (train_negatives, train_positives) = PatchDataset::class_counts(&train);
    log::info!("stage 1: {train_positives} positive and {train_negatives} negative train patches");

    let (s1_cfg, s2_cfg) = cfg.effective_stage_configs();
    let stage1 = train_stage1(&train, &s1_cfg)?;

    let mut log = TrainingLog {
        config: cfg.clone(),
        stage1_seed: s1_cfg.seed,
        stage2_seed: s2_cfg.seed,
        train_positives,
        train_negatives,
        stage1_losses: stage1.epoch_losses,
        harvest_scanned: 0,
        harvest_true_positives: 0,
        harvest_false_positives: 0,
        stage2_trained_on: 0,
        stage2_validation: None,
        stage2_losses: Vec::new(),
        stage2_pass_through: true,
    };

    let stage2 = if cfg.stage2_enabled {
        let fields = split.fields(corpus, Partition::Train);
        let harvest = harvest_fields(
            &stage1.model,
            &fields,
            cfg.harvest_stride,
            cfg.threshold_1,
            &cfg.label_rule,
            cfg.stage2_max_per_class,
            derive_seed(cfg.seed, "harvest-sample"),
        )?;
        log::info!(
            "harvest: {} true / {} false positives out of {} train windows",
            harvest.true_positives,
            harvest.false_positives,
            harvest.scanned
        );
        log.harvest_scanned = harvest.scanned;
        log.harvest_true_positives = harvest.true_positives;
        log.harvest_false_positives = harvest.false_positives;
        let sampling = Stage2Sampling {
            max_per_class: cfg.stage2_max_per_class,
            holdout: cfg.stage2_holdout,
            threshold: cfg.threshold_2,
            seed: derive_seed(cfg.seed, "harvest"),
        };
        let out = train_stage2(&harvest, &s2_cfg, &sampling)?;
        if let Some(v) = out.validation {
            log::info!("stage 2: accuracy {:.3} on {} held-out patches", v.accuracy, v.samples);
        }
        log.stage2_trained_on = out.trained_on;
        log.stage2_validation = out.validation;
        log.stage2_losses = out.epoch_losses;
        out.stage2
    } else {
        Stage2::PassThrough
    };
    log.stage2_pass_through = stage2.is_pass_through();

    Ok(TrainedCascade {
        model: CascadeModel::new(stage1.model, stage2, cfg.threshold_1, cfg.threshold_2)?,
        log,
    })
}
