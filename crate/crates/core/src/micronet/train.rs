use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, NetError, NetworkModel};
use crate::corpus::{Label, PatchSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_init_scale: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            weight_init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(NetError::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(NetError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NetError::Config("batch_size must be at least 1".into()));
        }
        if !(self.weight_init_scale.is_finite() && self.weight_init_scale >= 0.0) {
            return Err(NetError::Config(format!(
                "weight_init_scale must be finite and non-negative, got {}",
                self.weight_init_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NetworkModel,
    /// Mean per-sample loss of each epoch, measured before each batch update.
    pub epoch_losses: Vec<f32>,
}

/// Minibatch SGD on cross-entropy: `w <- w - lr * mean(grad)` over each batch.
///
/// Sample order is reshuffled every epoch from `cfg.seed`; the result is a
/// pure function of `(model, samples, cfg)`.
pub fn sgd_train(
    mut model: NetworkModel,
    samples: &[PatchSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NetError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(NetError::DegenerateData("no training samples".into()));
    }
    let positives = samples.iter().filter(|s| s.label == Label::Positive).count();
    if positives == 0 || positives == samples.len() {
        return Err(NetError::DegenerateData(format!(
            "training set has a single class ({} samples, {} positive)",
            samples.len(),
            positives
        )));
    }

    let inputs = samples
        .iter()
        .map(|s| {
            NetworkModel::check_patch(&s.pixels)?;
            Ok(model.normalize(&s.pixels))
        })
        .collect::<Result<Vec<_>, NetError>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grads = Gradients::zeros_like(&model);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                let loss =
                    model.accumulate_gradients(&inputs[i], samples[i].label.index(), &mut grads)?;
                total += loss as f64;
            }
            if cfg.learning_rate != 0.0 {
                model.apply_update(&grads, -cfg.learning_rate / batch.len() as f32);
            }
        }
        let mean = (total / samples.len() as f64) as f32;
        if !mean.is_finite() {
            return Err(NetError::NonFinite("training loss"));
        }
        log::debug!("epoch {}: mean loss {:.5}", epoch + 1, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}
