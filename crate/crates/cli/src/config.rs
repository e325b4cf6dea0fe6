//! Run configuration: one TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tbscan_core::corpus::ImageFormat;
use tbscan_core::micronet::{default_architecture, ConvLayerSpec};
use tbscan_core::{CascadeTrainConfig, SynthConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus directory read by train/eval and written by synth.
    pub corpus: Option<PathBuf>,
    /// Output directory for files whose path is not given explicitly.
    pub output: Option<PathBuf>,
    /// Root seed; when set it replaces the synth and train seeds.
    pub seed: Option<u64>,
    /// Evaluation and detection stride in pixels.
    pub stride: usize,
    /// Worker cap for evaluation.
    pub threads: usize,
    /// Image format written by synth.
    pub image_format: ImageFormat,
    pub synth: SynthConfig,
    pub train: CascadeTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            output: None,
            seed: None,
            stride: 20,
            threads: 1,
            image_format: ImageFormat::Ppm,
            synth: SynthConfig::default(),
            train: CascadeTrainConfig::default(),
        }
    }
}

/// What a run actually used, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveConfig<'a> {
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub architecture: Vec<ConvLayerSpec>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Propagates the root seed and checks everything that can be checked
    /// before touching data.
    pub fn finish(mut self) -> Result<Self, CliError> {
        if let Some(seed) = self.seed {
            self.synth.seed = seed;
            self.train.seed = seed;
        }
        if self.stride == 0 {
            return Err(CliError::Usage("stride must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(CliError::Usage("threads must be at least 1".into()));
        }
        self.train
            .fractions
            .validate()
            .map_err(|e| CliError::Usage(format!("split fractions: {e}")))?;
        self.train
            .label_rule
            .validate()
            .map_err(|e| CliError::Usage(format!("label rule: {e}")))?;
        for (name, t) in [("threshold_1", self.train.threshold_1), ("threshold_2", self.train.threshold_2)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(CliError::Usage(format!("{name} {t} must lie in (0, 1)")));
            }
        }
        for (name, cfg) in [("stage1", &self.train.stage1), ("stage2", &self.train.stage2)] {
            cfg.validate().map_err(|e| CliError::Usage(format!("{name}: {e}")))?;
        }
        self.synth.validate().map_err(|e| CliError::Usage(format!("synth: {e}")))?;
        Ok(self)
    }

    pub fn echo(&self, command: &'static str) -> EffectiveConfig<'_> {
        EffectiveConfig {
            command,
            config: self,
            architecture: default_architecture(),
        }
    }

    pub fn corpus_dir(&self) -> Result<&Path, CliError> {
        self.corpus
            .as_deref()
            .ok_or_else(|| CliError::Usage("no corpus directory: pass --corpus or set `corpus`".into()))
    }

    /// `explicit`, else `name` under the output directory.
    pub fn output_path(&self, explicit: Option<&Path>, name: &str) -> Result<PathBuf, CliError> {
        match (explicit, &self.output) {
            (Some(p), _) => Ok(p.to_path_buf()),
            (None, Some(dir)) => Ok(dir.join(name)),
            (None, None) => Err(CliError::Usage(format!("no path for {name}: pass --out or set `output`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn roundtrips_through_toml() {
        let c = RunConfig {
            seed: Some(7),
            corpus: Some("c".into()),
            ..RunConfig::default()
        };
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn nested_overrides_and_root_seed() {
        let c: RunConfig = toml::from_str(
            "seed = 9\nstride = 10\n[train]\nthreshold_2 = 0.3\n[train.stage1]\nepochs = 3\n[synth]\nslides = 2\n",
        )
        .unwrap();
        let c = c.finish().unwrap();
        assert_eq!((c.synth.seed, c.train.seed, c.stride), (9, 9, 10));
        assert_eq!(c.train.stage1.epochs, 3);
        assert_eq!(c.train.stage1.batch_size, CascadeTrainConfig::default().stage1.batch_size);
        assert_eq!(c.train.threshold_2, 0.3);
        assert_eq!(c.synth.slides, 2);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        for text in [
            "stride = 0",
            "[train]\nthreshold_1 = 1.5",
            "[train.fractions]\ntrain = 0.9",
            "[train.stage1]\nbatch_size = 0",
        ] {
            let c: RunConfig = toml::from_str(text).unwrap();
            assert!(matches!(c.finish(), Err(CliError::Usage(_))), "{text}");
        }
    }
}
