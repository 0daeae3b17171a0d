//! Run configuration stored as a flat TOML document.
//!
//! Every key is optional and falls back to the default toy setup. Unknown
//! keys are rejected so typos surface as configuration errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::harness::scene::SceneSpec;
use crate::kernels::ConvPath;
use crate::pyramid::{AblationFlags, ModelConfig, TrainConfig, LATTICE};
use crate::tensor::DType;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub stage_channels: [usize; 4],
    pub pyramid_channels: usize,
    pub reduction: usize,
    pub dilation: usize,
    pub conv_path: ConvPath,

    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,

    pub min_objects: usize,
    pub max_objects: usize,
    pub min_object_size: usize,
    pub max_object_size: usize,

    pub seeds: Vec<u64>,
    /// Lattice labels or comma-separated token lists.
    pub flag_sets: Vec<String>,

    pub probes: usize,
    pub tolerance: f64,
    pub fd_step: f64,
    pub oracle_cases: usize,

    pub bench_reps: usize,
    pub bench_warmup: usize,
    pub dtype: DType,

    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let scene = SceneSpec::default();
        Self {
            input_channels: model.input_channels,
            input_size: model.input_size,
            stage_channels: model.stage_channels,
            pyramid_channels: model.pyramid_channels,
            reduction: model.reduction,
            dilation: model.dilation,
            conv_path: ConvPath::Optimized,
            steps: train.steps,
            batch: train.batch,
            lr: train.lr,
            momentum: train.momentum,
            weight_decay: train.weight_decay,
            min_objects: scene.min_objects,
            max_objects: scene.max_objects,
            min_object_size: scene.min_object_size,
            max_object_size: scene.max_object_size,
            seeds: vec![0, 1, 2, 3, 4],
            flag_sets: LATTICE.iter().map(|(label, _)| label.to_string()).collect(),
            probes: 240,
            tolerance: 1e-4,
            fd_step: 1e-5,
            oracle_cases: 100,
            bench_reps: 10,
            bench_warmup: 3,
            dtype: DType::F64,
            out_dir: "out".to_string(),
        }
    }
}

impl RunConfig {
    /// Default configuration with the miniature model dimensions.
    pub fn miniature() -> Self {
        let m = ModelConfig::miniature();
        Self {
            input_size: m.input_size,
            stage_channels: m.stage_channels,
            pyramid_channels: m.pyramid_channels,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_channels: self.input_channels,
            input_size: self.input_size,
            stage_channels: self.stage_channels,
            pyramid_channels: self.pyramid_channels,
            reduction: self.reduction,
            dilation: self.dilation,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            scene: Some(self.scene_spec()),
        }
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            min_object_size: self.min_object_size,
            max_object_size: self.max_object_size,
            ..crate::pyramid::scene_spec_for(&self.model_config())
        }
    }

    pub fn parsed_flag_sets(&self) -> Result<Vec<AblationFlags>> {
        if self.flag_sets.is_empty() {
            return config_err("config: flag_sets is empty");
        }
        self.flag_sets.iter().map(|s| AblationFlags::parse(s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        self.scene_spec().validate()?;
        self.parsed_flag_sets()?;
        if self.seeds.is_empty() {
            return config_err("config: seeds is empty");
        }
        if !(self.tolerance > 0.0) || !(self.fd_step > 0.0) {
            return config_err("config: tolerance and fd_step must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_is_lossless() {
        let mut cfg = RunConfig::miniature();
        cfg.lr = 0.1 + 0.2;
        cfg.seeds = vec![7, u64::MAX >> 12];
        cfg.flag_sets = vec!["sp,ci".into(), "baseline".into()];
        cfg.dtype = DType::F32;
        cfg.conv_path = ConvPath::Naive;
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.lr.to_bits(), cfg.lr.to_bits());
    }

    #[test]
    fn partial_documents_use_defaults() {
        let cfg = RunConfig::from_toml("steps = 12\nseeds = [3]\n").unwrap();
        assert_eq!(cfg.steps, 12);
        assert_eq!(cfg.seeds, vec![3]);
        assert_eq!(cfg.batch, 4);
        assert_eq!(cfg.momentum, 0.9);
    }

    #[test]
    fn unknown_keys_and_tokens_rejected() {
        assert!(matches!(RunConfig::from_toml("stepz = 1"), Err(Error::Config(_))));
        let cfg = RunConfig::from_toml("flag_sets = [\"sp,qq\"]").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        RunConfig::miniature().validate().unwrap();
        assert_eq!(RunConfig::default().parsed_flag_sets().unwrap().len(), 10);
    }
}
