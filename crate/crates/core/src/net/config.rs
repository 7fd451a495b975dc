use crate::error::{Error, Result};
use crate::kv::KvBlock;

/// Topology and regularization knobs of the attention branch network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub frames: usize,
    pub input_channels: usize,
    pub height: usize,
    pub width: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    /// Stages `[0, split_stage)` form the shared feature extractor; the
    /// remaining stages are replicated in the attention and perception
    /// branches.
    pub split_stage: usize,
    pub se_reduction: usize,
    pub dropout_rate: f64,
    pub batchnorm: bool,
}

impl Default for ModelConfig {
    /// Desk-scale default: 4 classes, 8 frames of 32×32, stages [16, 32, 64].
    fn default() -> Self {
        ModelConfig {
            num_classes: 4,
            frames: 8,
            input_channels: 1,
            height: 32,
            width: 32,
            stage_channels: vec![16, 32, 64],
            blocks_per_stage: vec![1, 1, 1],
            split_stage: 2,
            se_reduction: 2,
            dropout_rate: 0.5,
            batchnorm: true,
        }
    }
}

impl ModelConfig {
    /// The smallest useful configuration, used for full-model gradient checks.
    pub fn micro() -> Self {
        ModelConfig {
            num_classes: 2,
            frames: 2,
            input_channels: 1,
            height: 8,
            width: 8,
            stage_channels: vec![2, 2],
            blocks_per_stage: vec![1, 1],
            split_stage: 1,
            se_reduction: 2,
            dropout_rate: 0.5,
            batchnorm: true,
        }
    }

    /// Channels of the feature maps handed to both branches.
    pub fn feature_channels(&self) -> usize {
        if self.split_stage == 0 {
            self.stage_channels[0]
        } else {
            self.stage_channels[self.split_stage - 1]
        }
    }

    /// Spatial extents (H', W') of the extractor output.
    pub fn feature_size(&self) -> (usize, usize) {
        let stride = 1 << self.split_stage;
        (self.height / stride, self.width / stride)
    }

    /// Hidden width of the temporal gate, `⌈T / r⌉`.
    pub fn temporal_hidden(&self) -> usize {
        self.frames.div_ceil(self.se_reduction)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_classes < 2 {
            problems.push(format!("num_classes must be ≥ 2, got {}", self.num_classes));
        }
        if self.frames < 1 {
            problems.push("frames must be ≥ 1".to_string());
        }
        if self.input_channels < 1 {
            problems.push("input_channels must be ≥ 1".to_string());
        }
        if self.stage_channels.is_empty() {
            problems.push("stage_channels must not be empty".to_string());
        }
        if self.stage_channels.contains(&0) {
            problems.push("stage_channels entries must be ≥ 1".to_string());
        }
        if self.blocks_per_stage.len() != self.stage_channels.len() {
            problems.push(format!(
                "blocks_per_stage has {} entries, stage_channels has {}",
                self.blocks_per_stage.len(),
                self.stage_channels.len()
            ));
        }
        if self.blocks_per_stage.contains(&0) {
            problems.push("blocks_per_stage entries must be ≥ 1".to_string());
        }
        if self.split_stage >= self.stage_channels.len() {
            problems.push(format!(
                "split_stage {} must be below the stage count {}",
                self.split_stage,
                self.stage_channels.len()
            ));
        }
        if self.se_reduction < 1 {
            problems.push("se_reduction must be ≥ 1".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            problems.push(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        let stride = 1usize << self.split_stage.min(16);
        if self.height == 0 || self.width == 0 {
            problems.push("height and width must be ≥ 1".to_string());
        } else if !self.height.is_multiple_of(stride) || !self.width.is_multiple_of(stride) {
            problems.push(format!(
                "{}×{} input not divisible by the extractor stride {stride}",
                self.height, self.width
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn to_kv(&self) -> KvBlock {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut kv = KvBlock::default();
        kv.push("num_classes", self.num_classes);
        kv.push("frames", self.frames);
        kv.push("input_channels", self.input_channels);
        kv.push("height", self.height);
        kv.push("width", self.width);
        kv.push("stage_channels", list(&self.stage_channels));
        kv.push("blocks_per_stage", list(&self.blocks_per_stage));
        kv.push("split_stage", self.split_stage);
        kv.push("se_reduction", self.se_reduction);
        kv.push("dropout_rate", self.dropout_rate);
        kv.push("batchnorm", self.batchnorm);
        kv
    }

    pub fn from_kv(kv: &KvBlock) -> Result<Self> {
        let config = ModelConfig {
            num_classes: kv.parse("num_classes")?,
            frames: kv.parse("frames")?,
            input_channels: kv.parse("input_channels")?,
            height: kv.parse("height")?,
            width: kv.parse("width")?,
            stage_channels: kv.parse_list("stage_channels")?,
            blocks_per_stage: kv.parse_list("blocks_per_stage")?,
            split_stage: kv.parse("split_stage")?,
            se_reduction: kv.parse("se_reduction")?,
            dropout_rate: kv.parse("dropout_rate")?,
            batchnorm: kv.parse("batchnorm")?,
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::micro().validate().unwrap();
        assert_eq!(ModelConfig::default().feature_size(), (8, 8));
        assert_eq!(ModelConfig::default().feature_channels(), 32);
    }

    #[test]
    fn violations_are_listed_together() {
        let config = ModelConfig {
            num_classes: 1,
            split_stage: 3,
            ..ModelConfig::default()
        };
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("num_classes"), "{err}");
        assert!(err.contains("split_stage"), "{err}");
    }

    #[test]
    fn kv_round_trip() {
        let config = ModelConfig::micro();
        let text = config.to_kv().to_string();
        let back = ModelConfig::from_kv(&text.parse().unwrap()).unwrap();
        assert_eq!(back, config);
    }
}
