//! The three-branch network: shared feature extractor, spatio-temporal
//! attention branch, and perception branch consuming attention-weighted
//! features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{apply_edit, apply_spatial_attention, apply_temporal_attention, AttentionOverride, AttentionPair};
use super::config::ModelConfig;
use super::layers::{Conv, ConvNorm, Dense, ForwardCtx, Init, Stage};
use super::params::{ParamStore, StatsId};
use crate::error::{Error, Result};
use crate::tensor::{self, concat, BatchNormStats, ConvSpec, Tensor};

/// Logits of both branches and the attentions fed to the perception branch.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub att_logits: Tensor,
    pub per_logits: Tensor,
    pub attention: AttentionPair,
}

/// Everything up to (and including) the attention heads. The perception
/// branch can be run several times on one of these with different
/// attention overrides.
#[derive(Debug, Clone)]
pub struct AttentionStage {
    pub features: Tensor,
    pub att_logits: Tensor,
    pub attention: AttentionPair,
}

#[derive(Debug, Clone)]
struct TemporalHead {
    conv: Conv,
    frame_conv: ConvSpec,
    frame_weight: super::params::ParamId,
    frame_bias: super::params::ParamId,
    fc1: Dense,
    fc2: Dense,
}

#[derive(Debug, Clone)]
pub struct StAbnModel {
    config: ModelConfig,
    store: ParamStore,
    stem: ConvNorm,
    extractor: Vec<Stage>,
    trunk: Vec<Stage>,
    att_conv1: Conv,
    att_conv2: Conv,
    spatial_head: Conv,
    temporal_head: TemporalHead,
    fusion: Conv,
    perception: Vec<Stage>,
    classifier: Dense,
}

impl StAbnModel {
    /// Builds a model with He fan-in initialization from `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn build(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let bn = config.batchnorm;
        let k = config.num_classes;
        let t = config.frames;
        let mut store = ParamStore::default();
        let s = &mut store;

        let c0 = config.stage_channels[0];
        let stem = ConvNorm::new(
            s,
            rng,
            "extractor.stem",
            ConvSpec::new(config.input_channels, c0, [3, 3, 3]).with_padding([1, 1, 1]),
            bn,
        );

        let mut extractor = Vec::new();
        let mut cin = c0;
        for i in 0..config.split_stage {
            let cout = config.stage_channels[i];
            extractor.push(Stage::new(
                s,
                rng,
                &format!("extractor.stage{i}"),
                cin,
                cout,
                config.blocks_per_stage[i],
                2,
                bn,
            ));
            cin = cout;
        }
        let feat_c = cin;

        // The attention trunk mirrors the perception stages at stride 1 so
        // the attention maps keep the extractor's resolution.
        let mut trunk = Vec::new();
        for i in config.split_stage..config.stage_channels.len() {
            let cout = config.stage_channels[i];
            trunk.push(Stage::new(
                s,
                rng,
                &format!("branch.trunk.stage{i}"),
                cin,
                cout,
                config.blocks_per_stage[i],
                1,
                bn,
            ));
            cin = cout;
        }
        let last_c = cin;

        let att_conv1 = Conv::new(s, rng, "branch.classifier.conv1", ConvSpec::new(last_c, k, [1, 1, 1]));
        let att_conv2 = Conv::new(s, rng, "branch.classifier.conv2", ConvSpec::new(k, k, [1, 1, 1]));
        let spatial_head = Conv::with_init(s, rng, "branch.spatial.conv", ConvSpec::new(k, 1, [1, 1, 1]), Init::Glorot);

        let temporal_conv = Conv::with_init(
            s,
            rng,
            "branch.temporal.conv",
            ConvSpec::new(k, 1, [1, 3, 3]).with_padding([0, 1, 1]),
            Init::Glorot,
        );
        let frame_spec = ConvSpec::new_2d(t, t, [1, 1]);
        let frame = Conv::with_init(s, rng, "branch.temporal.frame_conv", frame_spec, Init::Glorot);
        let frame_bias = frame.bias.expect("frame conv has a bias");
        let hidden = config.temporal_hidden();
        let temporal_head = TemporalHead {
            conv: temporal_conv,
            frame_conv: frame_spec,
            frame_weight: frame.weight,
            frame_bias,
            fc1: Dense::new(s, rng, "branch.temporal.fc1", t, hidden, Init::He),
            fc2: Dense::new(s, rng, "branch.temporal.fc2", hidden, t, Init::Glorot),
        };

        let fusion = Conv::new(s, rng, "fusion.conv", ConvSpec::new(2 * feat_c, feat_c, [1, 1, 1]));

        let mut perception = Vec::new();
        let mut cin = feat_c;
        for i in config.split_stage..config.stage_channels.len() {
            let cout = config.stage_channels[i];
            perception.push(Stage::new(
                s,
                rng,
                &format!("perception.stage{i}"),
                cin,
                cout,
                config.blocks_per_stage[i],
                2,
                bn,
            ));
            cin = cout;
        }
        let classifier = Dense::new(s, rng, "perception.fc", cin, k, Init::Glorot);

        Ok(StAbnModel {
            config: config.clone(),
            store,
            stem,
            extractor,
            trunk,
            att_conv1,
            att_conv2,
            spatial_head,
            temporal_head,
            fusion,
            perception,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Commits running statistics collected by a training pass.
    pub fn apply_stats_updates(&mut self, updates: Vec<(StatsId, BatchNormStats)>) {
        for (id, stats) in updates {
            self.store.set_stats(id, stats);
        }
    }

    fn check_video(&self, video: &Tensor) -> Result<()> {
        let c = &self.config;
        let expected = [c.input_channels, c.frames, c.height, c.width];
        if video.ndim() != 5 || video.shape()[1..] != expected {
            return Err(Error::Input(format!(
                "video shape {:?}, expected [N, {}, {}, {}, {}]",
                video.shape(),
                expected[0],
                expected[1],
                expected[2],
                expected[3]
            )));
        }
        Ok(())
    }

    /// Shared feature maps `f(x)`: `[N, C, T, H', W']`.
    pub fn extract(&self, video: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        self.check_video(video)?;
        let mut h = self.stem.forward(&self.store, video, ctx)?.relu();
        for stage in &self.extractor {
            h = stage.forward(&self.store, &h, ctx)?;
        }
        Ok(h)
    }

    /// Attention-branch classification and the K per-frame maps shared by
    /// both attention heads.
    pub fn attention_branch_forward(
        &self,
        features: &Tensor,
        ctx: &mut ForwardCtx,
    ) -> Result<(Tensor, Tensor)> {
        let mut h = features.clone();
        for stage in &self.trunk {
            h = stage.forward(&self.store, &h, ctx)?;
        }
        let h = ctx.dropout(&h, self.config.dropout_rate)?;
        let k_maps = self.att_conv1.forward(&self.store, &h)?;
        let logits = tensor::gap3d(&self.att_conv2.forward(&self.store, &k_maps)?)?;
        Ok((logits, k_maps))
    }

    /// `M_s = σ(conv_{K→1}(k_maps))`: `[N, 1, T, H', W']`.
    pub fn spatial_attention(&self, k_maps: &Tensor) -> Result<Tensor> {
        Ok(self.spatial_head.forward(&self.store, k_maps)?.sigmoid())
    }

    /// SE-style frame gate `M_t`: `[N, T]`.
    pub fn temporal_attention(&self, k_maps: &Tensor) -> Result<Tensor> {
        let head = &self.temporal_head;
        let &[n, _, t, h, w] = k_maps.shape() else {
            return Err(Error::Internal(format!(
                "temporal head got shape {:?}",
                k_maps.shape()
            )));
        };
        // [N, 1, T, H, W] → frames become channels → [N, T, H, W]
        let x = head.conv.forward(&self.store, k_maps)?.reshape(&[n, t, h, w])?;
        let x = tensor::conv2d(
            &x,
            &head.frame_conv,
            &self.store.get(head.frame_weight).reshape(&[t, t, 1, 1])?,
            Some(self.store.get(head.frame_bias)),
        )?;
        let x = tensor::gap2d_spatial(&x)?;
        let x = head.fc1.forward(&self.store, &x)?.relu();
        Ok(head.fc2.forward(&self.store, &x)?.sigmoid())
    }

    /// `conv_θ(concat[(1 + M_s) ⊙ f, M_t ⊙ f])`.
    pub fn fuse_attention(&self, features: &Tensor, spatial: &Tensor, temporal: &Tensor) -> Result<Tensor> {
        let &[n, _, t, h, w] = features.shape() else {
            return Err(Error::Internal(format!(
                "fuse_attention got features {:?}",
                features.shape()
            )));
        };
        if spatial.shape() != [n, 1, t, h, w] || temporal.shape() != [n, t] {
            return Err(Error::Internal(format!(
                "attention shapes {:?} / {:?} do not fit features {:?}",
                spatial.shape(),
                temporal.shape(),
                features.shape()
            )));
        }
        let fs = apply_spatial_attention(features, spatial)?;
        let ft = apply_temporal_attention(features, temporal)?;
        self.fusion.forward(&self.store, &concat(&[&fs, &ft], 1)?)
    }

    /// Perception branch on fused features: `[N, K]` logits.
    pub fn perceive(&self, fused: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let mut h = fused.clone();
        for stage in &self.perception {
            h = stage.forward(&self.store, &h, ctx)?;
        }
        let pooled = tensor::gap3d(&h)?;
        let pooled = ctx.dropout(&pooled, self.config.dropout_rate)?;
        self.classifier.forward(&self.store, &pooled)
    }

    /// Extractor, attention branch and both attention heads.
    pub fn attend(&self, video: &Tensor, ctx: &mut ForwardCtx) -> Result<AttentionStage> {
        let features = self.extract(video, ctx)?;
        let (att_logits, k_maps) = self.attention_branch_forward(&features, ctx)?;
        let spatial = self.spatial_attention(&k_maps)?;
        let temporal = self.temporal_attention(&k_maps)?;
        Ok(AttentionStage {
            features,
            att_logits,
            attention: AttentionPair { spatial, temporal },
        })
    }

    /// Perception half of a forward pass with optionally edited attentions.
    pub fn complete(
        &self,
        stage: &AttentionStage,
        edit: &AttentionOverride,
        ctx: &mut ForwardCtx,
    ) -> Result<ForwardOutput> {
        edit.validate()?;
        let spatial = apply_edit(&stage.attention.spatial, edit.spatial)?;
        let temporal = apply_edit(&stage.attention.temporal, edit.temporal)?;
        let fused = self.fuse_attention(&stage.features, &spatial, &temporal)?;
        let per_logits = self.perceive(&fused, ctx)?;
        Ok(ForwardOutput {
            att_logits: stage.att_logits.clone(),
            per_logits,
            attention: AttentionPair { spatial, temporal },
        })
    }

    pub fn forward(&self, video: &Tensor, ctx: &mut ForwardCtx) -> Result<ForwardOutput> {
        self.forward_with_override(video, &AttentionOverride::default(), ctx)
    }

    /// Forward pass with the selected attentions transformed after the heads
    /// and before fusion.
    pub fn forward_with_override(
        &self,
        video: &Tensor,
        edit: &AttentionOverride,
        ctx: &mut ForwardCtx,
    ) -> Result<ForwardOutput> {
        edit.validate()?;
        let stage = self.attend(video, ctx)?;
        self.complete(&stage, edit, ctx)
    }
}
