//! Network topology and forward passes.

mod attention;
mod config;
mod layers;
mod model;
mod params;

pub use attention::{apply_spatial_attention, apply_temporal_attention, invert_attention, AttentionEdit, AttentionOverride, AttentionPair};
pub use config::ModelConfig;
pub use layers::ForwardCtx;
pub use model::{AttentionStage, ForwardOutput, StAbnModel};
pub use params::{Param, ParamId, ParamStore, StatsId};
