use crate::error::{Error, Result};
use crate::tensor::{mul, Tensor};

/// Spatial (`[N, 1, T, H', W']`) and temporal (`[N, T]`) attention of a batch.
#[derive(Debug, Clone)]
pub struct AttentionPair {
    pub spatial: Tensor,
    pub temporal: Tensor,
}

/// How one attention map is treated between its head and the fusion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AttentionEdit {
    #[default]
    AsComputed,
    /// `1 − M`.
    Inverted,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AttentionOverride {
    pub spatial: AttentionEdit,
    pub temporal: AttentionEdit,
}

impl AttentionOverride {
    pub fn new(spatial: AttentionEdit, temporal: AttentionEdit) -> Self {
        AttentionOverride { spatial, temporal }
    }

    pub fn inverted(spatial: bool, temporal: bool) -> Self {
        let pick = |b| if b { AttentionEdit::Inverted } else { AttentionEdit::AsComputed };
        AttentionOverride::new(pick(spatial), pick(temporal))
    }

    pub fn validate(&self) -> Result<()> {
        for edit in [self.spatial, self.temporal] {
            if let AttentionEdit::Constant(c) = edit {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::Input(format!(
                        "attention constant {c} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `M_inverse = 1 − M`, elementwise. Every element must lie in `[0, 1]`.
pub fn invert_attention(m: &Tensor) -> Result<Tensor> {
    if let Some(bad) = m.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Input(format!(
            "attention value {bad} outside [0, 1]"
        )));
    }
    Ok(m.affine(-1.0, 1.0))
}

/// Residual spatial attention `(1 + M_s) ⊙ f`. `spatial` is
/// `[N, 1, T, H, W]` and broadcasts over the channels of `features`.
pub fn apply_spatial_attention(features: &Tensor, spatial: &Tensor) -> Result<Tensor> {
    mul(features, &spatial.affine(1.0, 1.0))
}

/// Frame gating `M_t ⊙ f` with `temporal` of shape `[N, T]`.
pub fn apply_temporal_attention(features: &Tensor, temporal: &Tensor) -> Result<Tensor> {
    let &[n, t] = temporal.shape() else {
        return Err(Error::Input(format!(
            "temporal attention must be [N, T], got {:?}",
            temporal.shape()
        )));
    };
    mul(features, &temporal.reshape(&[n, 1, t, 1, 1])?)
}

pub(crate) fn apply_edit(m: &Tensor, edit: AttentionEdit) -> Result<Tensor> {
    match edit {
        AttentionEdit::AsComputed => Ok(m.clone()),
        AttentionEdit::Inverted => invert_attention(m),
        AttentionEdit::Constant(c) => Tensor::full(m.shape(), c),
    }
}
