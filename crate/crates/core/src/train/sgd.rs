use super::TrainConfig;
use crate::error::{Error, Result};
use crate::net::StAbnModel;

/// Momentum buffers, one per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(model: &StAbnModel) -> Self {
        SgdState {
            velocity: model
                .store()
                .params()
                .iter()
                .map(|p| vec![0.0; p.value.numel()])
                .collect(),
        }
    }
}

/// `v ← μ·v + (g + λ·w)`, `w ← w − lr·v`, with `λ` applied to conv/linear
/// weights only. Consumes the accumulated gradients.
pub fn sgd_step(model: &mut StAbnModel, state: &mut SgdState, config: &TrainConfig, lr: f64) -> Result<()> {
    let store = model.store_mut();
    if state.velocity.len() != store.params().len() {
        return Err(Error::Internal("optimizer state does not match the model".into()));
    }
    let grads: Vec<Vec<f64>> = store
        .params()
        .iter()
        .map(|p| {
            let g = p.value.grad().unwrap_or_else(|| vec![0.0; p.value.numel()]);
            match g.iter().position(|v| !v.is_finite()) {
                Some(i) => Err(Error::Numerical(format!(
                    "non-finite gradient {} in `{}` at element {i}",
                    g[i], p.name
                ))),
                None => Ok(g),
            }
        })
        .collect::<Result<_>>()?;

    let scale = match config.clip_norm {
        Some(max) => {
            let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max { max / norm } else { 1.0 }
        }
        None => 1.0,
    };

    for (i, g) in grads.into_iter().enumerate() {
        let p = &store.params()[i];
        let decay = if p.decay { config.weight_decay } else { 0.0 };
        let v = &mut state.velocity[i];
        let w: Vec<f64> = p
            .value
            .data()
            .iter()
            .zip(&g)
            .zip(v.iter_mut())
            .map(|((&w, &g), v)| {
                *v = config.momentum * *v + (scale * g + decay * w);
                w - lr * *v
            })
            .collect();
        store.set_by_index(i, w)?;
    }
    Ok(())
}

/// Multiplies the rate by the decay factor after `plateau_patience` epochs
/// without a relative validation-loss improvement.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    best: f64,
    bad_epochs: usize,
    patience: usize,
    min_improvement: f64,
    factor: f64,
}

impl PlateauScheduler {
    pub fn new(config: &TrainConfig) -> Self {
        PlateauScheduler {
            lr: config.lr_initial,
            best: f64::INFINITY,
            bad_epochs: 0,
            patience: config.plateau_patience,
            min_improvement: config.plateau_min_improvement,
            factor: config.lr_decay_factor,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records an epoch's validation loss; returns true if the rate decayed.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        let threshold = self.best - self.min_improvement * self.best.abs();
        if val_loss < threshold || self.best.is_infinite() {
            self.best = val_loss;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.lr *= self.factor;
            self.bad_epochs = 0;
            true
        } else {
            false
        }
    }
}
