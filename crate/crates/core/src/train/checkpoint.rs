use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::SgdState;
use crate::codec::{len_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::net::{ModelConfig, StAbnModel};
use crate::tensor::{BatchNormStats, Tensor};

const MAGIC: &[u8] = b"STABN";
const VERSION: u8 = 1;

const PARAM: &str = "param/";
const MOMENTUM: &str = "momentum/";
const RUNNING_MEAN: &str = "running_mean/";
const RUNNING_VAR: &str = "running_var/";
const META_EPOCH: &str = "meta/epoch";
const META_BEST: &str = "meta/best_val_loss";
const META_RNG: &str = "meta/rng";

/// Position of a ChaCha8 generator: key, stream and word offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn to_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    // Every value is an integer below 2^16, so the f64 encoding is exact.
    fn to_values(self) -> Vec<f64> {
        let mut v: Vec<f64> = self.seed.iter().map(|&b| b as f64).collect();
        v.extend((0..4).map(|i| ((self.stream >> (16 * i)) & 0xFFFF) as f64));
        v.extend((0..8).map(|i| ((self.word_pos >> (16 * i)) & 0xFFFF) as f64));
        v
    }

    fn from_values(v: &[f64]) -> Result<Self> {
        let bad = || Error::Format("malformed rng state tensor".into());
        if v.len() != 44 {
            return Err(bad());
        }
        let word = |x: f64, max: f64| -> Result<u64> {
            if x.fract() == 0.0 && (0.0..=max).contains(&x) {
                Ok(x as u64)
            } else {
                Err(bad())
            }
        };
        let mut seed = [0u8; 32];
        for (s, &x) in seed.iter_mut().zip(&v[..32]) {
            *s = word(x, 255.0)? as u8;
        }
        let mut stream = 0u64;
        for (i, &x) in v[32..36].iter().enumerate() {
            stream |= word(x, 65535.0)? << (16 * i);
        }
        let mut word_pos = 0u128;
        for (i, &x) in v[36..44].iter().enumerate() {
            word_pos |= (word(x, 65535.0)? as u128) << (16 * i);
        }
        Ok(RngState { seed, stream, word_pos })
    }
}

/// A complete snapshot of model and optimizer state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u8,
    pub config: ModelConfig,
    /// Parameter name and values, in store order.
    pub params: Vec<(String, Tensor)>,
    /// Momentum buffers aligned with `params`.
    pub momentum: Vec<Vec<f64>>,
    pub stats: Vec<(String, BatchNormStats)>,
    pub epoch: usize,
    pub best_val_loss: f64,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn capture(model: &StAbnModel, sgd: &SgdState, epoch: usize, best_val_loss: f64, rng: RngState) -> Self {
        let store = model.store();
        Checkpoint {
            version: VERSION,
            config: model.config().clone(),
            params: store
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.detach()))
                .collect(),
            momentum: sgd.velocity.clone(),
            stats: store.stats_entries().to_vec(),
            epoch,
            best_val_loss,
            rng,
        }
    }

    /// Rebuilds the model. Fails unless the snapshot names exactly the
    /// parameters and statistics the configuration produces.
    pub fn to_model(&self) -> Result<StAbnModel> {
        let mut model = StAbnModel::new(&self.config, 0)?;
        let expected = model.store().params().len();
        if self.params.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, configuration needs {expected}",
                self.params.len()
            )));
        }
        if self.stats.len() != model.store().stats_entries().len() {
            return Err(Error::Format(format!(
                "checkpoint has {} statistics entries, configuration needs {}",
                self.stats.len(),
                model.store().stats_entries().len()
            )));
        }
        for (name, value) in &self.params {
            let slot = model
                .store()
                .by_name(name)
                .ok_or_else(|| Error::Format(format!("unknown parameter `{name}`")))?;
            if slot.value.shape() != value.shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    value.shape(),
                    slot.value.shape()
                )));
            }
            model.store_mut().set(name, value.to_vec())?;
        }
        for (name, stats) in &self.stats {
            model
                .store_mut()
                .set_stats_by_name(name, stats.clone())
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn sgd_state(&self) -> SgdState {
        SgdState {
            velocity: self.momentum.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.momentum.len() != self.params.len() {
            return Err(Error::Internal("momentum buffers do not match parameters".into()));
        }
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u8(self.version);
        w.kv(&self.config.to_kv())?;
        let count = 2 * self.params.len() + 2 * self.stats.len() + 3;
        w.u32(len_u32(count, "tensor count")?);
        for ((name, value), v) in self.params.iter().zip(&self.momentum) {
            w.tensor(&format!("{PARAM}{name}"), value)?;
            let buf = Tensor::new(value.shape(), v.clone())
                .map_err(|e| Error::Internal(format!("momentum for `{name}`: {e}")))?;
            w.tensor(&format!("{MOMENTUM}{name}"), &buf)?;
        }
        for (name, s) in &self.stats {
            w.tensor(&format!("{RUNNING_MEAN}{name}"), &Tensor::new(&[s.mean.len()], s.mean.clone())?)?;
            w.tensor(&format!("{RUNNING_VAR}{name}"), &Tensor::new(&[s.var.len()], s.var.clone())?)?;
        }
        w.tensor(META_EPOCH, &Tensor::scalar(self.epoch as f64))?;
        w.tensor(META_BEST, &Tensor::scalar(self.best_val_loss))?;
        let rng = self.rng.to_values();
        w.tensor(META_RNG, &Tensor::new(&[rng.len()], rng)?)?;
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.header(MAGIC, VERSION)?;
        let config = ModelConfig::from_kv(&r.kv()?).map_err(|e| Error::Format(e.to_string()))?;
        let count = r.u32()? as usize;
        let mut params = Vec::new();
        let mut momentum = Vec::new();
        let mut means: Vec<(String, Vec<f64>)> = Vec::new();
        let mut vars: Vec<(String, Vec<f64>)> = Vec::new();
        let (mut epoch, mut best, mut rng) = (None, None, None);
        for _ in 0..count {
            let (name, t) = r.tensor()?;
            if let Some(n) = name.strip_prefix(PARAM) {
                params.push((n.to_string(), t));
            } else if let Some(n) = name.strip_prefix(MOMENTUM) {
                momentum.push((n.to_string(), t.to_vec()));
            } else if let Some(n) = name.strip_prefix(RUNNING_MEAN) {
                means.push((n.to_string(), t.to_vec()));
            } else if let Some(n) = name.strip_prefix(RUNNING_VAR) {
                vars.push((n.to_string(), t.to_vec()));
            } else if name == META_EPOCH {
                let e = t.item().map_err(|e| Error::Format(e.to_string()))?;
                if !(e >= 0.0 && e.fract() == 0.0) {
                    return Err(Error::Format(format!("invalid epoch {e}")));
                }
                epoch = Some(e as usize);
            } else if name == META_BEST {
                best = Some(t.item().map_err(|e| Error::Format(e.to_string()))?);
            } else if name == META_RNG {
                rng = Some(RngState::from_values(t.data())?);
            } else {
                return Err(Error::Format(format!("unexpected tensor `{name}`")));
            }
        }
        r.finish()?;

        if momentum.len() != params.len()
            || params.iter().zip(&momentum).any(|((a, t), (b, v))| a != b || t.numel() != v.len())
        {
            return Err(Error::Format("momentum buffers do not pair with parameters".into()));
        }
        if means.len() != vars.len() || means.iter().zip(&vars).any(|(a, b)| a.0 != b.0) {
            return Err(Error::Format("running mean and variance entries do not pair".into()));
        }
        let missing = |what: &str| Error::Format(format!("checkpoint lacks {what}"));
        Ok(Checkpoint {
            version: VERSION,
            config,
            params,
            momentum: momentum.into_iter().map(|(_, v)| v).collect(),
            stats: means
                .into_iter()
                .zip(vars)
                .map(|((name, mean), (_, var))| (name, BatchNormStats { mean, var }))
                .collect(),
            epoch: epoch.ok_or_else(|| missing("an epoch"))?,
            best_val_loss: best.ok_or_else(|| missing("a best validation loss"))?,
            rng: rng.ok_or_else(|| missing("an rng state"))?,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
