//! Joint two-branch optimization: `L = L_att + L_per`, SGD with momentum
//! and weight decay, learning-rate decay on validation plateaus.

mod checkpoint;
mod sgd;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState};
pub use sgd::{sgd_step, PlateauScheduler, SgdState};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::kv::KvBlock;
use crate::net::{ForwardCtx, ForwardOutput, StAbnModel};
use crate::synth::{batch_iter, VideoDataset};
use crate::tensor::{add, softmax_cross_entropy, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_initial: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs_max: usize,
    /// Epochs without validation-loss improvement before the rate decays.
    pub plateau_patience: usize,
    /// Relative drop in validation loss that counts as an improvement.
    pub plateau_min_improvement: f64,
    pub lr_decay_factor: f64,
    pub min_lr: f64,
    pub seed: u64,
    /// Optional global gradient-norm clip.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_initial: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 16,
            epochs_max: 30,
            plateau_patience: 3,
            plateau_min_improvement: 1e-4,
            lr_decay_factor: 0.1,
            min_lr: 1e-6,
            seed: 42,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            problems.push(format!("lr_initial {} must be > 0", self.lr_initial));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            problems.push(format!("momentum {} not in [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            problems.push(format!("weight_decay {} must be ≥ 0", self.weight_decay));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be ≥ 1".into());
        }
        if self.epochs_max == 0 {
            problems.push("epochs_max must be ≥ 1".into());
        }
        if self.plateau_patience == 0 {
            problems.push("plateau_patience must be ≥ 1".into());
        }
        if self.lr_decay_factor != 0.1 {
            problems.push(format!("lr_decay_factor is fixed at 0.1, got {}", self.lr_decay_factor));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                problems.push(format!("clip_norm {c} must be > 0"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

impl TrainConfig {
    pub fn to_kv(&self) -> KvBlock {
        let mut kv = KvBlock::default();
        kv.push("lr_initial", self.lr_initial);
        kv.push("momentum", self.momentum);
        kv.push("weight_decay", self.weight_decay);
        kv.push("batch_size", self.batch_size);
        kv.push("epochs_max", self.epochs_max);
        kv.push("plateau_patience", self.plateau_patience);
        kv.push("plateau_min_improvement", self.plateau_min_improvement);
        kv.push("lr_decay_factor", self.lr_decay_factor);
        kv.push("min_lr", self.min_lr);
        kv.push("seed", self.seed);
        match self.clip_norm {
            Some(c) => kv.push("clip_norm", c),
            None => kv.push("clip_norm", "none"),
        }
        kv
    }

    pub fn from_kv(kv: &KvBlock) -> Result<Self> {
        let clip_norm = match kv.get("clip_norm") {
            None | Some("none") => None,
            Some(_) => Some(kv.parse("clip_norm")?),
        };
        let c = TrainConfig {
            lr_initial: kv.parse("lr_initial")?,
            momentum: kv.parse("momentum")?,
            weight_decay: kv.parse("weight_decay")?,
            batch_size: kv.parse("batch_size")?,
            epochs_max: kv.parse("epochs_max")?,
            plateau_patience: kv.parse("plateau_patience")?,
            plateau_min_improvement: kv.parse("plateau_min_improvement")?,
            lr_decay_factor: kv.parse("lr_decay_factor")?,
            min_lr: kv.parse("min_lr")?,
            seed: kv.parse("seed")?,
            clip_norm,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Scalar values of both loss terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_att: f64,
    pub l_per: f64,
    pub l_total: f64,
}

/// Softmax cross-entropy on both branches; the returned tensor is their sum
/// and carries gradients into both branches and the shared extractor.
pub fn joint_loss(output: &ForwardOutput, labels: &[usize]) -> Result<(Tensor, LossBreakdown)> {
    let att = softmax_cross_entropy(&output.att_logits, labels)?;
    let per = softmax_cross_entropy(&output.per_logits, labels)?;
    let total = add(&att, &per)?;
    let breakdown = LossBreakdown {
        l_att: att.item()?,
        l_per: per.item()?,
        l_total: total.item()?,
    };
    Ok((total, breakdown))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_l_att: f64,
    pub train_l_per: f64,
    pub train_l_total: f64,
    pub val_l_total: f64,
    pub val_top1: f64,
}

impl EpochRecord {
    pub fn to_kv(&self) -> KvBlock {
        let mut kv = KvBlock::default();
        kv.push("epoch", self.epoch);
        kv.push("lr", self.lr);
        kv.push("train_l_att", self.train_l_att);
        kv.push("train_l_per", self.train_l_per);
        kv.push("train_l_total", self.train_l_total);
        kv.push("val_l_total", self.val_l_total);
        kv.push("val_top1", self.val_top1);
        kv
    }

    pub fn from_kv(kv: &KvBlock) -> Result<Self> {
        Ok(EpochRecord {
            epoch: kv.parse("epoch")?,
            lr: kv.parse("lr")?,
            train_l_att: kv.parse("train_l_att")?,
            train_l_per: kv.parse("train_l_per")?,
            train_l_total: kv.parse("train_l_total")?,
            val_l_total: kv.parse("val_l_total")?,
            val_top1: kv.parse("val_top1")?,
        })
    }
}

/// Writes one `key=value` record per epoch.
pub fn write_log(path: impl AsRef<Path>, records: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_kv().to_record());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| EpochRecord::from_kv(&KvBlock::from_record(l)?))
        .collect()
}

#[derive(Debug, Default, Clone)]
pub struct TrainOptions {
    /// Best-validation checkpoint is rewritten here whenever it improves.
    pub checkpoint_path: Option<PathBuf>,
    /// Epoch records are appended here as they are produced.
    pub log_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub best: Checkpoint,
}

fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains `model` in place. `on_epoch` sees every record as it is produced.
pub fn train(
    model: &mut StAbnModel,
    train_set: &VideoDataset,
    val_set: &VideoDataset,
    config: &TrainConfig,
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Input(format!(
            "training needs non-empty splits (train {}, val {})",
            train_set.len(),
            val_set.len()
        )));
    }
    let mc = model.config();
    let expect = [mc.input_channels, mc.frames, mc.height, mc.width];
    for (name, ds) in [("train", train_set), ("val", val_set)] {
        if ds.video_shape() != expect {
            return Err(Error::Input(format!(
                "{name} videos are {:?}, model expects {expect:?}",
                ds.video_shape()
            )));
        }
        if ds.config.num_classes != mc.num_classes {
            return Err(Error::Input(format!(
                "{name} set has {} classes, model has {}",
                ds.config.num_classes, mc.num_classes
            )));
        }
    }

    let mut log_file = match &options.log_path {
        Some(p) => Some(fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let mut sgd = SgdState::new(model);
    let mut scheduler = PlateauScheduler::new(config);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xD50_u64.rotate_left(40));
    let mut log = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut best_val = f64::INFINITY;

    for epoch in 1..=config.epochs_max {
        let lr = scheduler.lr();
        let (mut sum_att, mut sum_per, mut seen) = (0.0, 0.0, 0usize);
        for batch in batch_iter(train_set, config.batch_size, Some(shuffle_seed(config.seed, epoch)))? {
            let mut ctx = ForwardCtx::train(&mut dropout_rng);
            let output = model.forward(&batch.videos, &mut ctx)?;
            let updates = ctx.into_stats_updates();
            let (loss, parts) = joint_loss(&output, &batch.labels)?;
            if !parts.l_total.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {} at epoch {epoch}",
                    parts.l_total
                )));
            }
            loss.backward()?;
            sgd_step(model, &mut sgd, config, lr)?;
            model.apply_stats_updates(updates);
            let n = batch.labels.len();
            sum_att += parts.l_att * n as f64;
            sum_per += parts.l_per * n as f64;
            seen += n;
        }

        let val = evaluate(model, val_set, config.batch_size)?;
        if !val.loss.l_total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        let (train_l_att, train_l_per) = (sum_att / seen as f64, sum_per / seen as f64);
        let record = EpochRecord {
            epoch,
            lr,
            train_l_att,
            train_l_per,
            train_l_total: train_l_att + train_l_per,
            val_l_total: val.loss.l_total,
            val_top1: val.top1,
        };
        if let Some(f) = log_file.as_mut() {
            let path = options.log_path.as_deref().expect("log file has a path");
            writeln!(f, "{}", record.to_kv().to_record()).map_err(|e| Error::io(path, e))?;
        }
        on_epoch(&record);
        log.push(record);

        if val.loss.l_total < best_val {
            best_val = val.loss.l_total;
            let ckpt = Checkpoint::capture(model, &sgd, epoch, best_val, RngState::of(&dropout_rng));
            if let Some(p) = &options.checkpoint_path {
                save_checkpoint(p, &ckpt)?;
            }
            best = Some(ckpt);
        }
        scheduler.observe(val.loss.l_total);
        if scheduler.lr() < config.min_lr {
            break;
        }
    }

    Ok(TrainOutcome {
        log,
        best: best.expect("at least one epoch ran with a finite validation loss"),
    })
}
