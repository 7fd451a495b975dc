//! Moving-square videos whose class is the motion direction inside a known
//! frame window, so both attention maps have a ground truth to be scored
//! against.

mod batch;
mod io;

pub use batch::{batch_iter, Batch, BatchIter};
pub use io::{dataset_checksum, load_dataset, save_dataset};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kv::KvBlock;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// 2 (left/right) or 4 (up/down/left/right).
    pub num_classes: usize,
    pub frames: usize,
    pub size: usize,
    pub channels: usize,
    pub shape_size: usize,
    /// Frames spanned by the motion, including the start frame.
    pub window_len: usize,
    pub noise_std: f64,
    pub samples_train: usize,
    pub samples_val: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 4,
            frames: 8,
            size: 32,
            channels: 1,
            shape_size: 6,
            window_len: 4,
            noise_std: 0.05,
            samples_train: 2000,
            samples_val: 400,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_classes != 2 && self.num_classes != 4 {
            problems.push(format!("num_classes must be 2 or 4, got {}", self.num_classes));
        }
        if self.frames < 2 {
            problems.push("frames must be ≥ 2".to_string());
        }
        if self.channels < 1 {
            problems.push("channels must be ≥ 1".to_string());
        }
        if self.shape_size == 0 || self.shape_size >= self.size {
            problems.push(format!(
                "shape_size {} must be in [1, size {})",
                self.shape_size, self.size
            ));
        }
        if self.window_len < 2 || self.window_len > self.frames {
            problems.push(format!(
                "window_len {} must be in [2, frames {}]",
                self.window_len, self.frames
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            problems.push(format!("noise_std {} must be finite and ≥ 0", self.noise_std));
        }
        if self.frames > u16::MAX as usize || self.size > u16::MAX as usize {
            problems.push("frames and size must fit in 16 bits".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// `[C, T, H, W]` of one video.
    pub fn video_shape(&self) -> [usize; 4] {
        [self.channels, self.frames, self.size, self.size]
    }

    pub fn to_kv(&self) -> KvBlock {
        let mut kv = KvBlock::default();
        kv.push("num_classes", self.num_classes);
        kv.push("frames", self.frames);
        kv.push("size", self.size);
        kv.push("channels", self.channels);
        kv.push("shape_size", self.shape_size);
        kv.push("window_len", self.window_len);
        kv.push("noise_std", self.noise_std);
        kv.push("samples_train", self.samples_train);
        kv.push("samples_val", self.samples_val);
        kv.push("seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KvBlock) -> Result<Self> {
        let c = SynthConfig {
            num_classes: kv.parse("num_classes")?,
            frames: kv.parse("frames")?,
            size: kv.parse("size")?,
            channels: kv.parse("channels")?,
            shape_size: kv.parse("shape_size")?,
            window_len: kv.parse("window_len")?,
            noise_std: kv.parse("noise_std")?,
            samples_train: kv.parse("samples_train")?,
            samples_val: kv.parse("samples_val")?,
            seed: kv.parse("seed")?,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Motion direction of a class, as (row step, column step).
pub fn direction(num_classes: usize, label: usize) -> (isize, isize) {
    match (num_classes, label) {
        (2, 0) => (0, -1),
        (2, 1) => (0, 1),
        (_, 0) => (-1, 0),
        (_, 1) => (1, 0),
        (_, 2) => (0, -1),
        _ => (0, 1),
    }
}

/// Square bounding box `[top, left, bottom, right)` in pixels.
pub type BBox = [u16; 4];

/// Ground truth of where and when the class-defining motion happens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleMeta {
    pub window_start: usize,
    pub window_len: usize,
    pub bboxes: Vec<BBox>,
}

impl SampleMeta {
    pub fn in_window(&self, t: usize) -> bool {
        t >= self.window_start && t < self.window_start + self.window_len
    }
}

/// One clip: `[C, T, H, W]` pixels in `[0, 1]`, stored as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub video: Vec<f32>,
    pub label: usize,
    pub meta: Option<SampleMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoDataset {
    pub config: SynthConfig,
    pub samples: Vec<VideoSample>,
}

impl VideoDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn video_shape(&self) -> [usize; 4] {
        self.config.video_shape()
    }

    /// `[1, C, T, H, W]` tensor of one sample.
    pub fn video_tensor(&self, index: usize) -> Result<Tensor> {
        let s = self.samples.get(index).ok_or_else(|| {
            Error::Input(format!("sample index {index} out of range ({} samples)", self.len()))
        })?;
        let [c, t, h, w] = self.video_shape();
        Tensor::new(&[1, c, t, h, w], s.video.iter().map(|&v| v as f64).collect())
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.config.num_classes];
        for s in &self.samples {
            hist[s.label] += 1;
        }
        hist
    }
}

fn sample_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 of the pair
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Valid start coordinates along one axis for a shape moving `step` px per
/// frame over `travel` frames.
fn start_range(size: usize, shape: usize, step: isize, travel: usize) -> Option<(usize, usize)> {
    let span = size.checked_sub(shape)?; // max top-left coordinate
    let t = travel;
    match step {
        0 => Some((0, span)),
        s if s > 0 => span.checked_sub(t).map(|hi| (0, hi)),
        _ => (t <= span).then_some((t, span)),
    }
}

/// Generates one sample from its own RNG stream.
pub fn generate_sample(config: &SynthConfig, label: usize, stream: u64) -> Result<VideoSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed, stream));
    let (dy, dx) = direction(config.num_classes, label);
    let travel = config.window_len - 1;
    let (y_lo, y_hi) = start_range(config.size, config.shape_size, dy, travel)
        .ok_or_else(|| Error::Config("shape cannot complete its motion inside the frame".into()))?;
    let (x_lo, x_hi) = start_range(config.size, config.shape_size, dx, travel)
        .ok_or_else(|| Error::Config("shape cannot complete its motion inside the frame".into()))?;
    let y0 = rng.random_range(y_lo..=y_hi) as isize;
    let x0 = rng.random_range(x_lo..=x_hi) as isize;
    let t0 = rng.random_range(0..=config.frames - config.window_len);

    let [c, t_len, h, w] = config.video_shape();
    let noise = (config.noise_std > 0.0)
        .then(|| Normal::new(0.0, config.noise_std).expect("validated std"));
    let mut video = vec![0f32; c * t_len * h * w];
    let mut bboxes = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let d = t.saturating_sub(t0).min(travel) as isize;
        let (top, left) = ((y0 + dy * d) as usize, (x0 + dx * d) as usize);
        let (bottom, right) = (top + config.shape_size, left + config.shape_size);
        bboxes.push([top as u16, left as u16, bottom as u16, right as u16]);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let inside = (top..bottom).contains(&y) && (left..right).contains(&x);
                    let mut v = if inside { 1.0 } else { 0.0 };
                    if let Some(n) = &noise {
                        v += n.sample(&mut rng);
                    }
                    video[((ch * t_len + t) * h + y) * w + x] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    Ok(VideoSample {
        video,
        label,
        meta: Some(SampleMeta {
            window_start: t0,
            window_len: config.window_len,
            bboxes,
        }),
    })
}

/// Train and validation splits. Labels are assigned round-robin; every
/// sample's content depends only on the seed and its global index.
pub fn generate(config: &SynthConfig) -> Result<(VideoDataset, VideoDataset)> {
    config.validate()?;
    let split = |offset: usize, count: usize| -> Result<VideoDataset> {
        let samples = (0..count)
            .map(|i| generate_sample(config, i % config.num_classes, (offset + i) as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(VideoDataset {
            config: config.clone(),
            samples,
        })
    };
    Ok((split(0, config.samples_train)?, split(config.samples_train, config.samples_val)?))
}
