use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::VideoDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A mini-batch: stacked videos, their labels, and dataset indices (for
/// looking up ground-truth metadata).
#[derive(Debug, Clone)]
pub struct Batch {
    pub videos: Tensor,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

pub struct BatchIter<'a> {
    dataset: &'a VideoDataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let [c, t, h, w] = self.dataset.video_shape();
        let mut data = Vec::with_capacity(indices.len() * c * t * h * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in &indices {
            let s = &self.dataset.samples[i];
            data.extend(s.video.iter().map(|&v| v as f64));
            labels.push(s.label);
        }
        let videos = Tensor::new(&[indices.len(), c, t, h, w], data).expect("sample sizes checked");
        Some(Batch {
            videos,
            labels,
            indices,
        })
    }
}

/// Batches in dataset order, or in a seeded Fisher–Yates order when
/// `shuffle_seed` is given. The last batch may be short.
pub fn batch_iter(
    dataset: &VideoDataset,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be ≥ 1".into()));
    }
    let [c, t, h, w] = dataset.video_shape();
    if let Some(bad) = dataset.samples.iter().position(|s| s.video.len() != c * t * h * w) {
        return Err(Error::Input(format!("sample {bad} has the wrong pixel count")));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(BatchIter {
        dataset,
        order,
        batch_size,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn ten() -> VideoDataset {
        let config = SynthConfig {
            frames: 3,
            size: 6,
            shape_size: 2,
            window_len: 2,
            samples_train: 10,
            samples_val: 0,
            ..SynthConfig::default()
        };
        generate(&config).unwrap().0
    }

    #[test]
    fn sizes_and_coverage() {
        let ds = ten();
        let batches: Vec<Batch> = batch_iter(&ds, 4, Some(7)).unwrap().collect();
        let sizes: Vec<usize> = batches.iter().map(|b| b.labels.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(batches[0].videos.shape(), &[4, 1, 3, 6, 6]);
    }

    #[test]
    fn same_seed_same_order() {
        let ds = ten();
        let order = |seed| -> Vec<usize> {
            batch_iter(&ds, 3, Some(seed)).unwrap().flat_map(|b| b.indices).collect()
        };
        assert_eq!(order(5), order(5));
        assert_ne!(order(5), order(6));
        assert!(batch_iter(&ds, 0, None).is_err());
    }
}
