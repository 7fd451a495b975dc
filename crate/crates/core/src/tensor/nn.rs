//! Network primitives: affine layers, pooling, loss, dropout, batch norm.

use rand::Rng;

use super::gemm::{gemm, MatRef};
use super::{numel, Backward, Tensor};
use crate::error::{Error, Result};

struct LinearBackward {
    batch: usize,
    d_in: usize,
    d_out: usize,
}

impl Backward for LinearBackward {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, inputs: &[Tensor], _: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let gy = MatRef::row_major(grad, self.batch, self.d_out);
        let dx = x.requires_grad().then(|| {
            let mut dx = vec![0.0; self.batch * self.d_in];
            gemm(gy, MatRef::row_major(w.data(), self.d_out, self.d_in), 0.0, &mut dx);
            dx
        });
        let dw = w.requires_grad().then(|| {
            let mut dw = vec![0.0; self.d_out * self.d_in];
            let xm = MatRef::row_major(x.data(), self.batch, self.d_in);
            gemm(gy.t(), xm, 0.0, &mut dw);
            dw
        });
        let mut out = vec![dx, dw];
        if let Some(b) = inputs.get(2) {
            out.push(b.requires_grad().then(|| {
                let mut db = vec![0.0; self.d_out];
                for row in grad.chunks(self.d_out) {
                    db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                }
                db
            }));
        }
        out
    }
}

/// `x · wᵀ + b` for `x: [N, D]`, `w: [Dout, D]`, `b: [Dout]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (&[n, d], &[d_out, d_w]) = (x.shape(), w.shape()) else {
        return Err(Error::Config(format!(
            "linear expects [N, D] input and [Dout, D] weight, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    };
    if d != d_w {
        return Err(Error::Config(format!(
            "linear inner dimension: input has {d}, weight has {d_w}"
        )));
    }
    if let Some(b) = b {
        if b.shape() != [d_out] {
            return Err(Error::Config(format!(
                "linear bias shape {:?}, expected [{d_out}]",
                b.shape()
            )));
        }
    }
    let mut out = vec![0.0; n * d_out];
    if let Some(b) = b {
        for row in out.chunks_mut(d_out) {
            row.copy_from_slice(b.data());
        }
    }
    let beta = if b.is_some() { 1.0 } else { 0.0 };
    gemm(
        MatRef::row_major(x.data(), n, d),
        MatRef::row_major(w.data(), d_out, d).t(),
        beta,
        &mut out,
    );
    let mut inputs = vec![x, w];
    inputs.extend(b);
    Ok(Tensor::from_op(
        vec![n, d_out],
        out,
        &inputs,
        LinearBackward {
            batch: n,
            d_in: d,
            d_out,
        },
    ))
}

struct MeanTrailingBackward {
    group: usize,
}

impl Backward for MeanTrailingBackward {
    fn name(&self) -> &'static str {
        "mean_trailing"
    }
    fn backward(&self, _: &[Tensor], _: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let scale = 1.0 / self.group as f64;
        let mut g = Vec::with_capacity(grad.len() * self.group);
        for &v in grad {
            g.extend(std::iter::repeat_n(v * scale, self.group));
        }
        vec![Some(g)]
    }
}

fn mean_trailing(x: &Tensor, keep: usize) -> Tensor {
    let shape = x.shape()[..keep].to_vec();
    let group = numel(&x.shape()[keep..]);
    let data = x
        .data()
        .chunks(group)
        .map(|c| c.iter().sum::<f64>() / group as f64)
        .collect();
    Tensor::from_op(shape, data, &[x], MeanTrailingBackward { group })
}

/// Global average over frames, height and width: `[N, C, T, H, W] → [N, C]`.
pub fn gap3d(x: &Tensor) -> Result<Tensor> {
    if x.ndim() != 5 {
        return Err(Error::Config(format!(
            "gap3d expects [N, C, T, H, W], got {:?}",
            x.shape()
        )));
    }
    Ok(mean_trailing(x, 2))
}

/// Spatial average per frame: `[N, T, H, W] → [N, T]`.
pub fn gap2d_spatial(x: &Tensor) -> Result<Tensor> {
    if x.ndim() != 4 {
        return Err(Error::Config(format!(
            "gap2d_spatial expects [N, T, H, W], got {:?}",
            x.shape()
        )));
    }
    Ok(mean_trailing(x, 2))
}

struct SoftmaxCeBackward {
    probs: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl Backward for SoftmaxCeBackward {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }
    fn backward(&self, _: &[Tensor], _: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let scale = grad[0] / self.labels.len() as f64;
        let mut g: Vec<f64> = self.probs.iter().map(|p| p * scale).collect();
        for (i, &label) in self.labels.iter().enumerate() {
            g[i * self.classes + label] -= scale;
        }
        vec![Some(g)]
    }
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|v| (v - max).exp()));
        let z: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let &[n, k] = logits.shape() else {
        return Err(Error::Config(format!(
            "softmax_cross_entropy expects [N, K] logits, got {:?}",
            logits.shape()
        )));
    };
    if labels.len() != n {
        return Err(Error::Input(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let mut loss = 0.0;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
    }
    loss /= n as f64;
    let probs = softmax_rows(logits.data(), k);
    Ok(Tensor::from_op(
        Vec::new(),
        vec![loss],
        &[logits],
        SoftmaxCeBackward {
            probs,
            labels: labels.to_vec(),
            classes: k,
        },
    ))
}

struct DropoutBackward {
    mask: Vec<f64>,
}

impl Backward for DropoutBackward {
    fn name(&self) -> &'static str {
        "dropout"
    }
    fn backward(&self, _: &[Tensor], _: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(
            grad.iter().zip(&self.mask).map(|(g, m)| g * m).collect(),
        )]
    }
}

/// Inverted dropout: in training, zero each element with probability `rate`
/// and scale survivors by `1 / (1 − rate)`. Identity at inference.
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, rate: f64, training: bool, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        data,
        &[x],
        DropoutBackward { mask },
    ))
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

struct BatchNormBackward {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    batch: usize,
    spatial: usize,
    training: bool,
}

impl Backward for BatchNormBackward {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn backward(&self, inputs: &[Tensor], _: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, gamma) = (&inputs[0], &inputs[1]);
        let channels = self.mean.len();
        let m = (self.batch * self.spatial) as f64;
        let mut dgamma = vec![0.0; channels];
        let mut dbeta = vec![0.0; channels];
        let idx = |n: usize, c: usize| (n * channels + c) * self.spatial;
        for c in 0..channels {
            for n in 0..self.batch {
                let start = idx(n, c);
                let range = start..start + self.spatial;
                for (&g, &xv) in grad[range.clone()].iter().zip(&x.data()[range]) {
                    let xhat = (xv - self.mean[c]) * self.inv_std[c];
                    dgamma[c] += g * xhat;
                    dbeta[c] += g;
                }
            }
        }
        let dx = x.requires_grad().then(|| {
            let mut dx = vec![0.0; x.numel()];
            for c in 0..channels {
                let scale = gamma.data()[c] * self.inv_std[c];
                for n in 0..self.batch {
                    let start = idx(n, c);
                    for i in start..start + self.spatial {
                        dx[i] = if self.training {
                            let xhat = (x.data()[i] - self.mean[c]) * self.inv_std[c];
                            scale * (grad[i] - dbeta[c] / m - xhat * dgamma[c] / m)
                        } else {
                            scale * grad[i]
                        };
                    }
                }
            }
            dx
        });
        vec![
            dx,
            gamma.requires_grad().then_some(dgamma),
            inputs[2].requires_grad().then_some(dbeta),
        ]
    }
}

/// Batch normalization over every axis but the channel axis (axis 1).
///
/// Training normalizes with batch statistics and returns the updated running
/// statistics (momentum [`BN_MOMENTUM`], unbiased variance); inference uses
/// `running` and returns `None`.
pub fn batchnorm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &BatchNormStats,
    training: bool,
) -> Result<(Tensor, Option<BatchNormStats>)> {
    if x.ndim() < 2 {
        return Err(Error::Config(format!(
            "batchnorm expects [N, C, ...], got {:?}",
            x.shape()
        )));
    }
    let (batch, channels) = (x.shape()[0], x.shape()[1]);
    let spatial = numel(&x.shape()[2..]);
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.shape() != [channels] {
            return Err(Error::Config(format!(
                "batchnorm {name} shape {:?}, expected [{channels}]",
                t.shape()
            )));
        }
    }
    if running.mean.len() != channels || running.var.len() != channels {
        return Err(Error::Config(format!(
            "batchnorm running statistics sized for {} channels, input has {channels}",
            running.mean.len()
        )));
    }
    let m = batch * spatial;
    if training && m < 2 {
        return Err(Error::Input(
            "batchnorm training needs at least two values per channel".into(),
        ));
    }

    let idx = |n: usize, c: usize| (n * channels + c) * spatial;
    let (mean, var) = if training {
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for c in 0..channels {
            let mut s = 0.0;
            for n in 0..batch {
                s += x.data()[idx(n, c)..idx(n, c) + spatial].iter().sum::<f64>();
            }
            mean[c] = s / m as f64;
            let mut ss = 0.0;
            for n in 0..batch {
                ss += x.data()[idx(n, c)..idx(n, c) + spatial]
                    .iter()
                    .map(|v| (v - mean[c]).powi(2))
                    .sum::<f64>();
            }
            var[c] = ss / m as f64;
        }
        (mean, var)
    } else {
        (running.mean.clone(), running.var.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

    let mut out = vec![0.0; x.numel()];
    for c in 0..channels {
        let (g, b) = (gamma.data()[c], beta.data()[c]);
        for n in 0..batch {
            let start = idx(n, c);
            let range = start..start + spatial;
            for (o, &xv) in out[range.clone()].iter_mut().zip(&x.data()[range]) {
                *o = g * (xv - mean[c]) * inv_std[c] + b;
            }
        }
    }

    let updated = training.then(|| {
        let unbiased = m as f64 / (m as f64 - 1.0);
        BatchNormStats {
            mean: running
                .mean
                .iter()
                .zip(&mean)
                .map(|(r, b)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b)
                .collect(),
            var: running
                .var
                .iter()
                .zip(&var)
                .map(|(r, b)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b * unbiased)
                .collect(),
        }
    });

    let y = Tensor::from_op(
        x.shape().to_vec(),
        out,
        &[x, gamma, beta],
        BatchNormBackward {
            mean,
            inv_std,
            batch,
            spatial,
            training,
        },
    );
    Ok((y, updated))
}
