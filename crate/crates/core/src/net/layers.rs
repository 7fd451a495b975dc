//! Building blocks: convolution, batch norm, residual blocks, dense layers.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::params::{ParamId, ParamStore, StatsId};
use crate::error::Result;
use crate::tensor::{self, add, BatchNormStats, ConvSpec, Tensor};

/// Forward-pass mode plus side effects collected during a pass.
pub struct ForwardCtx<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
    stats_updates: Vec<(StatsId, BatchNormStats)>,
}

impl<'a> ForwardCtx<'a> {
    /// Inference: dropout off, batch norm uses running statistics.
    pub fn eval() -> Self {
        ForwardCtx {
            rng: None,
            stats_updates: Vec::new(),
        }
    }

    /// Training: dropout draws from `rng`, batch norm uses batch statistics.
    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        ForwardCtx {
            rng: Some(rng),
            stats_updates: Vec::new(),
        }
    }

    pub fn training(&self) -> bool {
        self.rng.is_some()
    }

    pub(crate) fn dropout(&mut self, x: &Tensor, rate: f64) -> Result<Tensor> {
        match self.rng.as_deref_mut() {
            Some(rng) => tensor::dropout(x, rate, true, rng),
            None => Ok(x.clone()),
        }
    }

    /// Running-statistic updates produced by a training pass.
    pub fn into_stats_updates(self) -> Vec<(StatsId, BatchNormStats)> {
        self.stats_updates
    }
}

/// Weight initialization. He suits layers followed by ReLU; Glorot keeps
/// pre-sigmoid activations small in the attention heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    He,
    Glorot,
}

impl Init {
    fn sample(self, rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
        let var = match self {
            Init::He => 2.0 / fan_in as f64,
            Init::Glorot => 2.0 / (fan_in + fan_out) as f64,
        };
        let normal = Normal::new(0.0, var.sqrt()).expect("finite std");
        (0..n).map(|_| normal.sample(rng)).collect()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, spec: ConvSpec) -> Self {
        Self::with_init(store, rng, name, spec, Init::He)
    }

    pub fn with_init(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, spec: ConvSpec, init: Init) -> Self {
        let [co, ci, kt, kh, kw] = spec.weight_shape();
        let window = kt * kh * kw;
        let weight = store.add(
            format!("{name}.weight"),
            &spec.weight_shape(),
            init.sample(rng, ci * window, co * window, spec.num_weights()),
            true,
        );
        let bias = spec
            .bias
            .then(|| store.add(format!("{name}.bias"), &[co], vec![0.0; co], false));
        Conv { spec, weight, bias }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        tensor::conv3d(x, &self.spec, store.get(self.weight), self.bias.map(|b| store.get(b)))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    gamma: ParamId,
    beta: ParamId,
    stats: StatsId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Norm {
            gamma: store.add(format!("{name}.gamma"), &[channels], vec![1.0; channels], false),
            beta: store.add(format!("{name}.beta"), &[channels], vec![0.0; channels], false),
            stats: store.add_stats(name.to_string(), channels),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let (y, updated) = tensor::batchnorm(
            x,
            store.get(self.gamma),
            store.get(self.beta),
            store.stats(self.stats),
            ctx.training(),
        )?;
        if let Some(updated) = updated {
            ctx.stats_updates.push((self.stats, updated));
        }
        Ok(y)
    }
}

/// Convolution optionally followed by batch norm. Without batch norm the
/// convolution carries its own bias.
#[derive(Debug, Clone)]
pub(crate) struct ConvNorm {
    conv: Conv,
    norm: Option<Norm>,
}

impl ConvNorm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        spec: ConvSpec,
        batchnorm: bool,
    ) -> Self {
        let conv = Conv::new(store, rng, &format!("{name}.conv"), spec.with_bias(!batchnorm));
        let norm = batchnorm.then(|| Norm::new(store, &format!("{name}.bn"), spec.out_channels));
        ConvNorm { conv, norm }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let y = self.conv.forward(store, x)?;
        match &self.norm {
            Some(norm) => norm.forward(store, &y, ctx),
            None => Ok(y),
        }
    }
}

/// Two 3×3×3 convolutions with an identity or projection shortcut.
#[derive(Debug, Clone)]
pub(crate) struct ResBlock {
    conv1: ConvNorm,
    conv2: ConvNorm,
    shortcut: Option<ConvNorm>,
}

impl ResBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        spatial_stride: usize,
        batchnorm: bool,
    ) -> Self {
        let stride = [1, spatial_stride, spatial_stride];
        let conv1 = ConvNorm::new(
            store,
            rng,
            &format!("{name}.conv1"),
            ConvSpec::new(in_channels, out_channels, [3, 3, 3])
                .with_stride(stride)
                .with_padding([1, 1, 1]),
            batchnorm,
        );
        let conv2 = ConvNorm::new(
            store,
            rng,
            &format!("{name}.conv2"),
            ConvSpec::new(out_channels, out_channels, [3, 3, 3]).with_padding([1, 1, 1]),
            batchnorm,
        );
        let shortcut = (in_channels != out_channels || spatial_stride != 1).then(|| {
            ConvNorm::new(
                store,
                rng,
                &format!("{name}.shortcut"),
                ConvSpec::new(in_channels, out_channels, [1, 1, 1]).with_stride(stride),
                batchnorm,
            )
        });
        ResBlock {
            conv1,
            conv2,
            shortcut,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let h = self.conv1.forward(store, x, ctx)?.relu();
        let h = self.conv2.forward(store, &h, ctx)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(store, x, ctx)?,
            None => x.clone(),
        };
        Ok(add(&h, &skip)?.relu())
    }
}

/// A run of residual blocks; only the first may change channels or stride.
#[derive(Debug, Clone)]
pub(crate) struct Stage {
    blocks: Vec<ResBlock>,
}

impl Stage {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        blocks: usize,
        first_stride: usize,
        batchnorm: bool,
    ) -> Self {
        let blocks = (0..blocks)
            .map(|i| {
                let (cin, stride) = if i == 0 {
                    (in_channels, first_stride)
                } else {
                    (out_channels, 1)
                };
                ResBlock::new(
                    store,
                    rng,
                    &format!("{name}.block{i}"),
                    cin,
                    out_channels,
                    stride,
                    batchnorm,
                )
            })
            .collect();
        Stage { blocks }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(store, &h, ctx)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
        init: Init,
    ) -> Self {
        Dense {
            weight: store.add(
                format!("{name}.weight"),
                &[d_out, d_in],
                init.sample(rng, d_in, d_out, d_in * d_out),
                true,
            ),
            bias: store.add(format!("{name}.bias"), &[d_out], vec![0.0; d_out], false),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        tensor::linear(x, store.get(self.weight), Some(store.get(self.bias)))
    }
}

