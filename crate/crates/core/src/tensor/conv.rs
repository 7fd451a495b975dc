//! 3D and 2D cross-correlation via per-sample im2col + GEMM.

use super::gemm::{gemm, MatRef};
use super::{Backward, Tensor};
use crate::error::{Error, Result};

/// Geometry of a convolution layer. Extents are (frames, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub bias: bool,
}

/// `floor((input + 2·pad − kernel) / stride) + 1`, or `None` when the
/// kernel does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: [usize; 3]) -> Self {
        ConvSpec {
            out_channels,
            in_channels,
            kernel,
            stride: [1, 1, 1],
            padding: [0, 0, 0],
            bias: true,
        }
    }

    /// A 2D layer: the frame axis is pinned to kernel 1, stride 1, pad 0.
    pub fn new_2d(in_channels: usize, out_channels: usize, kernel: [usize; 2]) -> Self {
        Self::new(in_channels, out_channels, [1, kernel[0], kernel[1]])
    }

    pub fn with_stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        let [kt, kh, kw] = self.kernel;
        [self.out_channels, self.in_channels, kt, kh, kw]
    }

    pub fn num_weights(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0 || self.in_channels == 0 {
            return Err(Error::Config(format!("conv channels must be ≥ 1: {self:?}")));
        }
        if self.kernel.contains(&0) || self.stride.contains(&0) {
            return Err(Error::Config(format!(
                "conv kernel and stride extents must be ≥ 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Output (frames, height, width) for an input of the given extents.
    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        const AXES: [&str; 3] = ["frames", "height", "width"];
        let mut out = [0; 3];
        for i in 0..3 {
            out[i] = conv_output_extent(input[i], self.kernel[i], self.stride[i], self.padding[i])
                .ok_or_else(|| {
                    Error::Config(format!(
                        "conv kernel {} exceeds padded {} extent {} (pad {})",
                        self.kernel[i], AXES[i], input[i], self.padding[i]
                    ))
                })?;
        }
        Ok(out)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    spec: ConvSpec,
    input: [usize; 3],
    output: [usize; 3],
}

impl Geometry {
    fn rows(&self) -> usize {
        let [kt, kh, kw] = self.spec.kernel;
        self.spec.in_channels * kt * kh * kw
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    /// Calls `f(col_start, input_start, len, input_step)` for every run of
    /// in-bounds taps along one output row; padded taps are skipped.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [kt, kh, kw] = self.spec.kernel;
        let [st, sh, sw] = self.spec.stride;
        let [pt, ph, pw] = self.spec.padding;
        let [it, ih, iw] = self.input;
        let [ot, oh, ow] = self.output;
        let p = self.positions();
        let mut row = 0;
        for c in 0..self.spec.in_channels {
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        // valid wo: 0 ≤ wo·sw + dw − pw < iw
                        let lo = pw.saturating_sub(dw).div_ceil(sw);
                        let hi = if iw + pw > dw {
                            ((iw + pw - dw - 1) / sw + 1).min(ow)
                        } else {
                            0
                        };
                        let base = row * p;
                        row += 1;
                        if lo >= hi {
                            continue;
                        }
                        for to in 0..ot {
                            let ti = (to * st + dt) as isize - pt as isize;
                            if ti < 0 || ti >= it as isize {
                                continue;
                            }
                            for ho in 0..oh {
                                let hi_ = (ho * sh + dh) as isize - ph as isize;
                                if hi_ < 0 || hi_ >= ih as isize {
                                    continue;
                                }
                                let in_row = ((c * it + ti as usize) * ih + hi_ as usize) * iw;
                                let col_row = base + (to * oh + ho) * ow;
                                f(col_row + lo, in_row + lo * sw + dw - pw, hi - lo, sw);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        col.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_run(|ci, xi, len, step| {
            if step == 1 {
                col[ci..ci + len].copy_from_slice(&x[xi..xi + len]);
            } else {
                for (j, dst) in col[ci..ci + len].iter_mut().enumerate() {
                    *dst = x[xi + j * step];
                }
            }
        });
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        self.for_each_run(|ci, xi, len, step| {
            if step == 1 {
                for (d, s) in dx[xi..xi + len].iter_mut().zip(&col[ci..ci + len]) {
                    *d += s;
                }
            } else {
                for (j, s) in col[ci..ci + len].iter().enumerate() {
                    dx[xi + j * step] += s;
                }
            }
        });
    }
}

struct ConvBackward {
    geom: Geometry,
    batch: usize,
}

impl Backward for ConvBackward {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn backward(&self, inputs: &[Tensor], _: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let g = &self.geom;
        let (x, w) = (&inputs[0], &inputs[1]);
        let (rows, p, vol) = (g.rows(), g.positions(), g.in_volume());
        let cout = g.spec.out_channels;
        let cin_vol = g.spec.in_channels * vol;
        let pointwise = g.spec.is_pointwise();

        let mut dx = x.requires_grad().then(|| vec![0.0; x.numel()]);
        let mut dw = w.requires_grad().then(|| vec![0.0; w.numel()]);
        let mut col = if pointwise { Vec::new() } else { vec![0.0; rows * p] };
        let wm = MatRef::row_major(w.data(), cout, rows);

        for n in 0..self.batch {
            let gy = MatRef::row_major(&grad[n * cout * p..(n + 1) * cout * p], cout, p);
            let xn = &x.data()[n * cin_vol..(n + 1) * cin_vol];
            if let Some(dw) = dw.as_mut() {
                let colm = if pointwise {
                    MatRef::row_major(xn, rows, p)
                } else {
                    g.im2col(xn, &mut col);
                    MatRef::row_major(&col, rows, p)
                };
                gemm(gy, colm.t(), 1.0, dw);
            }
            if let Some(dx) = dx.as_mut() {
                let dxn = &mut dx[n * cin_vol..(n + 1) * cin_vol];
                if pointwise {
                    gemm(wm.t(), gy, 0.0, dxn);
                } else {
                    gemm(wm.t(), gy, 0.0, &mut col);
                    g.col2im(&col, dxn);
                }
            }
        }

        let mut out = vec![dx, dw];
        if let Some(b) = inputs.get(2) {
            out.push(b.requires_grad().then(|| {
                let mut db = vec![0.0; cout];
                for n in 0..self.batch {
                    for (o, acc) in db.iter_mut().enumerate() {
                        let start = (n * cout + o) * p;
                        *acc += grad[start..start + p].iter().sum::<f64>();
                    }
                }
                db
            }));
        }
        out
    }
}

/// 3D cross-correlation with zero padding on `[N, C, T, H, W]` input.
pub fn conv3d(
    input: &Tensor,
    spec: &ConvSpec,
    weight: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Tensor> {
    spec.validate()?;
    let &[n, c, t, h, w] = input.shape() else {
        return Err(Error::Config(format!(
            "conv3d input must be [N, C, T, H, W], got {:?}",
            input.shape()
        )));
    };
    if c != spec.in_channels {
        return Err(Error::Config(format!(
            "conv3d channel dimension: input has {c}, layer expects {}",
            spec.in_channels
        )));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::Config(format!(
            "conv3d weight shape {:?}, expected {:?}",
            weight.shape(),
            spec.weight_shape()
        )));
    }
    match (bias, spec.bias) {
        (Some(b), true) if b.shape() != [spec.out_channels] => {
            return Err(Error::Config(format!(
                "conv3d bias shape {:?}, expected [{}]",
                b.shape(),
                spec.out_channels
            )))
        }
        (None, true) => return Err(Error::Config("conv3d layer expects a bias".into())),
        (Some(_), false) => return Err(Error::Config("conv3d layer has no bias".into())),
        _ => {}
    }

    let geom = Geometry {
        spec: *spec,
        input: [t, h, w],
        output: spec.output_extents([t, h, w])?,
    };
    let (rows, p) = (geom.rows(), geom.positions());
    let cout = spec.out_channels;
    let cin_vol = c * geom.in_volume();
    let wm = MatRef::row_major(weight.data(), cout, rows);
    let mut out = vec![0.0; n * cout * p];
    let mut col = if spec.is_pointwise() { Vec::new() } else { vec![0.0; rows * p] };

    for s in 0..n {
        let xs = &input.data()[s * cin_vol..(s + 1) * cin_vol];
        let ys = &mut out[s * cout * p..(s + 1) * cout * p];
        if let Some(b) = bias {
            for (o, &bv) in b.data().iter().enumerate() {
                ys[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = bv);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        if spec.is_pointwise() {
            gemm(wm, MatRef::row_major(xs, rows, p), beta, ys);
        } else {
            geom.im2col(xs, &mut col);
            gemm(wm, MatRef::row_major(&col, rows, p), beta, ys);
        }
    }

    let [ot, oh, ow] = geom.output;
    let mut inputs = vec![input, weight];
    inputs.extend(bias);
    Ok(Tensor::from_op(
        vec![n, cout, ot, oh, ow],
        out,
        &inputs,
        ConvBackward { geom, batch: n },
    ))
}

/// 2D cross-correlation on `[N, C, H, W]` input with a `[Cout, C, kH, kW]`
/// weight; `spec` must have a unit frame kernel, stride and no frame padding.
pub fn conv2d(
    input: &Tensor,
    spec: &ConvSpec,
    weight: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Tensor> {
    let &[n, c, h, w] = input.shape() else {
        return Err(Error::Config(format!(
            "conv2d input must be [N, C, H, W], got {:?}",
            input.shape()
        )));
    };
    if spec.kernel[0] != 1 || spec.stride[0] != 1 || spec.padding[0] != 0 {
        return Err(Error::Config(format!(
            "conv2d spec must not touch the frame axis: {spec:?}"
        )));
    }
    let [co, ci, _, kh, kw] = spec.weight_shape();
    if weight.shape() != [co, ci, kh, kw] {
        return Err(Error::Config(format!(
            "conv2d weight shape {:?}, expected {:?}",
            weight.shape(),
            [co, ci, kh, kw]
        )));
    }
    let x5 = input.reshape(&[n, c, 1, h, w])?;
    let w5 = weight.reshape(&spec.weight_shape())?;
    let y = conv3d(&x5, spec, &w5, bias)?;
    let &[_, co, _, oh, ow] = y.shape() else {
        unreachable!("conv3d returns rank 5")
    };
    y.reshape(&[n, co, oh, ow])
}
