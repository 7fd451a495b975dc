//! Elementwise, broadcasting and structural operations.

use super::{numel, Backward, Tensor};
use crate::error::{Error, Result};

pub(super) struct ReshapeBackward;

impl Backward for ReshapeBackward {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _: &[Tensor], _: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad.to_vec())]
    }
}

struct SigmoidBackward;

impl Backward for SigmoidBackward {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn backward(&self, _: &[Tensor], out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(
            out.iter().zip(grad).map(|(s, g)| g * s * (1.0 - s)).collect(),
        )]
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    // Split by sign so exp never overflows.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(super) fn sigmoid(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor::from_op(x.shape().to_vec(), data, &[x], SigmoidBackward)
}

struct ReluBackward;

impl Backward for ReluBackward {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn backward(&self, inputs: &[Tensor], _: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = inputs[0].data();
        vec![Some(
            x.iter()
                .zip(grad)
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect(),
        )]
    }
}

pub(super) fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_op(x.shape().to_vec(), data, &[x], ReluBackward)
}

struct AffineBackward(f64);

impl Backward for AffineBackward {
    fn name(&self) -> &'static str {
        "affine"
    }
    fn backward(&self, _: &[Tensor], _: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad.iter().map(|g| g * self.0).collect())]
    }
}

pub(super) fn affine(x: &Tensor, scale: f64, shift: f64) -> Tensor {
    let data = x.data().iter().map(|&v| scale * v + shift).collect();
    Tensor::from_op(x.shape().to_vec(), data, &[x], AffineBackward(scale))
}

struct SumBackward(usize);

impl Backward for SumBackward {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, _: &[Tensor], _: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![grad[0]; self.0])]
    }
}

pub(super) fn sum_all(x: &Tensor) -> Tensor {
    let s = x.data().iter().sum();
    Tensor::from_op(Vec::new(), vec![s], &[x], SumBackward(x.numel()))
}

/// Result shape of broadcasting `a` against `b` (trailing axes aligned,
/// size-1 axes stretch).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let ea = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let eb = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (ea, eb) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Config(format!(
                    "shapes {a:?} and {b:?} do not broadcast on axis {i}"
                )))
            }
        };
    }
    Ok(out)
}

/// Element strides of `shape` viewed inside `out`; stretched axes get 0.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let nd = out.len();
    let total = numel(out);
    if nd == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[nd - 1];
    let (ia_step, ib_step) = (sa[nd - 1], sb[nd - 1]);
    let mut idx = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    while o < total {
        let (mut ia, mut ib) = (oa, ob);
        for _ in 0..inner {
            f(o, ia, ib);
            o += 1;
            ia += ia_step;
            ib += ib_step;
        }
        // Odometer over the outer axes.
        let mut axis = nd - 1;
        while axis > 0 {
            axis -= 1;
            idx[axis] += 1;
            oa += sa[axis];
            ob += sb[axis];
            if idx[axis] < out[axis] {
                break;
            }
            oa -= sa[axis] * out[axis];
            ob -= sb[axis] * out[axis];
            idx[axis] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

struct BinaryBackward {
    kind: BinaryKind,
    out_shape: Vec<usize>,
}

impl Backward for BinaryBackward {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        }
    }

    fn backward(&self, inputs: &[Tensor], _: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let sa = broadcast_strides(a.shape(), &self.out_shape);
        let sb = broadcast_strides(b.shape(), &self.out_shape);
        let mut ga = a.requires_grad().then(|| vec![0.0; a.numel()]);
        let mut gb = b.requires_grad().then(|| vec![0.0; b.numel()]);
        let (ad, bd) = (a.data(), b.data());
        for_each_broadcast(&self.out_shape, &sa, &sb, |o, ia, ib| {
            let g = grad[o];
            let (da, db) = match self.kind {
                BinaryKind::Add => (g, g),
                BinaryKind::Sub => (g, -g),
                BinaryKind::Mul => (g * bd[ib], g * ad[ia]),
            };
            if let Some(ga) = ga.as_mut() {
                ga[ia] += da;
            }
            if let Some(gb) = gb.as_mut() {
                gb[ib] += db;
            }
        });
        vec![ga, gb]
    }
}

fn binary(a: &Tensor, b: &Tensor, kind: BinaryKind) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let mut data = vec![0.0; numel(&out_shape)];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
        data[o] = match kind {
            BinaryKind::Add => ad[ia] + bd[ib],
            BinaryKind::Sub => ad[ia] - bd[ib],
            BinaryKind::Mul => ad[ia] * bd[ib],
        };
    });
    Ok(Tensor::from_op(
        out_shape.clone(),
        data,
        &[a, b],
        BinaryBackward { kind, out_shape },
    ))
}

/// Broadcasting elementwise sum.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(a, b, BinaryKind::Add)
}

/// Broadcasting elementwise difference.
pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(a, b, BinaryKind::Sub)
}

/// Broadcasting elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(a, b, BinaryKind::Mul)
}

struct ConcatBackward {
    outer: usize,
    chunks: Vec<usize>,
}

impl Backward for ConcatBackward {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn backward(&self, inputs: &[Tensor], _: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let row: usize = self.chunks.iter().sum();
        let mut offset = 0;
        inputs
            .iter()
            .zip(&self.chunks)
            .map(|(t, &chunk)| {
                let start = offset;
                offset += chunk;
                t.requires_grad().then(|| {
                    let mut g = Vec::with_capacity(self.outer * chunk);
                    for o in 0..self.outer {
                        g.extend_from_slice(&grad[o * row + start..o * row + start + chunk]);
                    }
                    g
                })
            })
            .collect()
    }
}

/// Concatenates tensors along `axis`; all other extents must agree.
pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::Config("concat of zero tensors".into()))?;
    let nd = first.ndim();
    if axis >= nd {
        return Err(Error::Config(format!(
            "concat axis {axis} out of range for rank {nd}"
        )));
    }
    for t in tensors {
        let same = t.ndim() == nd
            && (0..nd).all(|i| i == axis || t.shape()[i] == first.shape()[i]);
        if !same {
            return Err(Error::Config(format!(
                "concat on axis {axis}: shape {:?} incompatible with {:?}",
                t.shape(),
                first.shape()
            )));
        }
    }
    let outer = numel(&first.shape()[..axis]);
    let inner = numel(&first.shape()[axis + 1..]);
    let chunks: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
    let mut shape = first.shape().to_vec();
    shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
    let mut data = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for (t, &chunk) in tensors.iter().zip(&chunks) {
            data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor::from_op(
        shape,
        data,
        tensors,
        ConcatBackward { outer, chunks },
    ))
}
