//! Test-only oracles: naive convolutions and central-difference gradients.
#![allow(dead_code)]

pub mod cases;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stabn_core::tensor::{no_grad, Tensor};
use stabn_core::train::joint_loss;
use stabn_core::{ForwardCtx, StAbnModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

/// Direct 3D cross-correlation: one loop per index, zero padding.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv3d(
    x: &[f64],
    xs: [usize; 5],
    w: &[f64],
    ws: [usize; 5],
    b: Option<&[f64]>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<f64>, [usize; 5]) {
    let [n, c, t, h, wd] = xs;
    let [co, ci, kt, kh, kw] = ws;
    assert_eq!(c, ci);
    let ot = (t + 2 * pad[0] - kt) / stride[0] + 1;
    let oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let ow = (wd + 2 * pad[2] - kw) / stride[2] + 1;
    let mut out = vec![0.0; n * co * ot * oh * ow];
    for s in 0..n {
        for o in 0..co {
            for a in 0..ot {
                for p in 0..oh {
                    for q in 0..ow {
                        let mut acc = b.map_or(0.0, |b| b[o]);
                        for i in 0..c {
                            for dt in 0..kt {
                                for dh in 0..kh {
                                    for dw in 0..kw {
                                        let ti = (a * stride[0] + dt) as isize - pad[0] as isize;
                                        let hi = (p * stride[1] + dh) as isize - pad[1] as isize;
                                        let wi = (q * stride[2] + dw) as isize - pad[2] as isize;
                                        if ti < 0
                                            || hi < 0
                                            || wi < 0
                                            || ti >= t as isize
                                            || hi >= h as isize
                                            || wi >= wd as isize
                                        {
                                            continue;
                                        }
                                        let xv = x[(((s * c + i) * t + ti as usize) * h
                                            + hi as usize)
                                            * wd
                                            + wi as usize];
                                        let wv = w[(((o * ci + i) * kt + dt) * kh + dh) * kw + dw];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        out[(((s * co + o) * ot + a) * oh + p) * ow + q] = acc;
                    }
                }
            }
        }
    }
    (out, [n, co, ot, oh, ow])
}

/// Direct 2D cross-correlation.
pub fn naive_conv2d(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    b: Option<&[f64]>,
    stride: [usize; 2],
    pad: [usize; 2],
) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, wd] = xs;
    let [co, ci, kh, kw] = ws;
    assert_eq!(c, ci);
    let oh = (h + 2 * pad[0] - kh) / stride[0] + 1;
    let ow = (wd + 2 * pad[1] - kw) / stride[1] + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    for s in 0..n {
        for o in 0..co {
            for p in 0..oh {
                for q in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b[o]);
                    for i in 0..c {
                        for dh in 0..kh {
                            for dw in 0..kw {
                                let hi = (p * stride[0] + dh) as isize - pad[0] as isize;
                                let wi = (q * stride[1] + dw) as isize - pad[1] as isize;
                                if hi < 0 || wi < 0 || hi >= h as isize || wi >= wd as isize {
                                    continue;
                                }
                                acc += x[((s * c + i) * h + hi as usize) * wd + wi as usize]
                                    * w[((o * ci + i) * kh + dh) * kw + dw];
                            }
                        }
                    }
                    out[((s * co + o) * oh + p) * ow + q] = acc;
                }
            }
        }
    }
    (out, [n, co, oh, ow])
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps gradients that are
/// zero up to rounding from producing spurious large ratios.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

/// Worst relative error between backward and central differences (step `h`)
/// for every element of every input. `f` maps parameter leaves to a scalar.
pub fn grad_check(
    inputs: &[(Vec<usize>, Vec<f64>)],
    h: f64,
    f: impl Fn(&[Tensor]) -> Tensor,
) -> f64 {
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(s, d)| Tensor::parameter(s, d.clone()).unwrap())
        .collect();
    f(&leaves).backward().unwrap();
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |which: usize, idx: usize, delta: f64| -> f64 {
        let ts: Vec<Tensor> = inputs
            .iter()
            .enumerate()
            .map(|(j, (s, d))| {
                let mut d = d.clone();
                if j == which {
                    d[idx] += delta;
                }
                Tensor::new(s, d).unwrap()
            })
            .collect();
        no_grad(|| f(&ts).item().unwrap())
    };

    let mut worst: f64 = 0.0;
    for (j, (_, d)) in inputs.iter().enumerate() {
        for (i, &a) in analytic[j].iter().enumerate().take(d.len()) {
            let numeric = (eval(j, i, h) - eval(j, i, -h)) / (2.0 * h);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

/// Central-difference check of the joint loss against backward for every
/// parameter of `model`. Batch-norm runs in training mode and dropout uses
/// a mask fixed by `mask_seed`. Returns the worst relative error and the
/// parameter it occurred in.
pub fn model_grad_check(model: &mut StAbnModel, video: &Tensor, labels: &[usize], h: f64, mask_seed: u64) -> (f64, String) {
    let loss = |m: &StAbnModel| -> Tensor {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let out = m.forward(video, &mut ForwardCtx::train(&mut mask_rng)).unwrap();
        joint_loss(&out, labels).unwrap().0
    };
    model.store().zero_grads();
    loss(model).backward().unwrap();
    let analytic: Vec<Vec<f64>> = model
        .store()
        .params()
        .iter()
        .map(|p| p.value.grad().unwrap_or_else(|| vec![0.0; p.value.numel()]))
        .collect();

    let mut worst = (0.0, String::new());
    for (i, grads) in analytic.iter().enumerate() {
        let name = model.store().params()[i].name.clone();
        let base = model.store().params()[i].value.to_vec();
        for (j, &g) in grads.iter().enumerate() {
            let mut at = |delta: f64| {
                let mut d = base.clone();
                d[j] += delta;
                model.store_mut().set_by_index(i, d).unwrap();
                no_grad(|| loss(model).item().unwrap())
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            let e = rel_err(g, numeric);
            if e > worst.0 {
                worst = (e, format!("{name}[{j}]"));
            }
        }
        model.store_mut().set_by_index(i, base).unwrap();
    }
    worst
}
