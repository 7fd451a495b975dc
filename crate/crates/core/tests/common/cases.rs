//! Shared check bodies used by both the focused tests and the acceptance
//! harness.

use rand::Rng;
use stabn_core::tensor::{
    add, batchnorm, concat, conv2d, conv3d, dropout, gap2d_spatial, gap3d, linear, mul,
    softmax_cross_entropy, sub, BatchNormStats, ConvSpec, Tensor,
};

use super::{grad_check, naive_conv2d, naive_conv3d, random_vec, rng};

const H: f64 = 1e-5;

/// Randomized shape/stride/padding/bias sweep of conv3d and conv2d against
/// the naive loops. Returns the worst absolute difference.
pub fn conv_oracle_sweep(seed: u64, cases: usize) -> Result<f64, String> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let n = r.random_range(1..3);
        let c = r.random_range(1..4);
        let co = r.random_range(1..4);
        let k = [
            r.random_range(1..4),
            r.random_range(1..4),
            r.random_range(1..4),
        ];
        let s = [
            r.random_range(1..3),
            r.random_range(1..3),
            r.random_range(1..3),
        ];
        let p = [
            r.random_range(0..2),
            r.random_range(0..2),
            r.random_range(0..2),
        ];
        let dims = [
            r.random_range(k[0]..k[0] + 4),
            r.random_range(k[1]..k[1] + 4),
            r.random_range(k[2]..k[2] + 4),
        ];
        let with_bias = case % 2 == 0;
        let xs = [n, c, dims[0], dims[1], dims[2]];
        let ws = [co, c, k[0], k[1], k[2]];
        let x = random_vec(&mut r, xs.iter().product());
        let w = random_vec(&mut r, ws.iter().product());
        let b = random_vec(&mut r, co);
        let spec = ConvSpec::new(c, co, k)
            .with_stride(s)
            .with_padding(p)
            .with_bias(with_bias);
        let bt = Tensor::new(&[co], b.clone()).unwrap();
        let y = conv3d(
            &Tensor::new(&xs, x.clone()).unwrap(),
            &spec,
            &Tensor::new(&ws, w.clone()).unwrap(),
            with_bias.then_some(&bt),
        )
        .unwrap();
        let (expect, shape) = naive_conv3d(&x, xs, &w, ws, with_bias.then_some(&b[..]), s, p);
        if y.shape() != shape {
            return Err(format!(
                "conv3d case {case}: shape {:?} vs {shape:?}",
                y.shape()
            ));
        }
        worst = y
            .data()
            .iter()
            .zip(&expect)
            .fold(worst, |m, (a, e)| m.max((a - e).abs()));

        // 2D counterpart with the same channel/kernel draw.
        let xs2 = [n, c, dims[1], dims[2]];
        let ws2 = [co, c, k[1], k[2]];
        let x2 = random_vec(&mut r, xs2.iter().product());
        let w2 = random_vec(&mut r, ws2.iter().product());
        let spec2 = ConvSpec::new_2d(c, co, [k[1], k[2]])
            .with_stride([1, s[1], s[2]])
            .with_padding([0, p[1], p[2]])
            .with_bias(with_bias);
        let y2 = conv2d(
            &Tensor::new(&xs2, x2.clone()).unwrap(),
            &spec2,
            &Tensor::new(&ws2, w2.clone()).unwrap(),
            with_bias.then_some(&bt),
        )
        .unwrap();
        let (expect2, shape2) = naive_conv2d(
            &x2,
            xs2,
            &w2,
            ws2,
            with_bias.then_some(&b[..]),
            [s[1], s[2]],
            [p[1], p[2]],
        );
        if y2.shape() != shape2 {
            return Err(format!(
                "conv2d case {case}: shape {:?} vs {shape2:?}",
                y2.shape()
            ));
        }
        worst = y2
            .data()
            .iter()
            .zip(&expect2)
            .fold(worst, |m, (a, e)| m.max((a - e).abs()));
    }
    Ok(worst)
}

/// Worst relative gradient error of every differentiable op, by name.
pub fn op_gradient_errors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    {
        let mut r = rng(13);
        let xs = vec![2, 2, 3, 4, 3];
        let ws = vec![3, 2, 3, 2, 2];
        let spec = ConvSpec::new(2, 3, [3, 2, 2])
            .with_stride([1, 2, 1])
            .with_padding([1, 1, 0]);
        let inputs = vec![
            (xs.clone(), random_vec(&mut r, 144)),
            (ws.clone(), random_vec(&mut r, 72)),
            (vec![3], random_vec(&mut r, 3)),
        ];
        let probe = random_vec(&mut r, 2 * 3 * 3 * 3 * 2);
        // output extents: frames 3, height 3, width 2
        let err = grad_check(&inputs, H, |t| {
            let y = conv3d(&t[0], &spec, &t[1], Some(&t[2])).unwrap();
            let p = Tensor::new(y.shape(), probe.clone()).unwrap();
            mul(&y, &p).unwrap().sum()
        });
        out.push(("conv3d", err));
    }
    {
        let mut r = rng(14);
        let spec = ConvSpec::new_2d(3, 2, [3, 3]).with_padding([0, 1, 1]);
        let inputs = vec![
            (vec![1, 3, 4, 4], random_vec(&mut r, 48)),
            (vec![2, 3, 3, 3], random_vec(&mut r, 54)),
            (vec![2], random_vec(&mut r, 2)),
        ];
        let probe = random_vec(&mut r, 32);
        let err = grad_check(&inputs, H, |t| {
            let y = conv2d(&t[0], &spec, &t[1], Some(&t[2])).unwrap();
            let p = Tensor::new(y.shape(), probe.clone()).unwrap();
            mul(&y, &p).unwrap().sum()
        });
        out.push(("conv2d", err));
    }
    {
        let mut r = rng(15);
        let (n, d, o) = (3, 5, 4);
        let x = random_vec(&mut r, n * d);
        let w = random_vec(&mut r, o * d);
        let b = random_vec(&mut r, o);
        let probe = random_vec(&mut r, n * o);
        let err = grad_check(&[(vec![n, d], x), (vec![o, d], w), (vec![o], b)], H, |t| {
            let y = linear(&t[0], &t[1], Some(&t[2])).unwrap();
            mul(&y, &Tensor::new(&[n, o], probe.clone()).unwrap())
                .unwrap()
                .sum()
        });
        out.push(("linear", err));
    }
    {
        let mut r = rng(16);
        // keep relu inputs away from the kink
        let x: Vec<f64> = random_vec(&mut r, 12)
            .into_iter()
            .map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
            .collect();
        let probe = random_vec(&mut r, 12);
        let p = || Tensor::new(&[3, 4], probe.clone()).unwrap();
        let err = grad_check(&[(vec![3, 4], x.clone())], H, |t| {
            mul(&t[0].sigmoid(), &p()).unwrap().sum()
        });
        out.push(("sigmoid", err));
        let err = grad_check(&[(vec![3, 4], x.clone())], H, |t| {
            mul(&t[0].relu(), &p()).unwrap().sum()
        });
        out.push(("relu", err));
    }
    {
        let mut r = rng(17);
        let a = random_vec(&mut r, 2 * 3 * 4 * 2 * 2);
        let b = random_vec(&mut r, 4);
        let c = random_vec(&mut r, 2 * 4 * 2 * 2);
        let probe = random_vec(&mut r, 2 * 3 * 4 * 2 * 2);
        let err = grad_check(
            &[
                (vec![2, 3, 4, 2, 2], a),
                (vec![1, 1, 4, 1, 1], b),
                (vec![2, 1, 4, 2, 2], c),
            ],
            H,
            |t| {
                let y = mul(&t[0], &t[1]).unwrap();
                let y = sub(&add(&y, &t[2]).unwrap(), &mul(&t[2], &t[1]).unwrap()).unwrap();
                mul(&y, &Tensor::new(&[2, 3, 4, 2, 2], probe.clone()).unwrap())
                    .unwrap()
                    .sum()
            },
        );
        out.push(("broadcast", err));
    }
    {
        let mut r = rng(18);
        let x = random_vec(&mut r, 2 * 3 * 2 * 3 * 3);
        let probe = random_vec(&mut r, 6);
        let err = grad_check(&[(vec![2, 3, 2, 3, 3], x)], H, |t| {
            let g = gap3d(&t[0]).unwrap();
            mul(&g, &Tensor::new(&[2, 3], probe.clone()).unwrap())
                .unwrap()
                .sum()
        });
        out.push(("gap3d", err));

        let x = random_vec(&mut r, 2 * 3 * 2 * 2);
        let err = grad_check(&[(vec![2, 3, 2, 2], x)], H, |t| {
            let g = gap2d_spatial(&t[0]).unwrap();
            mul(&g, &Tensor::new(&[2, 3], probe.clone()).unwrap())
                .unwrap()
                .sum()
        });
        out.push(("gap2d", err));

        let a = random_vec(&mut r, 2 * 2 * 3);
        let b = random_vec(&mut r, 2 * 3);
        let probe = random_vec(&mut r, 18);
        let err = grad_check(&[(vec![2, 2, 3], a), (vec![2, 1, 3], b)], H, |t| {
            let c = concat(&[&t[0], &t[1]], 1).unwrap();
            mul(&c, &Tensor::new(&[2, 3, 3], probe.clone()).unwrap())
                .unwrap()
                .sum()
        });
        out.push(("concat", err));
    }
    {
        let mut r = rng(19);
        let logits = random_vec(&mut r, 15)
            .into_iter()
            .map(|v| v * 3.0)
            .collect();
        let err = grad_check(&[(vec![3, 5], logits)], H, |t| {
            softmax_cross_entropy(&t[0], &[4, 0, 2]).unwrap()
        });
        out.push(("cross entropy", err));
    }
    {
        let mut r = rng(20);
        let x = random_vec(&mut r, 30);
        let err = grad_check(&[(vec![30], x)], H, |t| {
            let y = dropout(&t[0], 0.5, true, &mut rng(5)).unwrap();
            mul(&y, &y).unwrap().sum()
        });
        out.push(("dropout", err));
    }
    {
        let mut r = rng(21);
        let x = random_vec(&mut r, 3 * 2 * 5);
        let gamma: Vec<f64> = random_vec(&mut r, 2).iter().map(|v| v + 1.5).collect();
        let beta = random_vec(&mut r, 2);
        let probe = random_vec(&mut r, 30);
        let stats = BatchNormStats {
            mean: vec![0.1, -0.2],
            var: vec![0.8, 1.3],
        };
        for training in [true, false] {
            let err = grad_check(
                &[
                    (vec![3, 2, 5], x.clone()),
                    (vec![2], gamma.clone()),
                    (vec![2], beta.clone()),
                ],
                H,
                |t| {
                    let (y, _) = batchnorm(&t[0], &t[1], &t[2], &stats, training).unwrap();
                    mul(&y, &Tensor::new(&[3, 2, 5], probe.clone()).unwrap())
                        .unwrap()
                        .sum()
                },
            );
            out.push((
                if training {
                    "batchnorm (batch stats)"
                } else {
                    "batchnorm (running stats)"
                },
                err,
            ));
        }
    }
    {
        let mut r = rng(22);
        let x = random_vec(&mut r, 24);
        let probe = random_vec(&mut r, 24);
        let err = grad_check(&[(vec![2, 3, 4], x)], H, |t| {
            let y = t[0].reshape(&[4, 6]).unwrap().affine(-1.5, 0.25);
            mul(&y, &Tensor::new(&[4, 6], probe.clone()).unwrap())
                .unwrap()
                .mean()
        });
        out.push(("reshape/affine/mean", err));
    }
    out
}
