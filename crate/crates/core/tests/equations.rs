//! Property suites for the attention equations, 1000 cases each.

use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use stabn_core::net::{apply_spatial_attention, apply_temporal_attention, invert_attention, AttentionPair};
use stabn_core::tensor::no_grad;
use stabn_core::train::joint_loss;
use stabn_core::{ForwardCtx, ForwardOutput, ModelConfig, StAbnModel, Tensor};

/// 1000 cases from a pinned seed, so every run checks the same inputs.
fn suite_config() -> ProptestConfig {
    ProptestConfig {
        cases: 1000,
        rng_seed: RngSeed::Fixed(0x5EED_A77E),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn features() -> impl Strategy<Value = ([usize; 5], Vec<f64>)> {
    (1usize..3, 1usize..4, 1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(n, c, t, h, w)| {
        let shape = [n, c, t, h, w];
        (Just(shape), prop::collection::vec(-10.0f64..10.0, n * c * t * h * w))
    })
}

proptest! {
    #![proptest_config(suite_config())]

    #[test]
    fn spatial_residual_is_identity_at_zero((shape, data) in features()) {
        let [n, _, t, h, w] = shape;
        let f = Tensor::new(&shape, data).unwrap();
        let m = Tensor::zeros(&[n, 1, t, h, w]).unwrap();
        prop_assert_eq!(apply_spatial_attention(&f, &m).unwrap().to_vec(), f.to_vec());
    }

    #[test]
    fn temporal_gate_annihilates_and_passes((shape, data) in features()) {
        let [n, _, t, _, _] = shape;
        let f = Tensor::new(&shape, data).unwrap();
        let closed = apply_temporal_attention(&f, &Tensor::zeros(&[n, t]).unwrap()).unwrap();
        prop_assert!(closed.data().iter().all(|&v| v == 0.0));
        let open = apply_temporal_attention(&f, &Tensor::full(&[n, t], 1.0).unwrap()).unwrap();
        prop_assert_eq!(open.to_vec(), f.to_vec());
    }

    #[test]
    fn joint_loss_is_exactly_additive(
        (k, att, per, labels) in (2usize..6, 1usize..5).prop_flat_map(|(k, n)| (
            Just(k),
            prop::collection::vec(-20.0f64..20.0, n * k),
            prop::collection::vec(-20.0f64..20.0, n * k),
            prop::collection::vec(0..k, n),
        ))
    ) {
        let n = labels.len();
        let out = ForwardOutput {
            att_logits: Tensor::new(&[n, k], att).unwrap(),
            per_logits: Tensor::new(&[n, k], per).unwrap(),
            attention: AttentionPair {
                spatial: Tensor::zeros(&[n, 1, 1, 1, 1]).unwrap(),
                temporal: Tensor::zeros(&[n, 1]).unwrap(),
            },
        };
        let (total, parts) = joint_loss(&out, &labels).unwrap();
        prop_assert_eq!(parts.l_total, parts.l_att + parts.l_per);
        prop_assert_eq!(total.item().unwrap(), parts.l_total);
    }

    #[test]
    fn inversion_is_an_involution(m in prop::collection::vec(0.0f64..=1.0, 1..64)) {
        let t = Tensor::new(&[m.len()], m.clone()).unwrap();
        let once = invert_attention(&t).unwrap();
        prop_assert!(once.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let twice = invert_attention(&once).unwrap();
        for (a, b) in twice.data().iter().zip(&m) {
            prop_assert!((a - b).abs() <= f64::EPSILON, "{} vs {}", a, b);
        }
    }
}

#[test]
fn half_is_the_inversion_fixed_point() {
    let t = Tensor::full(&[7], 0.5).unwrap();
    assert_eq!(invert_attention(&t).unwrap().to_vec(), vec![0.5; 7]);
}

proptest! {
    #![proptest_config(suite_config())]

    #[test]
    fn attention_lies_strictly_inside_unit_interval(
        seed in any::<u64>(),
        video in prop::collection::vec(0.0f64..=1.0, 2 * 2 * 8 * 8),
    ) {
        let config = ModelConfig::micro();
        let model = StAbnModel::new(&config, seed).unwrap();
        let x = Tensor::new(&[2, 1, 2, 8, 8], video).unwrap();
        let out = no_grad(|| model.forward(&x, &mut ForwardCtx::eval())).unwrap();
        for v in out.attention.spatial.data().iter().chain(out.attention.temporal.data()) {
            prop_assert!(*v > 0.0 && *v < 1.0, "{}", v);
        }
    }
}
