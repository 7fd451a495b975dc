mod common;

use common::{random_vec, rng};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stabn_core::eval::evaluate;
use stabn_core::net::AttentionPair;
use stabn_core::synth::{batch_iter, generate, SynthConfig};
use stabn_core::tensor::no_grad;
use stabn_core::train::{
    joint_loss, load_checkpoint, read_log, save_checkpoint, sgd_step, train, Checkpoint, RngState, SgdState,
    TrainConfig, TrainOptions,
};
use stabn_core::{Error, ForwardCtx, ForwardOutput, ModelConfig, StAbnModel, Tensor};

fn output_from_logits(att: Vec<f64>, per: Vec<f64>, n: usize, k: usize) -> ForwardOutput {
    ForwardOutput {
        att_logits: Tensor::parameter(&[n, k], att).unwrap(),
        per_logits: Tensor::parameter(&[n, k], per).unwrap(),
        attention: AttentionPair {
            spatial: Tensor::zeros(&[n, 1, 1, 1, 1]).unwrap(),
            temporal: Tensor::zeros(&[n, 1]).unwrap(),
        },
    }
}

#[test]
fn uniform_logits_give_twice_log_k() {
    let out = output_from_logits(vec![0.0; 8], vec![0.0; 8], 2, 4);
    let (_, parts) = joint_loss(&out, &[1, 3]).unwrap();
    assert!((parts.l_total - 2.0 * 4f64.ln()).abs() < 1e-15);
    assert_eq!(parts.l_total, parts.l_att + parts.l_per);
    let bad = joint_loss(&out, &[1, 4]).unwrap_err();
    assert!(matches!(bad, Error::Input(_)));
}

#[test]
fn joint_loss_gradient_reaches_both_branches() {
    let mut r = rng(3);
    let out = output_from_logits(random_vec(&mut r, 6), random_vec(&mut r, 6), 2, 3);
    let (loss, _) = joint_loss(&out, &[0, 2]).unwrap();
    loss.backward().unwrap();
    assert!(out.att_logits.grad().unwrap().iter().any(|&g| g != 0.0));
    assert!(out.per_logits.grad().unwrap().iter().any(|&g| g != 0.0));
}

/// A one-parameter model is enough to pin the update rule; the micro model
/// supplies a real store and the test overwrites one weight.
fn one_weight_step(w: f64, grad: f64, lr: f64, momentum: f64, wd: f64, steps: usize) -> (f64, f64) {
    let mut model = StAbnModel::new(&ModelConfig::micro(), 0).unwrap();
    let idx = model.store().params().iter().position(|p| p.decay).unwrap();
    let n = model.store().params()[idx].value.numel();
    let mut state = SgdState::new(&model);
    let config = TrainConfig {
        momentum,
        weight_decay: wd,
        ..TrainConfig::default()
    };
    let mut w_now = w;
    for _ in 0..steps {
        model.store_mut().set_by_index(idx, vec![w_now; n]).unwrap();
        let p = model.store().params()[idx].value.clone();
        // loss = grad · sum(p) / n per element gives d/dp = grad
        p.affine(grad, 0.0).sum().backward().unwrap();
        sgd_step(&mut model, &mut state, &config, lr).unwrap();
        w_now = model.store().params()[idx].value.data()[0];
    }
    (w_now, state.velocity[idx][0])
}

#[test]
fn sgd_update_rule() {
    assert_eq!(one_weight_step(1.0, 1.0, 0.1, 0.0, 0.0, 1).0, 0.9);
    let (w, _) = one_weight_step(1.0, 1.0, 0.1, 0.0, 0.0005, 1);
    assert!((w - 0.89995).abs() < 1e-15, "{w}");
    // two steps by hand: v1 = g + wd·w0, w1 = w0 − lr·v1,
    // v2 = μ·v1 + g + wd·w1, w2 = w1 − lr·v2
    let (g, lr, mu, wd, w0) = (0.3, 0.05, 0.9, 0.0005, 0.7);
    let v1 = g + wd * w0;
    let w1 = w0 - lr * v1;
    let v2 = mu * v1 + (g + wd * w1);
    let w2 = w1 - lr * v2;
    let (w, v) = one_weight_step(w0, g, lr, mu, wd, 2);
    assert_eq!(v, v2);
    assert_eq!(w, w2);
    assert!((v2 - 1.9 * g).abs() < 2.0 * wd);
}

#[test]
fn nan_gradient_names_the_parameter() {
    let mut model = StAbnModel::new(&ModelConfig::micro(), 0).unwrap();
    let p = model.store().params()[3].value.clone();
    let name = model.store().params()[3].name.clone();
    p.affine(f64::NAN, 0.0).sum().backward().unwrap();
    let mut state = SgdState::new(&model);
    let err = sgd_step(&mut model, &mut state, &TrainConfig::default(), 0.01).unwrap_err();
    assert!(matches!(&err, Error::Numerical(m) if m.contains(&name)), "{err}");
}

fn tiny_data() -> (stabn_core::synth::VideoDataset, stabn_core::synth::VideoDataset) {
    generate(&SynthConfig {
        num_classes: 2,
        frames: 2,
        size: 8,
        shape_size: 3,
        window_len: 2,
        samples_train: 12,
        samples_val: 6,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn small_step_descends() {
    let (data, _) = tiny_data();
    let mut model = StAbnModel::new(&ModelConfig::micro(), 4).unwrap();
    let batch = batch_iter(&data, 12, None).unwrap().next().unwrap();
    let loss_of = |m: &StAbnModel| {
        let mut mask = ChaCha8Rng::seed_from_u64(1);
        let out = m.forward(&batch.videos, &mut ForwardCtx::train(&mut mask)).unwrap();
        joint_loss(&out, &batch.labels).unwrap()
    };
    let (loss, before) = loss_of(&model);
    loss.backward().unwrap();
    let config = TrainConfig {
        momentum: 0.0,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let mut state = SgdState::new(&model);
    sgd_step(&mut model, &mut state, &config, 1e-4).unwrap();
    let (_, after) = loss_of(&model);
    assert!(after.l_total < before.l_total, "{} → {}", before.l_total, after.l_total);
}

#[test]
fn evaluation_leaves_model_untouched() {
    let (_, val) = tiny_data();
    let model = StAbnModel::new(&ModelConfig::micro(), 4).unwrap();
    let snapshot = |m: &StAbnModel| {
        let p: Vec<Vec<f64>> = m.store().params().iter().map(|p| p.value.to_vec()).collect();
        let s: Vec<_> = m.store().stats_entries().to_vec();
        (p, s)
    };
    let before = snapshot(&model);
    let a = evaluate(&model, &val, 4).unwrap();
    let b = evaluate(&model, &val, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(snapshot(&model), before);
}

#[test]
fn empty_split_is_an_input_error() {
    let (train_set, mut val) = tiny_data();
    val.samples.clear();
    let mut model = StAbnModel::new(&ModelConfig::micro(), 4).unwrap();
    let err = train(&mut model, &train_set, &val, &TrainConfig::default(), &TrainOptions::default(), |_| {})
        .unwrap_err();
    assert!(matches!(err, Error::Input(_)));
}

#[test]
fn fixed_seed_training_is_reproducible() {
    let (train_set, val) = tiny_data();
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        batch_size: 4,
        epochs_max: 3,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = |tag: &str| {
        let mut model = StAbnModel::new(&ModelConfig::micro(), config.seed).unwrap();
        let options = TrainOptions {
            checkpoint_path: Some(dir.path().join(format!("{tag}.ckpt"))),
            log_path: Some(dir.path().join(format!("{tag}.log"))),
        };
        let mut seen = Vec::new();
        let outcome = train(&mut model, &train_set, &val, &config, &options, |r| seen.push(r.clone())).unwrap();
        assert_eq!(seen, outcome.log);
        outcome
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a.log.len(), 3);
    let la = std::fs::read(dir.path().join("a.log")).unwrap();
    let lb = std::fs::read(dir.path().join("b.log")).unwrap();
    assert_eq!(la, lb);
    assert_eq!(read_log(dir.path().join("a.log")).unwrap(), a.log);
    let ca = std::fs::read(dir.path().join("a.ckpt")).unwrap();
    assert_eq!(ca, std::fs::read(dir.path().join("b.ckpt")).unwrap());
    assert_eq!(ca, b.best.to_bytes().unwrap());
    for r in &a.log {
        assert_eq!(r.train_l_total, r.train_l_att + r.train_l_per);
        assert!(r.val_top1 >= 0.0 && r.val_top1 <= 1.0);
    }
}

#[test]
fn checkpoint_restores_forward_exactly() {
    let (train_set, val) = tiny_data();
    let config = TrainConfig {
        batch_size: 4,
        epochs_max: 1,
        ..TrainConfig::default()
    };
    let mut model = StAbnModel::new(&ModelConfig::micro(), 1).unwrap();
    let outcome = train(&mut model, &train_set, &val, &config, &TrainOptions::default(), |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &outcome.best).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let again = dir.path().join("m2.ckpt");
    save_checkpoint(&again, &loaded).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

    let restored = loaded.to_model().unwrap();
    let video = val.video_tensor(0).unwrap();
    let y0 = no_grad(|| model.forward(&video, &mut ForwardCtx::eval())).unwrap();
    let y1 = no_grad(|| restored.forward(&video, &mut ForwardCtx::eval())).unwrap();
    assert_eq!(y0.per_logits.to_vec(), y1.per_logits.to_vec());
    assert_eq!(y0.attention.spatial.to_vec(), y1.attention.spatial.to_vec());
}

#[test]
fn checkpoint_for_wrong_config_is_rejected() {
    let model = StAbnModel::new(&ModelConfig::micro(), 1).unwrap();
    let mut ckpt = Checkpoint::capture(&model, &SgdState::new(&model), 0, 1.0, RngState::of(&ChaCha8Rng::seed_from_u64(0)));
    ckpt.params.pop();
    ckpt.momentum.pop();
    let bytes = ckpt.to_bytes().unwrap();
    let err = Checkpoint::from_bytes(&bytes).unwrap().to_model().unwrap_err();
    assert!(matches!(err, Error::Format(_)));
}
