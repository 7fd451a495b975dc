use proptest::prelude::*;
use stabn_core::eval::{evaluate, run_inversion_experiment, score_localization, topk_accuracy};
use stabn_core::synth::{generate, SynthConfig, VideoDataset};
use stabn_core::{Error, ModelConfig, StAbnModel, Tensor};

/// Sort-based oracle: stable sort by descending logit keeps lower indices
/// first among ties.
fn oracle_topk(logits: &[f64], k_classes: usize, labels: &[usize], k: usize) -> f64 {
    let hits = logits
        .chunks(k_classes)
        .zip(labels)
        .filter(|(row, &label)| {
            let mut order: Vec<usize> = (0..k_classes).collect();
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
            order[..k].contains(&label)
        })
        .count();
    hits as f64 / labels.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn topk_matches_sort_oracle(
        (classes, logits, labels, k) in (2usize..8, 1usize..20).prop_flat_map(|(c, n)| (
            Just(c),
            // a coarse grid makes ties common
            prop::collection::vec((-3i32..3).prop_map(f64::from), n * c),
            prop::collection::vec(0..c, n),
            1..=c,
        ))
    ) {
        let n = labels.len();
        let t = Tensor::new(&[n, classes], logits.clone()).unwrap();
        prop_assert_eq!(topk_accuracy(&t, &labels, k).unwrap(), oracle_topk(&logits, classes, &labels, k));
    }
}

fn tiny() -> (VideoDataset, VideoDataset) {
    generate(&SynthConfig {
        num_classes: 2,
        frames: 2,
        size: 8,
        shape_size: 3,
        window_len: 2,
        samples_train: 2,
        samples_val: 10,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn inversion_baseline_equals_plain_evaluation() {
    let (_, val) = tiny();
    let model = StAbnModel::new(&ModelConfig::micro(), 2).unwrap();
    let report = run_inversion_experiment(&model, &val, 3).unwrap();
    let plain = evaluate(&model, &val, 4).unwrap();
    assert_eq!(report.baseline().top1, plain.top1);
    assert_eq!(report.baseline().top5, plain.top5);
    assert_eq!(report.samples, 10);
    for r in &report.rows {
        assert!(r.top5 >= r.top1);
        assert!((0.0..=1.0).contains(&r.top1));
    }
    assert!(report.row(true, false).spatial_inverted);
    assert_eq!(report, run_inversion_experiment(&model, &val, 5).unwrap());
    assert_eq!(report.render_table().lines().count(), 5);
}

#[test]
fn localization_bounds_and_metadata_requirement() {
    let (_, mut val) = tiny();
    let model = StAbnModel::new(&ModelConfig::micro(), 2).unwrap();
    let report = score_localization(&model, &val, 4).unwrap();
    assert!(report.temporal_contrast.abs() <= 1.0);
    assert!(report.spatial_contrast.abs() <= 1.0);
    assert!(report.samples_correct <= report.samples_total);
    // T = L = 2: the window covers every frame, leaving no outside frames
    assert_eq!(report.samples_temporal, 0);
    val.samples[4].meta = None;
    assert!(matches!(score_localization(&model, &val, 4), Err(Error::Input(_))));
}
