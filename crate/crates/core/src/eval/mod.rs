//! Accuracy, the four-condition attention-inversion experiment and
//! localization scoring against synthetic ground truth.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::explain::upsample_bilinear;
use crate::kv::KvBlock;
use crate::net::{AttentionOverride, ForwardCtx, StAbnModel};
use crate::synth::{batch_iter, VideoDataset};
use crate::tensor::{no_grad, Tensor};
use crate::train::{joint_loss, LossBreakdown};

/// Whether `label` is among the `k` largest entries of `row`. Equal logits
/// rank the lower class index first.
pub fn topk_hit(row: &[f64], label: usize, k: usize) -> bool {
    let target = row[label];
    let rank = row
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > target || (v == target && j < label))
        .count();
    rank < k
}

fn check_logits(logits: &Tensor, labels: &[usize], k: usize) -> Result<(usize, usize)> {
    let &[n, classes] = logits.shape() else {
        return Err(Error::Input(format!("logits must be [N, K], got {:?}", logits.shape())));
    };
    if labels.len() != n {
        return Err(Error::Input(format!("{} labels for {n} rows", labels.len())));
    }
    if k == 0 || k > classes {
        return Err(Error::Input(format!("k = {k} not in 1..={classes}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
    }
    Ok((n, classes))
}

fn topk_hits(logits: &Tensor, labels: &[usize], k: usize) -> Result<usize> {
    let (_, classes) = check_logits(logits, labels, k)?;
    Ok(logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &l)| topk_hit(row, l, k))
        .count())
}

/// Fraction of rows whose label is among the `k` highest logits.
pub fn topk_accuracy(logits: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    let hits = topk_hits(logits, labels, k)?;
    Ok(if labels.is_empty() { 0.0 } else { hits as f64 / labels.len() as f64 })
}

/// Loss and perception-branch accuracy over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub loss: LossBreakdown,
    pub top1: f64,
    pub top5: f64,
    pub samples: usize,
}

fn top5_k(classes: usize) -> usize {
    classes.min(5)
}

/// Inference-mode pass over `dataset`; parameters and running statistics are
/// left untouched.
pub fn evaluate(model: &StAbnModel, dataset: &VideoDataset, batch_size: usize) -> Result<EvalSummary> {
    let k5 = top5_k(model.config().num_classes);
    no_grad(|| {
        let (mut att, mut per) = (0.0, 0.0);
        let (mut hit1, mut hit5, mut n) = (0, 0, 0);
        for batch in batch_iter(dataset, batch_size, None)? {
            let out = model.forward(&batch.videos, &mut ForwardCtx::eval())?;
            let (_, parts) = joint_loss(&out, &batch.labels)?;
            let b = batch.labels.len();
            att += parts.l_att * b as f64;
            per += parts.l_per * b as f64;
            hit1 += topk_hits(&out.per_logits, &batch.labels, 1)?;
            hit5 += topk_hits(&out.per_logits, &batch.labels, k5)?;
            n += b;
        }
        let d = n.max(1) as f64;
        let (l_att, l_per) = (att / d, per / d);
        Ok(EvalSummary {
            loss: LossBreakdown {
                l_att,
                l_per,
                l_total: l_att + l_per,
            },
            top1: hit1 as f64 / d,
            top5: hit5 as f64 / d,
            samples: n,
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionRow {
    pub spatial_inverted: bool,
    pub temporal_inverted: bool,
    pub top1: f64,
    pub top5: f64,
}

/// Rows in the order (no,no), (yes,no), (no,yes), (yes,yes).
#[derive(Debug, Clone, PartialEq)]
pub struct InversionReport {
    pub rows: [InversionRow; 4],
    pub samples: usize,
}

pub const INVERSION_CONDITIONS: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];

impl InversionReport {
    pub fn row(&self, spatial: bool, temporal: bool) -> &InversionRow {
        self.rows
            .iter()
            .find(|r| r.spatial_inverted == spatial && r.temporal_inverted == temporal)
            .expect("all four conditions present")
    }

    pub fn baseline(&self) -> &InversionRow {
        &self.rows[0]
    }

    pub fn to_records(&self) -> Vec<KvBlock> {
        self.rows.iter().map(|r| inversion_record(r, self.samples)).collect()
    }

    /// Aligned four-row text table.
    pub fn render_table(&self) -> String {
        render_rows(&self.rows)
    }
}

pub fn inversion_record(r: &InversionRow, samples: usize) -> KvBlock {
    let mut kv = KvBlock::default();
    kv.push("spatial_inverted", r.spatial_inverted);
    kv.push("temporal_inverted", r.temporal_inverted);
    kv.push("top1", format!("{:.6}", r.top1));
    kv.push("top5", format!("{:.6}", r.top5));
    kv.push("samples", samples);
    kv
}

pub fn render_rows(rows: &[InversionRow]) -> String {
    let yes_no = |b: bool| if b { "yes" } else { "no" };
    let mut s = format!("{:<9} {:<10} {:>7} {:>7}\n", "spatial", "temporal", "top1", "top5");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<9} {:<10} {:>7.2} {:>7.2}",
            yes_no(r.spatial_inverted),
            yes_no(r.temporal_inverted),
            100.0 * r.top1,
            100.0 * r.top5
        );
    }
    s
}

/// Evaluates the selected inversion conditions. The extractor and attention
/// heads run once per batch; only the perception half is repeated.
pub fn run_inversion_conditions(
    model: &StAbnModel,
    dataset: &VideoDataset,
    batch_size: usize,
    conditions: &[(bool, bool)],
) -> Result<(Vec<InversionRow>, usize)> {
    let k5 = top5_k(model.config().num_classes);
    no_grad(|| {
        let mut hits = vec![(0usize, 0usize); conditions.len()];
        let mut n = 0;
        for batch in batch_iter(dataset, batch_size, None)? {
            let stage = model.attend(&batch.videos, &mut ForwardCtx::eval())?;
            for (&(s, t), h) in conditions.iter().zip(hits.iter_mut()) {
                let out = model.complete(&stage, &AttentionOverride::inverted(s, t), &mut ForwardCtx::eval())?;
                h.0 += topk_hits(&out.per_logits, &batch.labels, 1)?;
                h.1 += topk_hits(&out.per_logits, &batch.labels, k5)?;
            }
            n += batch.labels.len();
        }
        let d = n.max(1) as f64;
        let rows = conditions
            .iter()
            .zip(hits)
            .map(|(&(s, t), (h1, h5))| InversionRow {
                spatial_inverted: s,
                temporal_inverted: t,
                top1: h1 as f64 / d,
                top5: h5 as f64 / d,
            })
            .collect();
        Ok((rows, n))
    })
}

pub fn run_inversion_experiment(model: &StAbnModel, dataset: &VideoDataset, batch_size: usize) -> Result<InversionReport> {
    let (rows, samples) = run_inversion_conditions(model, dataset, batch_size, &INVERSION_CONDITIONS)?;
    Ok(InversionReport {
        rows: rows.try_into().expect("four conditions"),
        samples,
    })
}

/// Attention contrast between ground-truth regions and the rest, averaged
/// over correctly classified samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationReport {
    /// Mean `M_t` inside the motion window minus mean outside it.
    pub temporal_contrast: f64,
    /// Mean upsampled `M_s` inside the shape box minus mean outside it.
    pub spatial_contrast: f64,
    pub samples_correct: usize,
    /// Correct samples whose window leaves frames outside it.
    pub samples_temporal: usize,
    pub samples_total: usize,
}

impl LocalizationReport {
    pub fn to_kv(&self) -> KvBlock {
        let mut kv = KvBlock::default();
        kv.push("temporal_contrast", format!("{:.6}", self.temporal_contrast));
        kv.push("spatial_contrast", format!("{:.6}", self.spatial_contrast));
        kv.push("samples_correct", self.samples_correct);
        kv.push("samples_temporal", self.samples_temporal);
        kv.push("samples_total", self.samples_total);
        kv
    }
}

fn mean_in_out(values: impl Iterator<Item = (bool, f64)>) -> Option<f64> {
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for (inside, v) in values {
        if inside {
            si += v;
            ni += 1;
        } else {
            so += v;
            no += 1;
        }
    }
    (ni > 0 && no > 0).then(|| si / ni as f64 - so / no as f64)
}

pub fn score_localization(model: &StAbnModel, dataset: &VideoDataset, batch_size: usize) -> Result<LocalizationReport> {
    if let Some(i) = dataset.samples.iter().position(|s| s.meta.is_none()) {
        return Err(Error::Input(format!(
            "sample {i} has no window/box metadata; localization needs ground truth"
        )));
    }
    let [_, t, h, w] = dataset.video_shape();
    no_grad(|| {
        let (mut t_sum, mut t_n, mut s_sum, mut s_n) = (0.0, 0usize, 0.0, 0usize);
        for batch in batch_iter(dataset, batch_size, None)? {
            let out = model.forward(&batch.videos, &mut ForwardCtx::eval())?;
            let k = model.config().num_classes;
            let spatial = &out.attention.spatial;
            let [hs, ws] = [spatial.shape()[3], spatial.shape()[4]];
            for (row, &index) in batch.indices.iter().enumerate() {
                let sample = &dataset.samples[index];
                let logits = &out.per_logits.data()[row * k..(row + 1) * k];
                if !topk_hit(logits, sample.label, 1) {
                    continue;
                }
                let meta = sample.meta.as_ref().expect("checked above");
                let mt = &out.attention.temporal.data()[row * t..(row + 1) * t];
                if let Some(c) = mean_in_out(mt.iter().enumerate().map(|(f, &v)| (meta.in_window(f), v))) {
                    t_sum += c;
                    t_n += 1;
                }
                let maps = &spatial.data()[row * t * hs * ws..(row + 1) * t * hs * ws];
                let mut frame_sum = 0.0;
                let mut frames = 0;
                for f in 0..t {
                    let up = upsample_bilinear(&maps[f * hs * ws..(f + 1) * hs * ws], hs, ws, h, w);
                    let [top, left, bottom, right] = meta.bboxes[f].map(usize::from);
                    let cells = up.iter().enumerate().map(|(i, &v)| {
                        let (y, x) = (i / w, i % w);
                        ((top..bottom).contains(&y) && (left..right).contains(&x), v)
                    });
                    if let Some(c) = mean_in_out(cells) {
                        frame_sum += c;
                        frames += 1;
                    }
                }
                if frames > 0 {
                    s_sum += frame_sum / frames as f64;
                    s_n += 1;
                }
            }
        }
        Ok(LocalizationReport {
            temporal_contrast: if t_n > 0 { t_sum / t_n as f64 } else { 0.0 },
            spatial_contrast: if s_n > 0 { s_sum / s_n as f64 } else { 0.0 },
            samples_correct: s_n,
            samples_temporal: t_n,
            samples_total: dataset.len(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_examples() {
        let l = Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(topk_accuracy(&l, &[2], 1).unwrap(), 1.0);
        let l = Tensor::new(&[1, 3], vec![3.0, 2.0, 1.0]).unwrap();
        assert_eq!(topk_accuracy(&l, &[0], 2).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&l, &[2], 2).unwrap(), 0.0);
    }

    #[test]
    fn ties_favor_lower_index() {
        let row = [1.0, 1.0, 1.0];
        assert!(topk_hit(&row, 0, 1));
        assert!(!topk_hit(&row, 1, 1));
        assert!(topk_hit(&row, 1, 2));
        assert!(!topk_hit(&row, 2, 2));
    }

    #[test]
    fn bad_k_and_labels_rejected() {
        let l = Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(topk_accuracy(&l, &[0], 4).is_err());
        assert!(topk_accuracy(&l, &[0], 0).is_err());
        assert!(topk_accuracy(&l, &[3], 1).is_err());
    }

    #[test]
    fn contrast_needs_both_sides() {
        assert_eq!(mean_in_out([(true, 1.0), (false, 0.25)].into_iter()), Some(0.75));
        assert_eq!(mean_in_out([(true, 1.0)].into_iter()), None);
    }
}
