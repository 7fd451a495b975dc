use std::fs;
use std::path::{Path, PathBuf};

use stabn_core::eval::{render_rows, run_inversion_conditions, score_localization, inversion_record, INVERSION_CONDITIONS};
use stabn_core::explain::{contact_sheet, render_spatial, render_temporal, write_ppm};
use stabn_core::kv::KvBlock;
use stabn_core::synth::{dataset_checksum, generate, load_dataset, save_dataset, SynthConfig, VideoDataset};
use stabn_core::tensor::no_grad;
use stabn_core::train::{load_checkpoint, train as run_training, TrainConfig, TrainOptions};
use stabn_core::{Error, ForwardCtx, ModelConfig, Result, StAbnModel};

use crate::config::{echo, parse_section, resolve, write_echo, Overrides, Section};
use crate::{EvalArgs, ExplainArgs, GenArgs, Invert, TrainArgs};

pub const TRAIN_FILE: &str = "train.stvid";
pub const VAL_FILE: &str = "val.stvid";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const LOG_FILE: &str = "train_log.txt";

fn overrides(config: &Option<PathBuf>) -> Result<Overrides> {
    match config {
        Some(p) => Overrides::from_file(p),
        None => Ok(Overrides::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn path_kv(entries: &[(&str, &Path)]) -> KvBlock {
    let mut kv = KvBlock::default();
    for (k, p) in entries {
        kv.push(k, p.display());
    }
    kv
}

fn summarize(split: &str, ds: &VideoDataset, path: &Path) -> Result<String> {
    let hist = ds
        .class_histogram()
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let mut kv = KvBlock::default();
    kv.push("split", split);
    kv.push("samples", ds.len());
    kv.push("histogram", hist);
    kv.push("checksum", format!("{:08x}", dataset_checksum(ds)?));
    kv.push("path", path.display());
    Ok(kv.to_record())
}

pub fn gen(a: GenArgs) -> Result<()> {
    let mut o = overrides(&a.config)?;
    let s = Section::Synth;
    o.set(s, "num_classes", a.classes);
    o.set(s, "frames", a.frames);
    o.set(s, "size", a.size);
    o.set(s, "channels", a.channels);
    o.set(s, "shape_size", a.shape_size);
    o.set(s, "window_len", a.window);
    o.set(s, "noise_std", a.noise);
    o.set(s, "samples_train", a.train);
    o.set(s, "samples_val", a.val);
    o.set(s, "seed", a.seed);
    let synth = parse_section(&resolve(s, None, &o), s, SynthConfig::from_kv)?;

    let (train, val) = generate(&synth)?;
    create_dir(&a.out)?;
    let (tp, vp) = (a.out.join(TRAIN_FILE), a.out.join(VAL_FILE));
    save_dataset(&tp, &train)?;
    save_dataset(&vp, &val)?;
    write_echo(&a.out, &echo(&[(s, &synth.to_kv())], &path_kv(&[("out", &a.out)])))?;
    println!("{}", summarize("train", &train, &tp)?);
    println!("{}", summarize("val", &val, &vp)?);
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut o = overrides(&a.config)?;
    let t = Section::Train;
    o.set(t, "epochs_max", a.epochs);
    o.set(t, "batch_size", a.batch_size);
    o.set(t, "lr_initial", a.lr);
    o.set(t, "momentum", a.momentum);
    o.set(t, "weight_decay", a.weight_decay);
    o.set(t, "plateau_patience", a.patience);
    o.set(t, "min_lr", a.min_lr);
    o.set(t, "clip_norm", a.clip_norm);
    o.set(t, "seed", a.seed);
    let m = Section::Model;
    o.set(m, "stage_channels", a.stages);
    o.set(m, "dropout_rate", a.dropout);
    let tc = parse_section(&resolve(t, None, &o), t, TrainConfig::from_kv)?;

    let train_set = load_dataset(a.data.join(TRAIN_FILE))?;
    let val_set = load_dataset(a.data.join(VAL_FILE))?;
    let geometry = {
        let d = &train_set.config;
        let mut kv = KvBlock::default();
        kv.push("num_classes", d.num_classes);
        kv.push("frames", d.frames);
        kv.push("input_channels", d.channels);
        kv.push("height", d.size);
        kv.push("width", d.size);
        kv
    };
    let mc = parse_section(&resolve(m, Some(&geometry), &o), m, ModelConfig::from_kv)?;

    create_dir(&a.out)?;
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    let log_path = a.out.join(LOG_FILE);
    write_echo(
        &a.out,
        &echo(
            &[(m, &mc.to_kv()), (t, &tc.to_kv())],
            &path_kv(&[("data", &a.data), ("out", &a.out)]),
        ),
    )?;
    let mut model = StAbnModel::new(&mc, tc.seed)?;
    println!("parameters={}", model.param_count());
    let options = TrainOptions {
        checkpoint_path: Some(ckpt_path.clone()),
        log_path: Some(log_path),
    };
    let outcome = run_training(&mut model, &train_set, &val_set, &tc, &options, |r| {
        println!("{}", r.to_kv().to_record())
    })?;
    println!(
        "best_epoch={} best_val_loss={:.6} checkpoint={}",
        outcome.best.epoch,
        outcome.best.best_val_loss,
        ckpt_path.display()
    );
    Ok(())
}

fn dataset_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(VAL_FILE)
    } else {
        data.to_path_buf()
    }
}

fn load_pair(ckpt: &Path, data: &Path) -> Result<(StAbnModel, VideoDataset)> {
    let model = load_checkpoint(ckpt)?.to_model()?;
    let dataset = load_dataset(dataset_path(data))?;
    Ok((model, dataset))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    if a.batch_size == 0 {
        return Err(Error::Usage("--batch-size must be ≥ 1".into()));
    }
    let (model, dataset) = load_pair(&a.ckpt, &a.data)?;
    let conditions: Vec<(bool, bool)> = match a.invert {
        Invert::All => INVERSION_CONDITIONS.to_vec(),
        Invert::None => vec![(false, false)],
        Invert::Spatial => vec![(true, false)],
        Invert::Temporal => vec![(false, true)],
        Invert::Both => vec![(true, true)],
    };
    let (rows, samples) = run_inversion_conditions(&model, &dataset, a.batch_size, &conditions)?;
    let mut records: Vec<String> = rows.iter().map(|r| inversion_record(r, samples).to_record()).collect();
    print!("{}", render_rows(&rows));
    if dataset.samples.iter().all(|s| s.meta.is_some()) {
        let loc = score_localization(&model, &dataset, a.batch_size)?;
        println!(
            "temporal_contrast {:+.4}  spatial_contrast {:+.4}  over {} correct of {}",
            loc.temporal_contrast, loc.spatial_contrast, loc.samples_correct, loc.samples_total
        );
        records.push(loc.to_kv().to_record());
    }
    for r in &records {
        println!("{r}");
    }
    if let Some(out) = &a.out {
        create_dir(out)?;
        let path = out.join("report.txt");
        fs::write(&path, records.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
        let mut extra = path_kv(&[("ckpt", &a.ckpt), ("data", &a.data)]);
        extra.push("invert", format!("{:?}", a.invert).to_lowercase());
        extra.push("batch_size", a.batch_size);
        write_echo(out, &echo(&[(Section::Model, &model.config().to_kv())], &extra))?;
    }
    Ok(())
}

pub fn explain(a: ExplainArgs) -> Result<()> {
    let (model, dataset) = load_pair(&a.ckpt, &a.data)?;
    if a.index >= dataset.len() {
        return Err(Error::Input(format!(
            "--index {} out of range for {} samples",
            a.index,
            dataset.len()
        )));
    }
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(Error::Input(format!("--alpha {} outside [0, 1]", a.alpha)));
    }
    let sample = &dataset.samples[a.index];
    let video = dataset.video_tensor(a.index)?;
    let out = no_grad(|| model.forward(&video, &mut ForwardCtx::eval()))?;
    let spatial = &out.attention.spatial;
    let map_size = [spatial.shape()[3], spatial.shape()[4]];
    let frames = render_spatial(&sample.video, dataset.video_shape(), spatial.data(), map_size, a.alpha)?;
    let bar = render_temporal(out.attention.temporal.data());
    let [_, _, h, _] = dataset.video_shape();
    let sheet = contact_sheet(&frames, &bar.swatches, (h / 4).max(4))?;

    create_dir(&a.out)?;
    for f in &frames {
        write_ppm(a.out.join(format!("frame_{:02}.ppm", f.frame)), &f.raster)?;
    }
    write_ppm(a.out.join("sheet.ppm"), &sheet)?;
    let csv = a.out.join("temporal.csv");
    fs::write(&csv, &bar.csv).map_err(|e| Error::io(&csv, e))?;
    let mut extra = path_kv(&[("ckpt", &a.ckpt), ("data", &a.data), ("out", &a.out)]);
    extra.push("index", a.index);
    extra.push("alpha", a.alpha);
    write_echo(&a.out, &echo(&[(Section::Model, &model.config().to_kv())], &extra))?;

    let logits = out.per_logits.data();
    let predicted = (0..logits.len()).fold(0, |best, j| if logits[j] > logits[best] { j } else { best });
    println!(
        "index={} label={} predicted={} frames={} out={}",
        a.index,
        sample.label,
        predicted,
        frames.len(),
        a.out.display()
    );
    Ok(())
}
