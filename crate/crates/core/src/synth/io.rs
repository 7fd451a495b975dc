use std::fs;
use std::path::Path;

use super::{SampleMeta, SynthConfig, VideoDataset, VideoSample};
use crate::codec::{len_u32, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8] = b"STVID";
const VERSION: u8 = 1;
/// Written in the window-length slot of samples without ground truth.
const NO_META: u16 = 0;

fn encode(dataset: &VideoDataset) -> Result<Vec<u8>> {
    let [c, t, h, w] = dataset.video_shape();
    let mut out = Writer::new();
    out.bytes(MAGIC);
    out.u8(VERSION);
    out.kv(&dataset.config.to_kv())?;
    out.u32(len_u32(dataset.len(), "sample count")?);
    for s in &dataset.samples {
        if s.video.len() != c * t * h * w {
            return Err(Error::Input(format!(
                "sample has {} pixels, expected {}",
                s.video.len(),
                c * t * h * w
            )));
        }
        let label = u16::try_from(s.label)
            .map_err(|_| Error::Input(format!("label {} does not fit u16", s.label)))?;
        out.u16(label);
        match &s.meta {
            Some(m) => {
                out.u16(m.window_start as u16);
                out.u16(m.window_len as u16);
                for b in &m.bboxes {
                    b.iter().for_each(|&v| out.u16(v));
                }
            }
            None => {
                out.u16(0);
                out.u16(NO_META);
                (0..4 * t).for_each(|_| out.u16(0));
            }
        }
        for &v in &s.video {
            out.f32(v);
        }
    }
    let crc = crc32fast::hash(out.as_slice());
    out.u32(crc);
    Ok(out.into_inner())
}

fn decode(bytes: &[u8]) -> Result<VideoDataset> {
    let mut r = Reader::new(bytes);
    r.header(MAGIC, VERSION)?;
    let config = SynthConfig::from_kv(&r.kv()?)?;
    let [c, t, h, w] = config.video_shape();
    let pixels = c * t * h * w;
    let count = r.u32()? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let label = r.u16()? as usize;
        if label >= config.num_classes {
            return Err(Error::Format(format!(
                "label {label} out of range for {} classes",
                config.num_classes
            )));
        }
        let window_start = r.u16()? as usize;
        let window_len = r.u16()? as usize;
        let mut bboxes = Vec::with_capacity(t);
        for _ in 0..t {
            bboxes.push([r.u16()?, r.u16()?, r.u16()?, r.u16()?]);
        }
        let raw = r.take(pixels * 4)?;
        let video = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")))
            .collect();
        let meta = (window_len != NO_META as usize).then_some(SampleMeta {
            window_start,
            window_len,
            bboxes,
        });
        samples.push(VideoSample { video, label, meta });
    }
    let payload_end = r.position();
    let stored = r.u32()?;
    r.finish()?;
    let computed = crc32fast::hash(&bytes[..payload_end]);
    if stored != computed {
        return Err(Error::Format(format!(
            "checksum mismatch: stored {stored:08x}, computed {computed:08x}"
        )));
    }
    Ok(VideoDataset { config, samples })
}

/// CRC32 over every byte of the encoded file before the trailing checksum.
pub fn dataset_checksum(dataset: &VideoDataset) -> Result<u32> {
    let bytes = encode(dataset)?;
    Ok(u32::from_le_bytes(
        bytes[bytes.len() - 4..].try_into().expect("4 bytes"),
    ))
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &VideoDataset) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(dataset)?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<VideoDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
