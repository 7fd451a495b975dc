//! Run configuration: section defaults, overlaid by a `key = value` file,
//! overlaid by command-line flags. Keys are `synth.*`, `model.*`, `train.*`.

use std::fs;
use std::path::Path;

use stabn_core::kv::KvBlock;
use stabn_core::synth::SynthConfig;
use stabn_core::train::TrainConfig;
use stabn_core::{Error, ModelConfig, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Synth,
    Model,
    Train,
}

impl Section {
    pub const ALL: [Section; 3] = [Section::Synth, Section::Model, Section::Train];

    pub fn prefix(self) -> &'static str {
        match self {
            Section::Synth => "synth",
            Section::Model => "model",
            Section::Train => "train",
        }
    }

    fn defaults(self) -> KvBlock {
        match self {
            Section::Synth => SynthConfig::default().to_kv(),
            Section::Model => ModelConfig::default().to_kv(),
            Section::Train => TrainConfig::default().to_kv(),
        }
    }
}

/// Keys set explicitly by the user, file first, flags on top.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    kv: KvBlock,
}

impl Overrides {
    /// Reads a config file, rejecting keys outside the schema.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let kv: KvBlock = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let known = schema();
        let known: Vec<&str> = known.iter().map(String::as_str).collect();
        kv.reject_unknown(&known)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(Overrides { kv })
    }

    pub fn set(&mut self, section: Section, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.kv.push(&format!("{}.{key}", section.prefix()), v.to_string());
        }
    }

    pub fn section(&self, section: Section) -> KvBlock {
        strip(&self.kv, section)
    }
}

fn schema() -> Vec<String> {
    Section::ALL
        .iter()
        .flat_map(|&s| s.defaults().iter().map(move |(k, _)| format!("{}.{k}", s.prefix())).collect::<Vec<_>>())
        .collect()
}

fn strip(kv: &KvBlock, section: Section) -> KvBlock {
    let prefix = format!("{}.", section.prefix());
    let mut out = KvBlock::default();
    for (k, v) in kv.iter() {
        if let Some(rest) = k.strip_prefix(&prefix) {
            out.push(rest, v);
        }
    }
    out
}

/// Section defaults with `base` and then the user's keys laid on top.
pub fn resolve(section: Section, base: Option<&KvBlock>, overrides: &Overrides) -> KvBlock {
    let mut kv = section.defaults();
    if let Some(b) = base {
        kv.merge(b);
    }
    kv.merge(&overrides.section(section));
    kv
}

/// Parses a resolved section; any failure is a configuration problem.
pub fn parse_section<T>(kv: &KvBlock, section: Section, parse: impl Fn(&KvBlock) -> Result<T>) -> Result<T> {
    parse(kv).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", section.prefix())),
        other => Error::Config(format!("{}: {other}", section.prefix())),
    })
}

/// The effective configuration as one block with prefixed keys.
pub fn echo(sections: &[(Section, &KvBlock)], extra: &KvBlock) -> KvBlock {
    let mut out = KvBlock::default();
    for (section, kv) in sections {
        for (k, v) in kv.iter() {
            out.push(&format!("{}.{k}", section.prefix()), v);
        }
    }
    out.merge(extra);
    out
}

pub fn write_echo(dir: &Path, kv: &KvBlock) -> Result<()> {
    let path = dir.join("effective.cfg");
    fs::write(&path, kv.to_string()).map_err(|e| Error::io(&path, e))
}
