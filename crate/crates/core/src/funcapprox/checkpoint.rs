//! Flat little-endian parameter dump plus a JSON header naming the segments.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub seed: u64,
    pub iteration: usize,
    pub algorithm: String,
    pub segments: Vec<Segment>,
    /// Free-form description of network shapes.
    pub specs: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub data: Vec<f64>,
}

const FORMAT: &str = "ascpo-checkpoint-v1";

impl Checkpoint {
    pub fn new(seed: u64, iteration: usize, algorithm: &str, specs: serde_json::Value) -> Self {
        Self {
            header: CheckpointHeader {
                format: FORMAT.into(),
                seed,
                iteration,
                algorithm: algorithm.into(),
                segments: Vec::new(),
                specs,
            },
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, values: &[f64]) {
        self.header.segments.push(Segment { name: name.into(), offset: self.data.len(), len: values.len() });
        self.data.extend_from_slice(values);
    }

    pub fn segment(&self, name: &str) -> Result<&[f64]> {
        let s = self
            .header
            .segments
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Input(format!("checkpoint has no segment {name:?}")))?;
        Ok(&self.data[s.offset..s.offset + s.len])
    }

    fn paths(stem: &Path) -> (PathBuf, PathBuf) {
        (stem.with_extension("json"), stem.with_extension("bin"))
    }

    /// Writes `<stem>.json` and `<stem>.bin`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let (json, bin) = Self::paths(stem);
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for x in &self.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(&bin, bytes)?;
        fs::write(&json, serde_json::to_string_pretty(&self.header)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (json, bin) = Self::paths(stem);
        let header: CheckpointHeader = serde_json::from_str(&fs::read_to_string(&json)?)?;
        if header.format != FORMAT {
            return Err(Error::Input(format!("unknown checkpoint format {:?}", header.format)));
        }
        let bytes = fs::read(&bin)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Input("checkpoint payload is not a whole number of f64".into()));
        }
        let data: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        let expected: usize = header.segments.iter().map(|s| s.len).sum();
        if expected != data.len() {
            return Err(Error::Input("checkpoint payload length disagrees with header".into()));
        }
        Ok(Self { header, data })
    }
}
