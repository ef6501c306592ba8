use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::net::{Conv1d, Dense, TemporalConvNet, KERNEL_WIDTH};
use super::{ModelError, NetShape, TrainConfig};
use crate::dynamics::{PDGains, SimMode};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "physgrd-checkpoint";

/// Provenance stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub gains: PDGains,
    pub mode: SimMode,
    pub gravity_z: f64,
    pub test_subject: Option<String>,
    pub optimizer: String,
    /// Free-form notes, e.g. choices made where the method leaves room.
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: TemporalConvNet,
    pub config: TrainConfig,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    shape: Vec<usize>,
    weight: String,
    bias: String,
}

#[derive(Serialize, Deserialize)]
struct Record {
    format: String,
    version: u32,
    shape: NetShape,
    layers: Vec<LayerRecord>,
    train_config: TrainConfig,
    meta: CheckpointMeta,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str, expected: usize, what: &str) -> Result<Vec<f64>, ModelError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| ModelError::Checkpoint(format!("{what}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(ModelError::Checkpoint(format!(
            "{what}: {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String, ModelError> {
        let mut layers = Vec::new();
        for (l, c) in self.net.convs.iter().enumerate() {
            layers.push(LayerRecord {
                name: format!("conv{l}"),
                shape: vec![c.out_ch, c.in_ch, KERNEL_WIDTH],
                weight: encode(&c.weight),
                bias: encode(&c.bias),
            });
        }
        for (l, d) in self.net.fcs.iter().enumerate() {
            layers.push(LayerRecord {
                name: format!("fc{l}"),
                shape: vec![d.out_dim, d.in_dim],
                weight: encode(&d.weight),
                bias: encode(&d.bias),
            });
        }
        let record = Record {
            format: FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: self.net.shape(),
            layers,
            train_config: self.config.clone(),
            meta: self.meta.clone(),
        };
        serde_json::to_string_pretty(&record).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let version = value.get("version").and_then(|v| v.as_u64());
        match version {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => {
                return Err(ModelError::Version {
                    found: v as u32,
                    expected: CHECKPOINT_VERSION,
                })
            }
            None => return Err(ModelError::Checkpoint("missing version".into())),
        }
        let record: Record = serde_json::from_value(value).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if record.format != FORMAT {
            return Err(ModelError::Checkpoint(format!("unknown format {:?}", record.format)));
        }
        if record.layers.len() != 7 {
            return Err(ModelError::Checkpoint(format!("{} layers, expected 7", record.layers.len())));
        }
        let mut convs = Vec::new();
        let mut fcs = Vec::new();
        for (l, layer) in record.layers.iter().enumerate() {
            let s = &layer.shape;
            if l < 4 {
                if s.len() != 3 || s[2] != KERNEL_WIDTH {
                    return Err(ModelError::Checkpoint(format!("{}: bad shape {s:?}", layer.name)));
                }
                convs.push(Conv1d {
                    out_ch: s[0],
                    in_ch: s[1],
                    weight: decode(&layer.weight, s[0] * s[1] * KERNEL_WIDTH, &layer.name)?,
                    bias: decode(&layer.bias, s[0], &layer.name)?,
                });
            } else {
                if s.len() != 2 {
                    return Err(ModelError::Checkpoint(format!("{}: bad shape {s:?}", layer.name)));
                }
                fcs.push(Dense {
                    out_dim: s[0],
                    in_dim: s[1],
                    weight: decode(&layer.weight, s[0] * s[1], &layer.name)?,
                    bias: decode(&layer.bias, s[0], &layer.name)?,
                });
            }
        }
        let net = TemporalConvNet { convs, fcs };
        net.validate()?;
        if net.shape() != record.shape {
            return Err(ModelError::Checkpoint("layer shapes disagree with the declared shape".into()));
        }
        Ok(Self {
            net,
            config: record.train_config,
            meta: record.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
