//! Checkpoint files: one line of JSON header, a newline, then every tensor as
//! little-endian `f64` values.
//!
//! The header carries the model configuration, the vocabulary, a manifest of
//! `{name, shape, offset}` entries (byte offsets into the payload) and, for
//! training checkpoints, the optimizer state whose moment tensors are stored
//! in the payload as `adamw.m/{name}` and `adamw.v/{name}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamStore, Tensor};
use crate::encoders::Vocab;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::scalar::Scalar;
use crate::trainer::{AdamWState, TrainConfig};

pub const FORMAT: &str = "dmh-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainHeader {
    config: TrainConfig,
    epochs_done: usize,
    step: u64,
    moments: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vocab,
    params: Vec<TensorEntry>,
    train: Option<TrainHeader>,
}

/// Training state saved alongside the model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainProgress<S> {
    pub config: TrainConfig,
    pub epochs_done: usize,
    pub optimizer: AdamWState<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub model: Model<S>,
    pub train: Option<TrainProgress<S>>,
}

struct PayloadWriter {
    bytes: Vec<u8>,
}

impl PayloadWriter {
    fn push<S: Scalar>(&mut self, name: String, shape: &[usize], data: &[S]) -> TensorEntry {
        let offset = self.bytes.len() as u64;
        for x in data {
            self.bytes.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
        }
        TensorEntry {
            name,
            shape: shape.to_vec(),
            offset,
        }
    }
}

fn moment_name(which: &str, name: &str) -> String {
    format!("adamw.{which}/{name}")
}

impl<S: Scalar> Checkpoint<S> {
    pub fn from_model(model: Model<S>) -> Self {
        Self { model, train: None }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = PayloadWriter { bytes: Vec::new() };
        let params = self
            .model
            .params
            .iter()
            .map(|(name, p)| payload.push(name.to_string(), p.value.shape(), p.value.data()))
            .collect();
        let train = match &self.train {
            None => None,
            Some(progress) => {
                let mut moments = Vec::new();
                for (name, p) in self.model.params.iter() {
                    for (which, table) in [("m", &progress.optimizer.m), ("v", &progress.optimizer.v)] {
                        let data = table
                            .get(name)
                            .ok_or_else(|| Error::MissingParam(moment_name(which, name)))?;
                        moments.push(payload.push(moment_name(which, name), p.value.shape(), data));
                    }
                }
                Some(TrainHeader {
                    config: progress.config,
                    epochs_done: progress.epochs_done,
                    step: progress.optimizer.step,
                    moments,
                })
            }
        };
        let header = Header {
            format: FORMAT.to_string(),
            version: VERSION,
            config: self.model.config,
            vocab: self.model.vocab.clone(),
            params,
            train,
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.extend_from_slice(&payload.bytes);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format {
            offset: bytes.len() as u64,
            detail: "missing header terminator".into(),
        })?;
        let header: Header = serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::Format {
            offset: 0,
            detail: format!("bad header: {e}"),
        })?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::Format {
                offset: 0,
                detail: format!("unsupported checkpoint {} v{}", header.format, header.version),
            });
        }
        let base = newline + 1;
        let payload = &bytes[base..];
        let mut consumed = 0usize;
        let mut read = |e: &TensorEntry| -> Result<Tensor<S>> {
            let numel: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + numel * 8;
            if end > payload.len() {
                return Err(Error::Format {
                    offset: (base + payload.len()) as u64,
                    detail: format!("payload truncated inside `{}`", e.name),
                });
            }
            consumed += numel * 8;
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| S::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
                .collect();
            Tensor::new(e.shape.clone(), data)
        };

        let mut params = ParamStore::new();
        for e in &header.params {
            params.insert(e.name.clone(), read(e)?)?;
        }
        let train = match &header.train {
            None => None,
            Some(t) => {
                let mut m = BTreeMap::new();
                let mut v = BTreeMap::new();
                for e in &t.moments {
                    let data = read(e)?.into_data();
                    let (table, name) = if let Some(n) = e.name.strip_prefix("adamw.m/") {
                        (&mut m, n)
                    } else if let Some(n) = e.name.strip_prefix("adamw.v/") {
                        (&mut v, n)
                    } else {
                        return Err(Error::Format {
                            offset: 0,
                            detail: format!("unknown tensor `{}`", e.name),
                        });
                    };
                    table.insert(name.to_string(), data);
                }
                Some(TrainProgress {
                    config: t.config,
                    epochs_done: t.epochs_done,
                    optimizer: AdamWState { step: t.step, m, v },
                })
            }
        };
        if consumed != payload.len() {
            return Err(Error::Format {
                offset: (base + consumed) as u64,
                detail: format!("{} payload bytes not described by the header", payload.len() - consumed),
            });
        }
        header.config.validate()?;
        if header.vocab.len() != header.config.text.vocab_size {
            return Err(Error::Contract("checkpoint vocabulary does not match its config".into()));
        }
        Ok(Self {
            model: Model {
                config: header.config,
                vocab: header.vocab,
                params,
            },
            train,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::path(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::path(path, e))?;
        Self::from_bytes(&bytes)
    }
}
