//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 4    | magic `VDCK`                              |
//! | 4      | 4    | format version (`u32`, currently 1)       |
//! | 8      | 8    | header length `H` in bytes (`u64`)        |
//! | 16     | H    | UTF-8 JSON header                         |
//! | 16 + H | 8·N  | `N` `f64` values, little-endian           |
//!
//! The header carries the network spec, the init seed, training metadata, the
//! frozen flags of every slope vector and an ordered tensor table
//! (`name`, `shape`). The payload holds the tensors back to back in table
//! order; `N` must equal the sum of the table's element counts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Granularity, Layer, Network, NetworkError, NetworkSpec, Slopes};
use crate::autodiff::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VDCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;

/// Training provenance stored next to the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epoch: usize,
    /// Regularization weight of the post-training run, if any.
    pub omega: Option<f64>,
    pub seed: u64,
    pub granularity: Option<Granularity>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    init_seed: u64,
    meta: TrainingMeta,
    frozen: Vec<Option<Vec<bool>>>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new(network: Network, meta: TrainingMeta) -> Self {
        Self { network, meta }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.network;
        let mut tensors = Vec::new();
        let mut payload: Vec<f64> = Vec::with_capacity(net.parameter_count());
        for (i, l) in net.layers.iter().enumerate() {
            tensors.push(TensorEntry {
                name: format!("layers.{i}.weight"),
                shape: l.weight.shape().to_vec(),
            });
            payload.extend_from_slice(l.weight.data());
            if let Some(b) = &l.bias {
                tensors.push(TensorEntry { name: format!("layers.{i}.bias"), shape: vec![b.len()] });
                payload.extend_from_slice(b);
            }
            if let Some(s) = &l.slopes {
                tensors.push(TensorEntry { name: format!("layers.{i}.slopes"), shape: vec![s.len()] });
                payload.extend_from_slice(&s.values);
            }
            if let Some(g) = &l.gain {
                tensors.push(TensorEntry { name: format!("layers.{i}.gain"), shape: vec![g.len()] });
                payload.extend_from_slice(g);
            }
        }
        let header = Header {
            spec: net.spec.clone(),
            init_seed: net.seed,
            meta: self.meta.clone(),
            frozen: net.layers.iter().map(|l| l.slopes.as_ref().map(|s| s.frozen.clone())).collect(),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + 8 * payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetworkError> {
        let corrupt = |offset: usize, reason: String| NetworkError::Corrupt { offset, reason };
        if bytes.len() < PREAMBLE {
            return Err(corrupt(bytes.len(), format!("file holds {} bytes, preamble needs {PREAMBLE}", bytes.len())));
        }
        if &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(corrupt(0, format!("bad magic {:02x?}", &bytes[0..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(NetworkError::Version {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = PREAMBLE
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt(8, format!("header length {header_len} exceeds file size {}", bytes.len())))?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
            .map_err(|e| corrupt(PREAMBLE, format!("header: {e}")))?;
        header.spec.validate()?;

        let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        let payload = &bytes[header_end..];
        if payload.len() != expected * 8 {
            return Err(corrupt(
                header_end,
                format!("payload holds {} bytes, tensor table needs {}", payload.len(), expected * 8),
            ));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut entries = header.tensors.iter();
        let mut offset = header_end;
        let mut take = |name: String, shape: &[usize]| -> Result<Vec<f64>, NetworkError> {
            let e = entries
                .next()
                .ok_or_else(|| corrupt(offset, format!("tensor table ends before {name}")))?;
            if e.name != name || e.shape != shape {
                return Err(corrupt(
                    offset,
                    format!("expected {name} {shape:?}, table has {} {:?}", e.name, e.shape),
                ));
            }
            let n: usize = shape.iter().product();
            offset += 8 * n;
            Ok(values.by_ref().take(n).collect())
        };

        if header.frozen.len() != header.spec.layers.len() {
            return Err(corrupt(PREAMBLE, "frozen flag table does not cover every layer".into()));
        }
        let mut layers = Vec::with_capacity(header.spec.layers.len());
        for (i, ls) in header.spec.layers.iter().enumerate() {
            let weight = Tensor::matrix(ls.n_in, ls.n_out, take(format!("layers.{i}.weight"), &[ls.n_in, ls.n_out])?)?;
            let bias = if ls.bias {
                Some(take(format!("layers.{i}.bias"), &[ls.n_out])?)
            } else {
                None
            };
            let slopes = match (ls.slope_count(), &header.frozen[i]) {
                (0, None) => None,
                (n, Some(frozen)) if n > 0 && frozen.len() == n => Some(Slopes {
                    values: take(format!("layers.{i}.slopes"), &[n])?,
                    frozen: frozen.clone(),
                }),
                _ => return Err(corrupt(PREAMBLE, format!("layer {i}: frozen flags do not match activation"))),
            };
            let gain = if ls.channel_gain {
                Some(take(format!("layers.{i}.gain"), &[ls.n_out])?)
            } else {
                None
            };
            layers.push(Layer { weight, bias, slopes, gain });
        }
        if entries.next().is_some() {
            return Err(corrupt(offset, "tensor table lists unused tensors".into()));
        }
        Ok(Self {
            network: Network {
                spec: header.spec,
                layers,
                seed: header.init_seed,
            },
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetworkError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
