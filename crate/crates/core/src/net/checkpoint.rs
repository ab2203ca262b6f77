//! Binary checkpoint container.
//!
//! Layout:
//!
//! ```text
//! b"ADCKPT01"
//! u64 little-endian: header length in bytes
//! header: UTF-8 JSON (networks, optimizers, free-form metadata)
//! f64 little-endian array: every network's parameters in header order,
//!   then each optimizer's first and second moments
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Mlp, OptimizerState};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ADCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkHeader {
    name: String,
    dims: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
    dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    name: String,
    num_params: usize,
    state: OptimizerState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    networks: Vec<NetworkHeader>,
    optimizers: Vec<OptimizerHeader>,
    float_count: usize,
    meta: serde_json::Value,
}

/// Named networks and optimizer states plus arbitrary JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub networks: Vec<(String, Mlp)>,
    pub optimizers: Vec<(String, OptimizerState)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Option<&Mlp> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn optimizer(&self, name: &str) -> Option<&OptimizerState> {
        self.optimizers.iter().find(|(n, _)| n == name).map(|(_, o)| o)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut floats: Vec<f64> = Vec::new();
        let mut networks = Vec::new();
        for (name, net) in &self.networks {
            networks.push(NetworkHeader {
                name: name.clone(),
                dims: net.dims().to_vec(),
                hidden_activation: net.hidden_activation(),
                output_activation: Activation::Identity,
                dropout: net.dropout(),
            });
            floats.extend_from_slice(net.params());
        }
        let mut optimizers = Vec::new();
        for (name, opt) in &self.optimizers {
            optimizers.push(OptimizerHeader {
                name: name.clone(),
                num_params: opt.num_params(),
                state: opt.clone(),
            });
            floats.extend_from_slice(&opt.m);
            floats.extend_from_slice(&opt.v);
        }
        let header = serde_json::to_vec(&Header {
            networks,
            optimizers,
            float_count: floats.len(),
            meta: self.meta.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * floats.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for f in floats {
            out.extend_from_slice(&f.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("malformed checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(header_len))
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let data = &bytes[16 + header_len..];
        if data.len() != header.float_count * 8 {
            return Err(bad("float payload length does not match header"));
        }
        let floats: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut cursor = 0usize;
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let out = floats
                .get(cursor..cursor + n)
                .ok_or_else(|| bad("payload shorter than declared tensors"))?
                .to_vec();
            cursor += n;
            Ok(out)
        };
        let mut networks = Vec::new();
        for h in header.networks {
            if h.hidden_activation != Activation::Silu || h.output_activation != Activation::Identity {
                return Err(bad("unsupported activation"));
            }
            let n = Mlp::zeros(&h.dims, h.dropout)?.num_params();
            let net = Mlp::from_params(&h.dims, h.dropout, take(n)?)?;
            networks.push((h.name, net));
        }
        let mut optimizers = Vec::new();
        for h in header.optimizers {
            let mut state = h.state;
            state.m = take(h.num_params)?;
            state.v = take(h.num_params)?;
            optimizers.push((h.name, state));
        }
        if cursor != floats.len() {
            return Err(bad("trailing floats"));
        }
        Ok(Self {
            networks,
            optimizers,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
