//! `QRM1` checkpoints: magic, `u32` LE header length, JSON header, then
//! every parameter tensor as LE binary32 in declaration order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Architecture, LossKind, SurrogateModel, ARCHITECTURE_NAME, BACKBONE_WIDTHS, TENSOR_NAMES};
use crate::error::{Error, Result};
use crate::stack::STANDARD_QUANTILES;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QRM1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: String,
    pub c_in: usize,
    pub backbone_widths: [usize; 2],
    pub loss_kind: LossKind,
    /// Quantiles of the output channels; empty for the Gaussian heads.
    pub quantiles: Vec<f64>,
    pub channels: Vec<String>,
    pub output_scale: Vec<f64>,
    pub output_offset: Vec<f64>,
    pub tensors: Vec<TensorInfo>,
}

impl CheckpointHeader {
    fn for_model(model: &SurrogateModel) -> Self {
        let a = &model.arch;
        CheckpointHeader {
            architecture: ARCHITECTURE_NAME.into(),
            c_in: a.c_in,
            backbone_widths: [BACKBONE_WIDTHS.0, BACKBONE_WIDTHS.1],
            loss_kind: a.loss_kind,
            quantiles: match a.loss_kind {
                LossKind::Quantile => STANDARD_QUANTILES.to_vec(),
                _ => Vec::new(),
            },
            channels: a.loss_kind.channel_names(),
            output_scale: a.output_scale.clone(),
            output_offset: a.output_offset.clone(),
            tensors: TENSOR_NAMES
                .iter()
                .zip(a.tensor_shapes())
                .map(|(n, shape)| TensorInfo {
                    name: n.to_string(),
                    shape,
                })
                .collect(),
        }
    }
}

pub fn checkpoint_to_bytes(model: &SurrogateModel) -> Vec<u8> {
    let header = serde_json::to_vec(&CheckpointHeader::for_model(model)).expect("header serializes");
    let n: usize = model.params.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(8 + header.len() + 4 * n);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in &model.params {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<SurrogateModel> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a QRM1 checkpoint".into()));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| Error::Corruption("checkpoint header truncated".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if header.architecture != ARCHITECTURE_NAME || header.backbone_widths != [BACKBONE_WIDTHS.0, BACKBONE_WIDTHS.1] {
        return Err(Error::Format(format!(
            "unsupported architecture `{}`",
            header.architecture
        )));
    }
    let arch = Architecture {
        c_in: header.c_in,
        loss_kind: header.loss_kind,
        output_scale: header.output_scale.clone(),
        output_offset: header.output_offset.clone(),
    };
    arch.validate()?;
    let expected = arch.tensor_shapes();
    let names_match = header.tensors.len() == expected.len()
        && header
            .tensors
            .iter()
            .zip(TENSOR_NAMES.iter().zip(&expected))
            .all(|(t, (n, s))| t.name == *n && &t.shape == s);
    if !names_match {
        return Err(Error::Format(
            "checkpoint tensor list does not match the architecture".into(),
        ));
    }
    let mut data = &bytes[8 + hlen..];
    let total: usize = expected.iter().map(|s| s.iter().product::<usize>()).sum();
    if data.len() != 4 * total {
        return Err(Error::Corruption(format!(
            "checkpoint holds {} parameter bytes, header implies {}",
            data.len(),
            4 * total
        )));
    }
    let mut params = Vec::with_capacity(expected.len());
    for s in &expected {
        let n: usize = s.iter().product();
        let (head, rest) = data.split_at(4 * n);
        params.push(
            head.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect(),
        );
        data = rest;
    }
    SurrogateModel::from_params(arch, params)
}

pub fn save_checkpoint(model: &SurrogateModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SurrogateModel> {
    let path = path.as_ref();
    checkpoint_from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
