//! Trained-model files.
//!
//! ```text
//! "LMPARAM1" | echo_len: u32 | echo: utf-8 JSON {config, hyper}
//! n_tensors: u32 | tensor* (name_len: u16 | name | ndim: u32 | dims: ndim x u64 | values: f64, row-major)
//! ```
//! All integers and floats little-endian.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::train::TrainHyper;
use crate::repr::ParamSet;
use crate::types::EngineConfig;

pub const PARAM_MAGIC: &[u8; 8] = b"LMPARAM1";

/// A configured head with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: EngineConfig,
    pub hyper: TrainHyper,
    pub params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct Echo {
    config: EngineConfig,
    hyper: TrainHyper,
}

impl Model {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(PARAM_MAGIC);
        let echo = serde_json::to_vec(&Echo { config: self.config.clone(), hyper: self.hyper })?;
        out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
        out.extend_from_slice(&echo);
        let tensors = self.params.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, (rows, cols), values) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(rows as u64).to_le_bytes());
            out.extend_from_slice(&(cols as u64).to_le_bytes());
            // storage is column-major; the file is row-major
            for r in 0..rows {
                for c in 0..cols {
                    out.extend_from_slice(&values[c * rows + r].to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| {
                Error::Format(format!("truncated parameter file at offset {pos}"))
            })?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(8)? != PARAM_MAGIC {
            return Err(Error::Format("bad magic, not an LMPARAM1 file".into()));
        }
        let echo_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let echo: Echo = serde_json::from_slice(take(echo_len)?)?;
        let config = EngineConfig::new(
            echo.config.model_family,
            echo.config.mention_strategy,
            echo.config.rejection,
            echo.config.reject_count,
            echo.config.dim,
            echo.config.seed,
        )?;
        let expected = ParamSet::init(&config);
        let mut params = ParamSet::empty();
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap());
        for _ in 0..n {
            let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
            let ndim = u32::from_le_bytes(take(4)?.try_into().unwrap());
            if ndim != 2 {
                return Err(Error::Format(format!("tensor `{name}` has {ndim} dimensions, expected 2")));
            }
            let rows = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let cols = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let count = rows.checked_mul(cols).ok_or_else(|| Error::Format("tensor too large".into()))?;
            let raw = take(count.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let m = DMatrix::from_row_slice(rows, cols, &values);
            let slot = match name.as_str() {
                "w_pair" => (&mut params.w_pair, expected.w_pair.as_ref().map(|e| e.shape())),
                "w_fuse" => (&mut params.w_fuse, expected.w_fuse.as_ref().map(|e| e.shape())),
                "reject_protos" => (&mut params.reject_protos, expected.reject_protos.as_ref().map(|e| e.shape())),
                "u_thr" => {
                    if (rows, cols) != (1, 1) || expected.u_thr.is_none() {
                        return Err(Error::Format("unexpected `u_thr` tensor".into()));
                    }
                    params.u_thr = Some(values[0]);
                    continue;
                }
                other => return Err(Error::Format(format!("unknown tensor `{other}`"))),
            };
            if slot.1 != Some((rows, cols)) {
                return Err(Error::Format(format!(
                    "tensor `{name}` has shape {rows}x{cols}, configuration expects {:?}",
                    slot.1
                )));
            }
            *slot.0 = Some(m);
        }
        if pos != bytes.len() {
            return Err(Error::Format("trailing bytes in parameter file".into()));
        }
        let have: Vec<_> = params.tensors().iter().map(|t| t.0).collect();
        let want: Vec<_> = expected.tensors().iter().map(|t| t.0).collect();
        if have != want {
            return Err(Error::Format(format!("parameter file holds {have:?}, configuration needs {want:?}")));
        }
        Ok(Self { config, hyper: echo.hyper, params })
    }
}

pub fn write_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model.to_bytes()?)?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Model> {
    Model::from_bytes(&std::fs::read(path)?)
}
