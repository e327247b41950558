use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::DenoiserConfig;
use super::denoiser::Denoiser;
use super::params::Layout;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SEQCATCK";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: String,
    pub step: u64,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: DenoiserConfig,
    meta: CheckpointMeta,
    layout: Layout,
}

/// Model weights plus everything needed to rebuild the model.
///
/// On disk: 8-byte magic, u64 LE header length, JSON header, then the flat
/// parameter vector as f64 LE.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: DenoiserConfig,
    pub meta: CheckpointMeta,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn of(model: &Denoiser, meta: CheckpointMeta) -> Checkpoint {
        Checkpoint { config: model.config.clone(), meta, params: model.params.clone() }
    }

    pub fn into_model(self) -> Result<Denoiser> {
        Denoiser::from_params(self.config, self.params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (layout, _) = Layout::for_config(&self.config);
        let header = serde_json::to_vec(&Header { config: self.config.clone(), meta: self.meta.clone(), layout })?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Checkpoint> {
        let bad = |r: &str| Error::format(origin, r);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let hl = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hl).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let (layout, _) = Layout::for_config(&header.config);
        if layout != header.layout {
            return Err(bad("parameter layout does not match config"));
        }
        let blob = &bytes[16 + hl..];
        if blob.len() != 8 * layout.total {
            return Err(bad(&format!("expected {} parameters, found {} bytes", layout.total, blob.len())));
        }
        let params = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Checkpoint { config: header.config, meta: header.meta, params })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(d) = path.parent() {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        if !path.exists() {
            return Err(Error::MissingInput { what: "checkpoint".into(), path: path.to_path_buf() });
        }
        let b = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&b, path)
    }
}
