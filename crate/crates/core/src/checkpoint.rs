//! Single-file model checkpoints: a JSON header followed by raw
//! little-endian `f32` tensors, with a digest over the payload.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vfi_autograd::{Adam, AdamConfig, ParamStore, Tensor};

use crate::error::{Error, Result};
use crate::model::{InterpModel, ModelConfig};

const MAGIC: &[u8; 8] = b"VFICKPT1";

/// Optimizer moments for resuming.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Tensor<f32>>,
    pub second: Vec<Tensor<f32>>,
}

impl AdamState {
    pub fn capture(adam: &Adam<f32>) -> Self {
        let (m, v) = adam.moments();
        AdamState {
            step: adam.steps(),
            first: m.to_vec(),
            second: v.to_vec(),
        }
    }

    pub fn restore(self, config: AdamConfig) -> Result<Adam<f32>> {
        Ok(Adam::from_state(config, self.step, self.first, self.second)?)
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub params: ParamStore<f32>,
    pub adam: Option<AdamState>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub cycle_reconstructions: u64,
    /// Training settings the checkpoint was produced with.
    pub train_config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    epoch: usize,
    step: u64,
    cycle_reconstructions: u64,
    adam_step: Option<u64>,
    train_config: serde_json::Value,
    tensors: Vec<TensorEntry>,
    payload_sha256: String,
}

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

impl Checkpoint {
    /// Fresh checkpoint of a model without optimizer state.
    pub fn of_model(model: &InterpModel<f32>) -> Self {
        Checkpoint {
            model_config: *model.config(),
            params: model.params().clone(),
            adam: None,
            epoch: 0,
            step: 0,
            cycle_reconstructions: 0,
            train_config: serde_json::Value::Null,
        }
    }

    pub fn model(&self) -> Result<InterpModel<f32>> {
        InterpModel::from_params(self.model_config, self.params.clone())
    }

    fn sections(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out: Vec<(String, &Tensor<f32>)> = self.params.iter().map(|p| (format!("params/{}", p.name), &p.value)).collect();
        if let Some(a) = &self.adam {
            for (p, m) in self.params.iter().zip(&a.first) {
                out.push((format!("adam_m/{}", p.name), m));
            }
            for (p, v) in self.params.iter().zip(&a.second) {
                out.push((format!("adam_v/{}", p.name), v));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (name, t) in self.sections() {
            tensors.push(TensorEntry {
                name,
                shape: t.shape(),
                offset,
            });
            offset += t.len();
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            model_config: self.model_config,
            epoch: self.epoch,
            step: self.step,
            cycle_reconstructions: self.cycle_reconstructions,
            adam_step: self.adam.as_ref().map(|a| a.step),
            train_config: self.train_config.clone(),
            tensors,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Writes atomically through a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = tmp_path(path);
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad(path, "not a checkpoint file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad(path, "truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end]).map_err(|e| bad(path, format!("bad header: {e}")))?;
        let payload = &bytes[header_end..];
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(bad(path, "payload digest mismatch (file corrupt or truncated)"));
        }
        let mut params = ParamStore::new();
        let (mut first, mut second) = (Vec::new(), Vec::new());
        for e in &header.tensors {
            let len: usize = e.shape.iter().product();
            let lo = e.offset * 4;
            let hi = lo + len * 4;
            if hi > payload.len() {
                return Err(bad(path, format!("tensor {} runs past the payload", e.name)));
            }
            let data = payload[lo..hi]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(e.shape, data)?;
            match e.name.split_once('/') {
                Some(("params", n)) => {
                    params.add(n, t);
                }
                Some(("adam_m", _)) => first.push(t),
                Some(("adam_v", _)) => second.push(t),
                _ => return Err(bad(path, format!("unknown section {}", e.name))),
            }
        }
        let adam = match header.adam_step {
            Some(step) if first.len() == params.len() && second.len() == params.len() => Some(AdamState { step, first, second }),
            Some(_) => return Err(bad(path, "optimizer state does not match parameters")),
            None => None,
        };
        let ckpt = Checkpoint {
            model_config: header.model_config,
            params,
            adam,
            epoch: header.epoch,
            step: header.step,
            cycle_reconstructions: header.cycle_reconstructions,
            train_config: header.train_config,
        };
        // Validates names and shapes against the architecture.
        ckpt.model().map_err(|e| bad(path, e.to_string()))?;
        Ok(ckpt)
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}
