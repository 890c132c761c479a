//! Versioned binary checkpoint: config echo as JSON, then named parameter
//! tensors as 64-bit little-endian values. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use super::{positional_embedding, ForecastModel, ModelConfig, ParamSet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CAGRUCK\x01";

/// Serialize a model to `path`.
pub fn save_checkpoint(model: &ForecastModel, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);

    let config_json = serde_json::to_vec(&model.config)
        .map_err(|e| Error::Checkpoint(format!("config serialization failed: {e}")))?;
    bytes.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&config_json);

    let tensors = model.params.tensors();
    bytes.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&(tensor.rows as u32).to_le_bytes());
        bytes.extend_from_slice(&(tensor.cols as u32).to_le_bytes());
        for v in &tensor.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Load a model saved by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ForecastModel> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };

    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic or unsupported version".into()));
    }
    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)
        .map_err(|e| Error::Checkpoint(format!("config deserialization failed: {e}")))?;
    config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;

    let pe = positional_embedding(
        config.window_len,
        config.embed_dim,
        config.positional_base,
        config.decay,
    )?;
    let mut params = ParamSet::shaped(&config);

    let n_tensors = r.u32()? as usize;
    let expected = params.tensors().len();
    if n_tensors != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {n_tensors} tensors, model expects {expected}"
        )));
    }
    for (name, tensor) in params.tensors_mut() {
        let name_len = r.u32()? as usize;
        let stored_name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("non-UTF-8 tensor name".into()))?;
        if stored_name != name {
            return Err(Error::Checkpoint(format!(
                "tensor order mismatch: expected `{name}`, found `{stored_name}`"
            )));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows != tensor.rows || cols != tensor.cols {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` is {rows}x{cols}, model expects {}x{}",
                tensor.rows, tensor.cols
            )));
        }
        for v in &mut tensor.data {
            *v = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes in checkpoint".into()));
    }
    Ok(ForecastModel { config, params, pe })
}
