//! Versioned binary checkpoint: a JSON header (config, optional
//! vocabulary, tensor manifest) followed by raw little-endian f64 tensor
//! data in manifest order. `load(save(p))` is value-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::buzzword::Vocabulary;
use crate::model::{ModelConfig, ModelError, ModelParams};

const MAGIC: &[u8; 4] = b"MBCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Option<Vocabulary>,
    tensors: Vec<TensorInfo>,
}

fn ck_err(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn save(params: &mut ModelParams, vocab: Option<&Vocabulary>, path: &Path) -> Result<(), ModelError> {
    let cfg = params.cfg.clone();
    let entries = params.params_mut();
    let tensors = entries
        .iter()
        .map(|(name, p)| TensorInfo { name: name.clone(), rows: p.w.nrows(), cols: p.w.ncols() })
        .collect();
    let header = Header { config: cfg, vocab: vocab.cloned(), tensors };
    let header_json = serde_json::to_vec(&header).map_err(|e| ck_err(e.to_string()))?;

    // write to a sibling temp file, then rename into place
    let tmp_path = path.with_extension("ckpt.tmp");
    let file = File::create(&tmp_path).map_err(|e| ck_err(format!("{}: {e}", tmp_path.display())))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| ck_err(format!("{}: {e}", path.display()));
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header_json).map_err(io)?;
    for (_, p) in &entries {
        for &v in p.w.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    drop(w);
    std::fs::rename(&tmp_path, path).map_err(io)
}

pub fn load(path: &Path) -> Result<(ModelParams, Option<Vocabulary>), ModelError> {
    let file = File::open(path).map_err(|e| ck_err(format!("{}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let io = |e: std::io::Error| ck_err(format!("{}: {e}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(ck_err("not a model checkpoint (bad magic)"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(ck_err(format!("unsupported checkpoint version {version}")));
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8).map_err(io)?;
    let header_len = u64::from_le_bytes(len8) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json).map_err(io)?;
    let header: Header = serde_json::from_slice(&header_json).map_err(|e| ck_err(e.to_string()))?;

    let mut params = ModelParams::new(&header.config)?;
    {
        let entries = params.params_mut();
        if entries.len() != header.tensors.len() {
            return Err(ck_err(format!(
                "tensor count mismatch: file has {}, model expects {}",
                header.tensors.len(),
                entries.len()
            )));
        }
        let mut buf = [0u8; 8];
        for ((name, p), info) in entries.into_iter().zip(&header.tensors) {
            if name != info.name || p.w.nrows() != info.rows || p.w.ncols() != info.cols {
                return Err(ck_err(format!(
                    "tensor mismatch: file {} [{}x{}] vs model {} [{}x{}]",
                    info.name,
                    info.rows,
                    info.cols,
                    name,
                    p.w.nrows(),
                    p.w.ncols()
                )));
            }
            for v in p.w.iter_mut() {
                r.read_exact(&mut buf).map_err(io)?;
                *v = f64::from_le_bytes(buf);
            }
        }
    }
    let vocab = header.vocab.map(|mut v| {
        v.rebuild_index();
        v
    });
    Ok((params, vocab))
}
