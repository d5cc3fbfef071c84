//! Model checkpoints: config, named weights, and optional optimizer state
//! in one little-endian binary file.
//!
//! Layout: magic `TXER`, `u32` format version, `u32` config JSON length,
//! the config JSON, one tensor section with the parameters, then a `u8`
//! optimizer flag. When set: `f64` learning rate, `u64` step count, and
//! two tensor sections (first and second moments, parameter names).

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::model::{build_params, ModelConfig, ParamStore, TextEraser};
use crate::trainer::optim::Adam;
use crate::trainer::tensorfile::{read_tensor_section, write_tensor_section};

const CHECKPOINT_MAGIC: &[u8; 4] = b"TXER";
const CHECKPOINT_VERSION: u32 = 1;

/// Write model weights and, when given, optimizer state.
pub fn save_checkpoint<P: AsRef<Path>>(
    model: &TextEraser,
    optimizer: Option<&Adam>,
    path: P,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
    }
    let config_json = serde_json::to_vec(model.config())
        .map_err(|e| Error::Checkpoint(format!("config serialization: {e}")))?;
    let params: Vec<(&str, &ArrayD<f32>)> = model.params().iter().collect();
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(Error::io(path))?);
    (|| -> std::io::Result<()> {
        file.write_all(CHECKPOINT_MAGIC)?;
        file.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        file.write_u32::<LittleEndian>(config_json.len() as u32)?;
        file.write_all(&config_json)?;
        write_tensor_section(&mut file, &params)?;
        match optimizer {
            None => file.write_u8(0)?,
            Some(opt) => {
                file.write_u8(1)?;
                file.write_f64::<LittleEndian>(opt.learning_rate())?;
                file.write_u64::<LittleEndian>(opt.steps())?;
                let (m, v) = opt.moments();
                let names: Vec<&str> = model.params().iter().map(|(n, _)| n).collect();
                let m_pairs: Vec<(&str, &ArrayD<f32>)> =
                    names.iter().copied().zip(m.iter()).collect();
                let v_pairs: Vec<(&str, &ArrayD<f32>)> =
                    names.iter().copied().zip(v.iter()).collect();
                write_tensor_section(&mut file, &m_pairs)?;
                write_tensor_section(&mut file, &v_pairs)?;
            }
        }
        file.flush()
    })()
    .map_err(Error::io(path))
}

/// Read a checkpoint back into a model and optional optimizer.
pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<(TextEraser, Option<Adam>)> {
    let path = path.as_ref();
    let mut file = std::io::BufReader::new(std::fs::File::open(path).map_err(Error::io(path))?);
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());

    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(Error::io(path))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = file
        .read_u32::<LittleEndian>()
        .map_err(|_| bad("truncated header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let json_len = file
        .read_u32::<LittleEndian>()
        .map_err(|_| bad("truncated config length"))? as usize;
    let mut json = vec![0u8; json_len];
    file.read_exact(&mut json)
        .map_err(|_| bad("truncated config"))?;
    let config: ModelConfig = serde_json::from_slice(&json)
        .map_err(|e| Error::Checkpoint(format!("bad config JSON: {e}")))?;
    config.validate()?;

    let mut tensors = read_tensor_section(&mut file)?;
    // Rebuild in the canonical order the config defines, so any missing,
    // extra, or misshaped tensor is a named error.
    let expected = build_params(&config);
    let mut params = ParamStore::new();
    for (name, value) in expected.iter() {
        let tensor = tensors
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if tensor.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, config expects {:?}",
                tensor.shape(),
                value.shape()
            )));
        }
        params.push(name, tensor);
    }
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has unknown parameter {name}"
        )));
    }
    let model = TextEraser::from_parts(config, params)?;

    let has_opt = file.read_u8().map_err(|_| bad("truncated optimizer flag"))?;
    let optimizer = match has_opt {
        0 => None,
        1 => {
            let lr = file
                .read_f64::<LittleEndian>()
                .map_err(|_| bad("truncated learning rate"))?;
            let steps = file
                .read_u64::<LittleEndian>()
                .map_err(|_| bad("truncated step count"))?;
            let mut m_map = read_tensor_section(&mut file)?;
            let mut v_map = read_tensor_section(&mut file)?;
            let mut m = Vec::with_capacity(model.params().len());
            let mut v = Vec::with_capacity(model.params().len());
            for (name, value) in model.params().iter() {
                let take = |map: &mut std::collections::BTreeMap<String, ArrayD<f32>>,
                            what: &str|
                 -> Result<ArrayD<f32>> {
                    let t = map
                        .remove(name)
                        .ok_or_else(|| Error::Checkpoint(format!("missing {what} for {name}")))?;
                    if t.shape() != value.shape() {
                        return Err(Error::Checkpoint(format!(
                            "{what} for {name} has shape {:?}, expected {:?}",
                            t.shape(),
                            value.shape()
                        )));
                    }
                    Ok(t)
                };
                m.push(take(&mut m_map, "first moment")?);
                v.push(take(&mut v_map, "second moment")?);
            }
            Some(Adam::from_state(lr, steps, m, v))
        }
        other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
    };
    Ok((model, optimizer))
}
