//! Binary named-tensor serialization shared by checkpoints and standalone
//! weight files (e.g. feature extractor weights).
//!
//! A tensor section is `u32 count`, then per tensor: `u16 name_len`, UTF-8
//! name, `u8 ndim`, `ndim x u32` dims, and the row-major `f32` payload.
//! All integers and floats are little-endian. A standalone tensor file is
//! the magic `TXTN`, a `u32` format version, and one section.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

const TENSOR_FILE_MAGIC: &[u8; 4] = b"TXTN";
const TENSOR_FILE_VERSION: u32 = 1;

const MAX_NDIM: u8 = 8;

pub(crate) fn write_tensor_section<W: Write>(
    w: &mut W,
    tensors: &[(&str, &ArrayD<f32>)],
) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        assert!(bytes.len() <= u16::MAX as usize, "tensor name too long");
        assert!(t.ndim() <= MAX_NDIM as usize, "tensor rank too high");
        w.write_u16::<LittleEndian>(bytes.len() as u16)?;
        w.write_all(bytes)?;
        w.write_u8(t.ndim() as u8)?;
        for &d in t.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        let contiguous;
        let slice = match t.as_slice() {
            Some(s) => s,
            None => {
                contiguous = t.to_owned();
                contiguous.as_slice().expect("owned array is contiguous")
            }
        };
        for &v in slice {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub(crate) fn read_tensor_section<R: Read>(r: &mut R) -> Result<BTreeMap<String, ArrayD<f32>>> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    let count = r
        .read_u32::<LittleEndian>()
        .map_err(|_| bad("truncated tensor section"))?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r
            .read_u16::<LittleEndian>()
            .map_err(|_| bad("truncated tensor name length"))? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| bad("truncated tensor name"))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| bad("tensor name is not valid UTF-8"))?;
        let ndim = r.read_u8().map_err(|_| bad("truncated tensor rank"))?;
        if ndim > MAX_NDIM {
            return Err(bad("tensor rank too high"));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        let mut len = 1usize;
        for _ in 0..ndim {
            let d = r
                .read_u32::<LittleEndian>()
                .map_err(|_| bad("truncated tensor shape"))? as usize;
            len = len
                .checked_mul(d)
                .ok_or_else(|| bad("tensor shape overflows"))?;
            shape.push(d);
        }
        let mut data = vec![0f32; len];
        r.read_f32_into::<LittleEndian>(&mut data)
            .map_err(|_| bad("truncated tensor payload"))?;
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| Error::Checkpoint(format!("bad tensor shape: {e}")))?;
        if tensors.insert(name.clone(), arr).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor name {name}")));
        }
    }
    Ok(tensors)
}

/// Write a standalone named-tensor file.
pub fn write_named_tensors(path: &Path, tensors: &[(&str, &ArrayD<f32>)]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(Error::io(path))?);
    (|| -> std::io::Result<()> {
        file.write_all(TENSOR_FILE_MAGIC)?;
        file.write_u32::<LittleEndian>(TENSOR_FILE_VERSION)?;
        write_tensor_section(&mut file, tensors)?;
        file.flush()
    })()
    .map_err(Error::io(path))
}

/// Read a standalone named-tensor file.
pub fn read_named_tensors(path: &Path) -> Result<BTreeMap<String, ArrayD<f32>>> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path).map_err(Error::io(path))?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(Error::io(path))?;
    if &magic != TENSOR_FILE_MAGIC {
        return Err(Error::Checkpoint("not a tensor file (bad magic)".into()));
    }
    let version = file
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Checkpoint("truncated tensor file header".into()))?;
    if version != TENSOR_FILE_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported tensor file version {version}"
        )));
    }
    read_tensor_section(&mut file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    #[test]
    fn tensor_file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let a = ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![0.1, -2.5, 3.0, 4.0, 5.5, -6.0])
            .unwrap();
        let b = ArrayD::from_shape_vec(IxDyn(&[4]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_named_tensors(&path, &[("a.w", &a), ("b.b", &b)]).unwrap();
        let back = read_named_tensors(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back["a.w"], a);
        assert_eq!(back["b.b"], b);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOPExxxxxxxx").unwrap();
        assert!(read_named_tensors(&path).is_err());
    }
}
