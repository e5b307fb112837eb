//! Self-describing parameter container.
//!
//! Layout: 8-byte magic `PISPCKPT`, little-endian u64 header length, a JSON
//! header, then the concatenated raw array data. The header lists named
//! arrays with dtype (always `f64`, little-endian), shape, and byte offset
//! into the data section. Arrays are stored sorted by name.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

const MAGIC: &[u8; 8] = b"PISPCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    /// Free-form metadata (seeds, config hashes, training notes).
    #[serde(default)]
    meta: BTreeMap<String, String>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    byte_len: u64,
}

pub fn save(
    path: &Path,
    params: &ParamSet,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let mut arrays = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    for (name, t) in params.iter() {
        let offset = blob.len() as u64;
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        arrays.push(ArrayEntry {
            name: name.clone(),
            dtype: "f64".into(),
            shape: t.shape().to_vec(),
            offset,
            byte_len: (t.numel() * 8) as u64,
        });
    }
    let header = Header {
        version: VERSION,
        meta: meta.clone(),
        arrays,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
    let mut f = fs::File::create(path).map_err(|e| Error::io("create", path, e))?;
    let mut write = |bytes: &[u8]| -> Result<()> {
        f.write_all(bytes).map_err(|e| Error::io("write", path, e))
    };
    write(MAGIC)?;
    write(&(header_json.len() as u64).to_le_bytes())?;
    write(&header_json)?;
    write(&blob)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamSet, BTreeMap<String, String>)> {
    let mut f = fs::File::open(path).map_err(|e| Error::io("open", path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)
        .map_err(|e| Error::io("read", path, e))?;
    if buf.len() < 16 || &buf[..8] != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let hlen = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    if buf.len() < 16 + hlen {
        return Err(Error::Checkpoint(format!(
            "{}: truncated header",
            path.display()
        )));
    }
    let header: Header = serde_json::from_slice(&buf[16..16 + hlen])
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let data = &buf[16 + hlen..];
    let mut params = ParamSet::new();
    for a in &header.arrays {
        if a.dtype != "f64" {
            return Err(Error::Checkpoint(format!(
                "array '{}': unsupported dtype {}",
                a.name, a.dtype
            )));
        }
        let start = a.offset as usize;
        let end = start + a.byte_len as usize;
        if end > data.len() {
            return Err(Error::Checkpoint(format!(
                "array '{}' out of bounds",
                a.name
            )));
        }
        let values: Vec<f64> = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(a.shape.clone(), values)
            .map_err(|e| Error::Checkpoint(format!("array '{}': {e}", a.name)))?;
        params.insert(a.name.clone(), t);
    }
    Ok((params, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut params = ParamSet::new();
        params.insert("layer.weight", Tensor::new(vec![2, 3], vec![1.0, -2.5, 0.0, 1e-300, 3.14, f64::MIN_POSITIVE]).unwrap());
        params.insert("layer.bias", Tensor::new(vec![2], vec![0.5, -0.5]).unwrap());
        let mut meta = BTreeMap::new();
        meta.insert("seed".to_string(), "42".to_string());
        save(&path, &params, &meta).unwrap();
        let (loaded, meta2) = load(&path).unwrap();
        assert_eq!(meta2.get("seed").unwrap(), "42");
        assert_eq!(loaded.len(), 2);
        for (name, t) in params.iter() {
            let l = loaded.get(name).unwrap();
            assert_eq!(l.shape(), t.shape());
            assert_eq!(l.data(), t.data());
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load(&path).is_err());
    }
}
