//! Flat tensor file: magic, JSON index, raw little-endian blobs.
//!
//! Used for encoder weights converted from the published checkpoint and for
//! our own checkpoints (trainable parameters only). Writes are atomic
//! (temp file + rename).

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::{ParamEntry, ParamTree};
use super::EncoderSpec;

const MAGIC: &[u8; 8] = b"DFTENSR1";

#[derive(Serialize, Deserialize)]
struct Index {
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

pub fn save_tensors<'a>(
    path: &Path,
    tensors: impl Iterator<Item = (&'a str, &'a [usize], &'a [f64])> + Clone,
    dtype: Dtype,
) -> Result<()> {
    let index = Index {
        tensors: tensors
            .clone()
            .map(|(name, shape, _)| TensorMeta {
                name: name.to_string(),
                shape: shape.to_vec(),
                dtype: dtype.tag().to_string(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&index)?;
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for (_, _, data) in tensors {
            match dtype {
                Dtype::F32 => {
                    for v in data {
                        w.write_all(&(*v as f32).to_le_bytes())?;
                    }
                }
                Dtype::F64 => {
                    for v in data {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
    let mut r = BufReader::new(fs::File::open(path).map_err(|e| {
        Error::Config(format!("cannot open weights file {}: {e}", path.display()))
    })?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Config(format!("{} is not a tensor file", path.display())));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let index: Index = serde_json::from_slice(&header)?;
    let mut out = Vec::with_capacity(index.tensors.len());
    for meta in index.tensors {
        let n: usize = meta.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        match meta.dtype.as_str() {
            "f32" => {
                let mut buf = vec![0u8; n * 4];
                r.read_exact(&mut buf)?;
                for c in buf.chunks_exact(4) {
                    data.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
                }
            }
            "f64" => {
                let mut buf = vec![0u8; n * 8];
                r.read_exact(&mut buf)?;
                for c in buf.chunks_exact(8) {
                    data.push(f64::from_le_bytes(c.try_into().unwrap()));
                }
            }
            other => {
                return Err(Error::Config(format!("unsupported dtype `{other}` in tensor file")))
            }
        }
        out.push((meta.name, meta.shape, data));
    }
    Ok(out)
}

/// Builds the full architecture tree from a weights file; every layout
/// tensor must be present with the right shape.
pub fn load_tree(spec: &EncoderSpec, path: &Path) -> Result<ParamTree> {
    let mut tree = ParamTree::structural(spec);
    let mut loaded = std::collections::BTreeMap::new();
    for (name, shape, data) in load_tensors(path)? {
        loaded.insert(name, (shape, data));
    }
    let names: Vec<String> = tree.names().map(str::to_string).collect();
    for name in names {
        let entry = tree.get_mut(&name).unwrap();
        match loaded.remove(&name) {
            Some((shape, data)) => {
                if shape != entry.shape {
                    return Err(Error::Shape(format!(
                        "tensor `{name}`: file shape {shape:?} vs expected {:?}",
                        entry.shape
                    )));
                }
                entry.data = Some(data);
            }
            None => {
                return Err(Error::Config(format!(
                    "weights file {} is missing tensor `{name}`",
                    path.display()
                )))
            }
        }
    }
    Ok(tree)
}

pub fn save_tree(tree: &ParamTree, path: &Path, dtype: Dtype) -> Result<()> {
    let tensors: Vec<(&str, &[usize], &[f64])> = tree
        .iter()
        .filter_map(|(name, e)| {
            e.data.as_deref().map(|d| (name, e.shape.as_slice(), d))
        })
        .collect();
    save_tensors(path, tensors.iter().map(|(n, s, d)| (*n, *s, *d)), dtype)
}

/// Restore data into matching entries (used when loading checkpoints into a
/// live tree). Entries not present in the file are left untouched.
pub fn restore_into(tree: &mut ParamTree, path: &Path) -> Result<Vec<String>> {
    let mut restored = Vec::new();
    for (name, shape, data) in load_tensors(path)? {
        match tree.get_mut(&name) {
            Some(entry) => {
                if entry.shape != shape {
                    return Err(Error::Shape(format!(
                        "tensor `{name}`: file shape {shape:?} vs live {:?}",
                        entry.shape
                    )));
                }
                entry.data = Some(data);
                restored.push(name);
            }
            None => {
                // Low-rank factors may need to be created on restore.
                tree.insert(
                    name.clone(),
                    ParamEntry { shape, trainable: true, data: Some(data) },
                );
                restored.push(name);
            }
        }
    }
    Ok(restored)
}
