//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MCATLAS\0"
//! version    u32      1
//! header     u32 length + UTF-8 JSON {"model": ModelConfig, "meta": {...}}
//! sections   u32 count, then per section:
//!              u32 name length, name bytes,
//!              u32 rows, u32 cols, rows*cols f64 (row-major)
//! ```
//!
//! Model parameters are stored under their parameter names
//! (`encoder.points.layer0.weight`, `decoder3.layer1.bias`, ...). Other
//! sections (optimizer state) are carried through untouched.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AtlasModel, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MCATLAS\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    #[serde(default)]
    meta: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AtlasModel,
    pub meta: serde_json::Map<String, serde_json::Value>,
    /// Sections that are not model parameters.
    pub extra: Vec<(String, Array2<f64>)>,
}

impl Checkpoint {
    pub fn from_model(model: AtlasModel) -> Self {
        Self { model, meta: Default::default(), extra: Vec::new() }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header { model: self.model.config().clone(), meta: self.meta.clone() })?;
        write_len(&mut out, header.len())?;
        out.extend_from_slice(&header);
        let params = self.model.params();
        write_len(&mut out, params.len() + self.extra.len())?;
        let sections = params
            .iter()
            .map(|(_, p)| (p.name.as_str(), &p.value))
            .chain(self.extra.iter().map(|(n, a)| (n.as_str(), a)));
        for (name, a) in sections {
            write_len(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            write_len(&mut out, a.nrows())?;
            write_len(&mut out, a.ncols())?;
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("not an mcatlas checkpoint"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let hlen = read_u32(&mut r)? as usize;
        let header: Header = serde_json::from_slice(take(&mut r, hlen)?)?;
        let mut model = AtlasModel::new(header.model, 0)?;
        let mut seen = vec![false; model.params().len()];
        let mut extra = Vec::new();
        let count = read_u32(&mut r)?;
        for _ in 0..count {
            let nlen = read_u32(&mut r)? as usize;
            let name = std::str::from_utf8(take(&mut r, nlen)?)
                .map_err(|_| bad("section name is not UTF-8"))?
                .to_string();
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let raw = take(&mut r, rows * cols * 8)?;
            let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let array = Array2::from_shape_vec((rows, cols), data).unwrap();
            match model.params().find(&name) {
                Some(id) => {
                    let slot = model.params_mut().get_mut(id);
                    if slot.dim() != array.dim() {
                        return Err(bad(&format!(
                            "section `{name}` has shape {:?}, config implies {:?}",
                            array.dim(),
                            slot.dim()
                        )));
                    }
                    *slot = array;
                    seen[id.index()] = true;
                }
                None => extra.push((name, array)),
            }
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes after last section"));
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            let name = model.params().iter().nth(i).unwrap().1.name.clone();
            return Err(bad(&format!("missing parameter section `{name}`")));
        }
        Ok(Self { model, meta: header.meta, extra })
    }

    /// Writes via a temporary file and rename so an interrupted write never
    /// replaces a previous valid checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl AtlasModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::from_model(self.clone()).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Checkpoint::load(path)?.model)
    }
}

fn bad(msg: &str) -> Error {
    Error::Checkpoint(msg.to_string())
}

fn write_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| bad("section too large"))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated checkpoint"))?;
    Ok(u32::from_le_bytes(b))
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(bad("truncated checkpoint"));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_garbage() {
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_bytes(b"MCATLAS\0\x02\0\0\0"), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn round_trip_is_bit_exact_with_extra_sections() {
        let model = AtlasModel::new(ModelConfig { patches: 2, latent_dim: 3, encoder_widths: vec![4], decoder_widths: vec![5] }, 9).unwrap();
        let mut ck = Checkpoint::from_model(model);
        ck.meta.insert("iteration".into(), 17.into());
        ck.extra.push(("adam.m.x".into(), Array2::from_elem((2, 2), -0.1)));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let model = AtlasModel::new(ModelConfig { patches: 1, latent_dim: 2, encoder_widths: vec![3], decoder_widths: vec![] }, 1).unwrap();
        let bytes = Checkpoint::from_model(model).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
