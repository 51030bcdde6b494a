//! Flat named-tensor archive used for checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "NTARCH01"
//! n_meta     u32
//!   key_len  u32, key bytes (UTF-8), val_len u32, val bytes (UTF-8)
//! n_tensors  u32
//!   name_len u32, name bytes (UTF-8)
//!   ndim     u32, dims u64 * ndim
//!   data     f64 * prod(dims), row-major
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::{BackboneName, BackboneSpec, ClassifierModel, HeadConfig, Mode};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NTARCH01";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NamedTensorArchive {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, ArrayD<f64>)>,
}

impl NamedTensorArchive {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err("bad magic".into());
        }
        let mut meta = BTreeMap::new();
        for _ in 0..cur.u32()? {
            let k = cur.string()?;
            let v = cur.string()?;
            meta.insert(k, v);
        }
        let n = cur.u32()?;
        let mut tensors = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = cur.string()?;
            let ndim = cur.u32()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(cur.u64()? as usize);
            }
            let len: usize = dims.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")));
            }
            let t = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| e.to_string())?;
            tensors.push((name, t));
        }
        if cur.pos != bytes.len() {
            return Err("trailing bytes".into());
        }
        Ok(NamedTensorArchive { meta, tensors })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or("truncated archive")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}

pub fn write_archive(archive: &NamedTensorArchive, path: &Path) -> Result<()> {
    fs::write(path, archive.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<NamedTensorArchive> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    NamedTensorArchive::from_bytes(&bytes).map_err(|message| Error::Archive {
        path: path.to_path_buf(),
        message,
    })
}

impl ClassifierModel {
    pub fn to_archive(&self) -> NamedTensorArchive {
        let b = &self.backbone;
        let mut meta = BTreeMap::new();
        meta.insert("backbone.name".into(), b.name.to_string());
        meta.insert("backbone.input_height".into(), b.input_size.0.to_string());
        meta.insert("backbone.input_width".into(), b.input_size.1.to_string());
        meta.insert("backbone.feature_dim".into(), b.feature_dim.to_string());
        meta.insert("backbone.weights".into(), b.weights.as_str().into());
        meta.insert("backbone.trainable".into(), b.trainable.to_string());
        let widths: Vec<String> = self.head.dense_widths.iter().map(|w| w.to_string()).collect();
        meta.insert("head.dense_widths".into(), widths.join(","));
        meta.insert("head.dropout_rate".into(), self.head.dropout_rate.to_string());
        meta.insert("head.l2_weight".into(), self.head.l2_weight.to_string());
        NamedTensorArchive {
            meta,
            tensors: self
                .named_params()
                .into_iter()
                .map(|(n, v)| (n, v.to_owned()))
                .collect(),
        }
    }

    /// Rebuild a model from an archive written by [`ClassifierModel::to_archive`].
    pub fn from_archive(archive: &NamedTensorArchive) -> Result<ClassifierModel> {
        let bad = |m: String| Error::Archive {
            path: "<archive>".into(),
            message: m,
        };
        let get = |k: &str| {
            archive
                .meta
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| bad(format!("missing metadata '{k}'")))
        };
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad metadata '{k}'"))) };
        let real = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("bad metadata '{k}'"))) };
        let name: BackboneName = get("backbone.name")?.parse()?;
        let backbone = BackboneSpec {
            name,
            input_size: (num("backbone.input_height")?, num("backbone.input_width")?),
            feature_dim: num("backbone.feature_dim")?,
            weights: get("backbone.weights")?.parse()?,
            trainable: get("backbone.trainable")? == "true",
        };
        let widths = get("head.dense_widths")?;
        let dense_widths = if widths.is_empty() {
            Vec::new()
        } else {
            widths
                .split(',')
                .map(|w| w.parse().map_err(|_| bad("bad dense widths".into())))
                .collect::<Result<Vec<usize>>>()?
        };
        let head = HeadConfig {
            dense_widths,
            dropout_rate: real("head.dropout_rate")?,
            l2_weight: real("head.l2_weight")?,
        };
        let mut model = super::build_classifier(&backbone, &head, 0)?;
        model.load_tensors(archive)?;
        model.mode = Mode::Eval;
        Ok(model)
    }

    /// Overwrite parameters with the archive's tensors (matched by name).
    pub fn load_tensors(&mut self, archive: &NamedTensorArchive) -> Result<()> {
        let names: Vec<(String, Vec<usize>)> = self
            .named_params()
            .into_iter()
            .map(|(n, v)| (n, v.shape().to_vec()))
            .collect();
        if names.len() != archive.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "archive has {} tensors, model has {}",
                archive.tensors.len(),
                names.len()
            )));
        }
        let lookup: BTreeMap<&str, &ArrayD<f64>> = archive.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for ((name, shape), mut slot) in names.iter().zip(self.params_mut()) {
            let t = lookup
                .get(name.as_str())
                .ok_or_else(|| Error::ShapeMismatch(format!("archive lacks tensor '{name}'")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor '{name}' has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            slot.assign(t);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_archive(&self.to_archive(), path)
    }

    pub fn load(path: &Path) -> Result<ClassifierModel> {
        let archive = read_archive(path)?;
        Self::from_archive(&archive).map_err(|e| match e {
            Error::Archive { message, .. } => Error::Archive {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }
}
