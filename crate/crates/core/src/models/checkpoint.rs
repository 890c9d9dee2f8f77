//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "AFGN" | version: u32 | kind_len: u32 | kind: utf8
//! | n_params: u32
//! | n_params x ( name_len: u32 | name: utf8 | rank: u32 | extents: rank x u64 | values: f32 x prod(extents) )
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DetectorKind, DetectorNet, GeneratorNet, Model};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AFGN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct StoredParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: String,
    pub params: Vec<StoredParam>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar, M: Model<T>>(model: &M) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            kind: model.kind_tag(),
            params: model
                .params()
                .iter()
                .map(|p| StoredParam {
                    name: p.name().to_string(),
                    shape: p.value().shape().to_vec(),
                    values: p.value().data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            put_str(&mut out, &p.name);
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &e in &p.shape {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in &p.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let kind = r.string()?;
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let count = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e)).ok_or_else(|| {
                Error::CheckpointParam { name: name.clone(), detail: "extent overflow".into() }
            })?;
            let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)
                .map_err(|_| Error::CheckpointParam { name: name.clone(), detail: "truncated values".into() })?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            params.push(StoredParam { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { version, kind, params })
    }

    /// Copies values into `model` after checking names, shapes and the kind tag.
    pub fn apply_to<T: Scalar, M: Model<T>>(&self, model: &mut M) -> Result<()> {
        let targets = model.params();
        for (i, target) in targets.iter().enumerate() {
            let Some(stored) = self.params.get(i) else {
                return Err(Error::CheckpointParam {
                    name: target.name().to_string(),
                    detail: "missing from checkpoint".into(),
                });
            };
            if stored.name != target.name() || stored.shape != target.value().shape() {
                return Err(Error::CheckpointParam {
                    name: target.name().to_string(),
                    detail: format!(
                        "checkpoint holds `{}` {:?}, model expects {:?}",
                        stored.name,
                        stored.shape,
                        target.value().shape()
                    ),
                });
            }
        }
        if let Some(extra) = self.params.get(targets.len()) {
            return Err(Error::CheckpointParam {
                name: extra.name.clone(),
                detail: "not present in the model".into(),
            });
        }
        let tag = model.kind_tag();
        if self.kind != tag {
            return Err(Error::Checkpoint(format!("checkpoint kind `{}` does not match model `{tag}`", self.kind)));
        }
        for (stored, p) in self.params.iter().zip(model.params_mut()) {
            let values = stored.values.iter().map(|&v| T::from_f64_lossy(v as f64)).collect();
            p.set_value(Tensor::new(stored.shape.clone(), values)?)?;
        }
        Ok(())
    }

    pub fn into_generator<T: Scalar>(self) -> Result<GeneratorNet<T>> {
        let mut g = GeneratorNet::from_kind_tag(&self.kind)?;
        self.apply_to(&mut g)?;
        Ok(g)
    }

    pub fn into_detector<T: Scalar>(self) -> Result<DetectorNet<T>> {
        let kind: DetectorKind = self
            .kind
            .strip_prefix("detector:")
            .ok_or_else(|| Error::Checkpoint(format!("`{}` is not a detector checkpoint", self.kind)))?
            .parse()?;
        let mut d = DetectorNet::build(kind, 0)?;
        self.apply_to(&mut d)?;
        Ok(d)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file: wanted {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8 string".into()))
    }
}

/// Writes atomically through a sibling temporary file.
pub fn save_checkpoint<T: Scalar, M: Model<T>>(model: &M, path: &Path) -> Result<()> {
    let bytes = Checkpoint::from_model(model).to_bytes();
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

pub fn load_checkpoint<T: Scalar, M: Model<T>>(path: &Path, model: &mut M) -> Result<()> {
    read_checkpoint(path)?.apply_to(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(m: &impl Model<f32>) -> Vec<u32> {
        m.params().iter().flat_map(|p| p.value().data().iter().map(|v| v.to_bits())).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.afgn");
        let g = GeneratorNet::<f32>::build(11).unwrap();
        save_checkpoint(&g, &path).unwrap();
        let mut back = GeneratorNet::<f32>::build(12).unwrap();
        load_checkpoint(&path, &mut back).unwrap();
        assert_eq!(bits(&g), bits(&back));
        let again = read_checkpoint(&path).unwrap().into_generator::<f32>().unwrap();
        assert_eq!(bits(&g), bits(&again));
    }

    #[test]
    fn header_layout() {
        let d = DetectorNet::<f32>::build(DetectorKind::PlainNet, 0).unwrap();
        let bytes = Checkpoint::from_model(&d).to_bytes();
        assert_eq!(&bytes[..4], b"AFGN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 17);
        assert_eq!(&bytes[12..29], b"detector:plainnet");
        assert_eq!(u32::from_le_bytes(bytes[29..33].try_into().unwrap()), 8);
    }

    #[test]
    fn truncated_file_rejected() {
        let g = GeneratorNet::<f32>::build(1).unwrap();
        let bytes = Checkpoint::from_model(&g).to_bytes();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let g = GeneratorNet::<f32>::build(1).unwrap();
        let mut bytes = Checkpoint::from_model(&g).to_bytes();
        bytes[4] = 9;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
    }

    #[test]
    fn generator_into_detector_names_first_mismatch() {
        let g = GeneratorNet::<f32>::build(1).unwrap();
        let ck = Checkpoint::from_model(&g);
        let mut d = DetectorNet::<f32>::build(DetectorKind::PlainNet, 0).unwrap();
        let err = ck.apply_to(&mut d).unwrap_err();
        match err {
            Error::CheckpointParam { name, .. } => assert_eq!(name, "conv1.weight"),
            other => panic!("unexpected {other}"),
        }
    }
}
