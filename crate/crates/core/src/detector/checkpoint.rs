use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::{infer, Detection, DetectorConfig, DetectorError, Model, Proposal, Result};
use crate::ink::ClassVocabulary;
use crate::raster::RasterImage;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FRCN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained (or freshly initialized) detector: configuration, class
/// vocabulary and single-precision parameters.
#[derive(Debug, Clone)]
pub struct Detector {
    pub config: DetectorConfig,
    pub vocab: ClassVocabulary,
    pub model: Model<f32>,
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(DetectorError::TruncatedFile);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| DetectorError::BadCheckpoint("invalid UTF-8".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Detector {
    /// Fresh weights drawn from `config.seed`.
    pub fn new(config: DetectorConfig, vocab: ClassVocabulary) -> Result<Self> {
        config.validate()?;
        let model = Model::new(vocab.len(), &config, config.seed)?;
        Ok(Self { config, vocab, model })
    }

    pub fn detect(&self, image: &RasterImage) -> Result<Vec<Detection>> {
        Ok(infer::run(&self.model, image, &self.config)?.0)
    }

    /// Proposal-network output for `image`, in rescaled-image units.
    pub fn proposals(&self, image: &RasterImage) -> Result<Vec<Proposal>> {
        Ok(infer::run(&self.model, image, &self.config)?.1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for name in self.vocab.names() {
            put_str(&mut out, name);
        }
        put_str(&mut out, &self.config.to_text());
        out.extend_from_slice(&(self.model.params.len() as u32).to_le_bytes());
        for (_, p) in self.model.params.iter() {
            put_str(&mut out, &p.name);
            out.push(p.value.shape().len() as u8);
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if &magic != CHECKPOINT_MAGIC {
            return Err(DetectorError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(DetectorError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
        }
        let n = r.u32()? as usize;
        let names = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let vocab = ClassVocabulary::from_names(names)
            .ok_or_else(|| DetectorError::BadCheckpoint("vocabulary must start with background".into()))?;
        let config = DetectorConfig::from_text(&r.string()?)
            .map_err(|e| DetectorError::BadCheckpoint(format!("config snapshot: {e}")))?;
        let mut det = Self::new(config, vocab)?;
        let count = r.u32()? as usize;
        let mut seen = HashSet::new();
        for _ in 0..count {
            let name = r.string()?;
            if !seen.insert(name.clone()) {
                return Err(DetectorError::DuplicateTensorName(name));
            }
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(4).ok_or(DetectorError::TruncatedFile)?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let id = det
                .model
                .params
                .id(&name)
                .ok_or_else(|| DetectorError::BadCheckpoint(format!("unexpected tensor {name:?}")))?;
            let param = det.model.params.get_mut(id);
            if param.value.shape() != shape.as_slice() {
                return Err(DetectorError::BadCheckpoint(format!(
                    "tensor {name:?} has shape {shape:?}, expected {:?}",
                    param.value.shape()
                )));
            }
            param.value = Tensor::new(shape, data)?;
        }
        if seen.len() != det.model.params.len() {
            return Err(DetectorError::BadCheckpoint(format!(
                "{} tensors, expected {}",
                seen.len(),
                det.model.params.len()
            )));
        }
        if !r.buf.is_empty() {
            return Err(DetectorError::BadCheckpoint("trailing bytes".into()));
        }
        Ok(det)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
