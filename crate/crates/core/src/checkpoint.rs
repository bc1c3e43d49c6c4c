//! Binary container for named f32 arrays with a JSON header.
//!
//! Layout: the magic line `MMTC\n`, the header length in bytes as a decimal
//! line, the UTF-8 JSON header, then every array's raw little-endian f32
//! data in manifest order. Offsets in the manifest are relative to the
//! start of the data section.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::codec::FieldVocab;
use crate::error::{Error, Result};
use crate::model::{Mmt, ModelConfig, Params};

const MAGIC: &str = "MMTC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

/// A typed bag of named arrays plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, ArrayD<f32>)>,
}

impl Container {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Container {
            kind: kind.to_string(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, array: ArrayD<f32>) {
        self.arrays.push((name.into(), array));
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let arrays = self
            .arrays
            .iter()
            .map(|(name, a)| {
                let entry = ArrayEntry {
                    name: name.clone(),
                    shape: a.shape().to_vec(),
                    offset,
                };
                offset += a.len() * 4;
                entry
            })
            .collect();
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays,
        };
        let json = serde_json::to_vec_pretty(&header).expect("header serializes");
        let mut out = Vec::with_capacity(json.len() + offset + 32);
        out.extend_from_slice(format!("{MAGIC}\n{}\n", json.len()).as_bytes());
        out.extend_from_slice(&json);
        for (_, a) in &self.arrays {
            for x in a.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        let mut cursor = std::io::Cursor::new(bytes);
        let mut line = String::new();
        cursor
            .read_line(&mut line)
            .map_err(|e| bad(e.to_string()))?;
        if line.trim_end() != MAGIC {
            return Err(bad("not a checkpoint container".into()));
        }
        line.clear();
        cursor
            .read_line(&mut line)
            .map_err(|e| bad(e.to_string()))?;
        let len: usize = line
            .trim_end()
            .parse()
            .map_err(|_| bad(format!("bad header length {line:?}")))?;
        let mut json = vec![0u8; len];
        cursor
            .read_exact(&mut json)
            .map_err(|_| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| bad(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", header.format_version)));
        }
        let data = &bytes[cursor.position() as usize..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let count: usize = entry.shape.iter().product();
            let end = entry.offset + count * 4;
            let raw = data
                .get(entry.offset..end)
                .ok_or_else(|| bad(format!("array {} runs past the end of the file", entry.name)))?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let array = ArrayD::from_shape_vec(entry.shape, values).map_err(|e| bad(e.to_string()))?;
            arrays.push((entry.name, array));
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub step: u64,
    pub best_valid_loss: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    vocab_sizes: [usize; 6],
    training_state: TrainingState,
}

/// Model configuration, parameters and training progress.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub params: Params<f32>,
    pub state: TrainingState,
}

impl ModelCheckpoint {
    pub fn new(model: &Mmt<f32>, state: TrainingState) -> Self {
        ModelCheckpoint {
            config: model.config.clone(),
            params: model.params.clone(),
            state,
        }
    }

    pub fn model(&self) -> Result<Mmt<f32>> {
        Mmt::from_params(self.config.clone(), self.params.clone())
    }

    pub fn to_container(&self) -> Container {
        let meta = ModelMeta {
            config: self.config.clone(),
            vocab_sizes: FieldVocab::SIZES,
            training_state: self.state,
        };
        let mut c = Container::new("model", serde_json::to_value(meta).expect("meta serializes"));
        for (name, a) in self.params.named() {
            c.push(name, a.to_owned());
        }
        c
    }

    pub fn from_container(c: &Container, path: &Path) -> Result<Self> {
        if c.kind != "model" {
            return Err(Error::format(path, format!("expected a model checkpoint, found {:?}", c.kind)));
        }
        let meta: ModelMeta =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::format(path, e.to_string()))?;
        if meta.config.vocab_sizes != meta.vocab_sizes {
            return Err(Error::format(path, "vocabulary sizes disagree with config"));
        }
        meta.config.validate()?;
        let mut params = Params::<f32>::zeros(&meta.config);
        let expected = params.named().len();
        if c.arrays.len() != expected {
            return Err(Error::format(
                path,
                format!("{} arrays, config implies {expected}", c.arrays.len()),
            ));
        }
        for ((name, mut dst), (src_name, src)) in params.named_mut().into_iter().zip(&c.arrays) {
            if name != *src_name || dst.shape() != src.shape() {
                return Err(Error::format(
                    path,
                    format!(
                        "array {src_name} {:?} does not match expected {name} {:?}",
                        src.shape(),
                        dst.shape()
                    ),
                ));
            }
            dst.assign(src);
        }
        Ok(ModelCheckpoint {
            config: meta.config,
            params,
            state: meta.training_state,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_container(&Container::load(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Mmt<f32> {
        let config = ModelConfig {
            layers: 1,
            model_dim: 8,
            heads: 2,
            feedforward_dim: 16,
            max_len: 6,
            ..ModelConfig::desk()
        };
        Mmt::new(config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = small();
        m.params.final_bias[0] = f32::MIN_POSITIVE / 3.0;
        m.params.final_bias[1] = -0.0;
        let state = TrainingState {
            step: 1234,
            best_valid_loss: Some(0.123_456_789_012_345_6),
        };
        let ck = ModelCheckpoint::new(&m, state);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        let back = ModelCheckpoint::load(&path).unwrap();
        assert_eq!(back.state, state);
        assert_eq!(back.config, ck.config);
        for ((_, a), (_, b)) in ck.params.named().iter().zip(back.params.named()) {
            let a: Vec<u32> = a.iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = b.iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(std::fs::read(&path).unwrap(), back.to_container().to_bytes());
    }

    #[test]
    fn header_lists_manifest() {
        let bytes = ModelCheckpoint::new(&small(), TrainingState::default())
            .to_container()
            .to_bytes();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.starts_with("MMTC\n"));
        assert!(text.contains("\"format_version\": 1"));
        assert!(text.contains("\"embed.type\""));
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let p = Path::new("x");
        assert!(Container::from_bytes(b"hello", p).is_err());
        let bytes = ModelCheckpoint::new(&small(), TrainingState::default())
            .to_container()
            .to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let ck = ModelCheckpoint::new(&small(), TrainingState::default());
        let mut c = ck.to_container();
        c.arrays[0].1 = ArrayD::zeros(vec![2, 2]);
        assert!(ModelCheckpoint::from_container(&c, Path::new("x")).is_err());
    }
}
