//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `FRCKPT01`, a little-endian `u64` header length,
//! a JSON header (seed, string metadata, network specs, tensor index), then
//! every tensor's values as row-major little-endian `f64` in index order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{MlpSpec, ParamTensor, Scalar};

const MAGIC: &[u8; 8] = b"FRCKPT01";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub metadata: BTreeMap<String, String>,
    pub specs: BTreeMap<String, MlpSpec>,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    metadata: BTreeMap<String, String>,
    specs: BTreeMap<String, MlpSpec>,
    tensors: Vec<(String, Vec<usize>)>,
}

impl Checkpoint {
    pub fn new(seed: u64) -> Self {
        Checkpoint {
            seed,
            ..Default::default()
        }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get_meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata key {key:?}")))
    }

    pub fn push<'a, T: Scalar>(&mut self, params: impl IntoIterator<Item = &'a ParamTensor<T>>) {
        for p in params {
            self.tensors.push(TensorRecord {
                name: p.name().to_string(),
                shape: p.shape().to_vec(),
                values: p.values().iter().map(|v| v.as_f64()).collect(),
            });
        }
    }

    /// Copies stored values into every given tensor, matched by name.
    pub fn restore<T: Scalar>(&self, params: &mut [&mut ParamTensor<T>]) -> Result<()> {
        let index: BTreeMap<&str, &TensorRecord> = self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for p in params.iter_mut() {
            let rec = index
                .get(p.name())
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} not in checkpoint", p.name())))?;
            if rec.shape != p.shape() {
                return Err(Error::shape(format!("checkpoint tensor {}", p.name()), format!("{:?}", p.shape()), format!("{:?}", rec.shape)));
            }
            let values: Vec<T> = rec.values.iter().map(|&v| T::lit(v)).collect();
            p.assign(&values)?;
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = Header {
            seed: self.seed,
            metadata: self.metadata.clone(),
            specs: self.specs.clone(),
            tensors: self.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for t in &self.tensors {
            for v in &t.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for (name, shape) in header.tensors {
            let numel: usize = shape.iter().product();
            let mut values = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Checkpoint(format!("truncated data for {name}")))?;
                values.push(f64::from_le_bytes(buf));
            }
            tensors.push(TensorRecord { name, shape, values });
        }
        Ok(Checkpoint {
            seed: header.seed,
            metadata: header.metadata,
            specs: header.specs,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}
