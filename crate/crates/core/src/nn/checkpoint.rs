//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"NAFFCKPT"
//! 8       4     u32    format version (currently 1)
//! 12      8     u64    header length H in bytes
//! 20      H     UTF-8 JSON header:
//!               {"spec": <ModelSpec>, "seed": <u64>,
//!                "normalizer": <Normalizer or null>, "param_count": <u64>}
//! 20+H    ...   param_count records, in model order:
//!               u32 name length n, n bytes UTF-8 name,
//!               u32 rank r, r × u64 dims,
//!               prod(dims) × f64 values (row-major)
//! ```
//!
//! Nothing follows the last record.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelParams};
use super::spec::ModelSpec;
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"NAFFCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub normalizer: Option<Normalizer>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: ModelSpec,
    seed: u64,
    normalizer: Option<Normalizer>,
    param_count: u64,
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            spec: self.model.spec.clone(),
            seed: self.seed,
            normalizer: self.normalizer.clone(),
            param_count: self.model.params.len() as u64,
        })?;
        let io = |e| Error::io("checkpoint", e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(header.len() as u64).to_le_bytes())
            .map_err(io)?;
        w.write_all(&header).map_err(io)?;
        for (name, t) in self.model.params.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())
                .map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            w.write_all(&(t.rank() as u32).to_le_bytes()).map_err(io)?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_from(r: &mut impl Read, origin: &Path) -> Result<Self> {
        let fmt = |m: String| Error::Format {
            path: origin.to_path_buf(),
            message: m,
        };
        let mut rd = Reader { r, origin };
        let magic: [u8; 8] = rd.array()?;
        if &magic != MAGIC {
            return Err(fmt("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(rd.array()?);
        if version != VERSION {
            return Err(fmt(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(rd.array()?) as usize;
        let header: Header = serde_json::from_slice(&rd.bytes(hlen)?)?;
        header.spec.validate()?;
        let mut params = ModelParams::new();
        for _ in 0..header.param_count {
            let n = u32::from_le_bytes(rd.array()?) as usize;
            let name = String::from_utf8(rd.bytes(n)?)
                .map_err(|_| fmt("parameter name is not UTF-8".into()))?;
            let rank = u32::from_le_bytes(rd.array()?) as usize;
            let shape = (0..rank)
                .map(|_| rd.array().map(|b| u64::from_le_bytes(b) as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = rd.bytes(len * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        let mut extra = [0u8; 1];
        if rd.r.read(&mut extra).map_err(|e| Error::io(origin, e))? != 0 {
            return Err(fmt("trailing bytes after last parameter".into()));
        }
        let expected = super::model::build(&header.spec, 0)?;
        let layout_ok = expected.len() == params.len()
            && expected
                .iter()
                .zip(params.iter())
                .all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape());
        if !layout_ok {
            return Err(fmt("parameters do not match the stored model spec".into()));
        }
        Ok(Self {
            model: Model {
                spec: header.spec,
                params,
            },
            seed: header.seed,
            normalizer: header.normalizer,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(f), path)
    }
}

struct Reader<'a, R> {
    r: &'a mut R,
    origin: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b).map_err(|e| self.err(e))?;
        Ok(b)
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        self.r
            .by_ref()
            .take(n as u64)
            .read_to_end(&mut b)
            .map_err(|e| self.err(e))?;
        if b.len() != n {
            return Err(Error::Format {
                path: self.origin.to_path_buf(),
                message: "truncated checkpoint".into(),
            });
        }
        Ok(b)
    }

    fn err(&self, e: std::io::Error) -> Error {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format {
                path: self.origin.to_path_buf(),
                message: "truncated checkpoint".into(),
            }
        } else {
            Error::io(self.origin, e)
        }
    }
}
