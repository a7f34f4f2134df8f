//! Binary checkpoint and embedding files, and the metrics CSV.
//!
//! All binary fields are little-endian.
//!
//! Checkpoint: `"C2FP"`, version `u32`, parameter count `u64`, then per
//! parameter its rank `u32`, each dimension `u64` and the values `f64`.
//!
//! Embeddings: `"C2FE"`, version `u32`, `N` `u64`, `d` `u64`, then the
//! row-major `f64` values.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"C2FP";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"C2FE";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_values(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Format("value count overflows".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version}"
            )));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Parameters are written as rank-2 arrays.
pub fn encode_checkpoint(params: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u64(&mut out, params.len() as u64);
    for p in params {
        put_u32(&mut out, 2);
        put_u64(&mut out, p.rows() as u64);
        put_u64(&mut out, p.cols() as u64);
        put_values(&mut out, p.data());
    }
    out
}

/// Ranks 0–2 are accepted; lower ranks load as `1×1` or `1×n`.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(CHECKPOINT_MAGIC)?;
    let count = r.len()?;
    let mut params = Vec::new();
    for i in 0..count {
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims[..] {
            [] => (1, 1),
            [n] => (1, n),
            [a, b] => (a, b),
            _ => {
                return Err(Error::Format(format!(
                    "parameter {i}: rank {rank} unsupported"
                )))
            }
        };
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format(format!("parameter {i}: size overflows")))?;
        let values = r.values(n)?;
        params.push(Tensor::from_vec(rows, cols, values)?);
    }
    r.finish()?;
    Ok(params)
}

pub fn encode_embeddings(z: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * z.len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u64(&mut out, z.rows() as u64);
    put_u64(&mut out, z.cols() as u64);
    put_values(&mut out, z.data());
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(EMBEDDING_MAGIC)?;
    let (n, d) = (r.len()?, r.len()?);
    let len = n
        .checked_mul(d)
        .ok_or_else(|| Error::Format("embedding size overflows".into()))?;
    let values = r.values(len)?;
    r.finish()?;
    Ok(Tensor::from_vec(n, d, values)?)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_checkpoint(path: &Path, params: &[Tensor]) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(io_err(path))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<Tensor>> {
    decode_checkpoint(&std::fs::read(path).map_err(io_err(path))?)
}

pub fn write_embeddings(path: &Path, z: &Tensor) -> Result<()> {
    std::fs::write(path, encode_embeddings(z)).map_err(io_err(path))
}

pub fn read_embeddings(path: &Path) -> Result<Tensor> {
    decode_embeddings(&std::fs::read(path).map_err(io_err(path))?)
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub metrics: MetricsReport,
}

pub const METRICS_HEADER: &str = "run_id,seed,accuracy,f1,auc,recall";

/// Header plus one row per run, values with six decimals.
pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        if row.run_id.contains([',', '\n', '"']) {
            return Err(Error::Format(format!(
                "run id {:?} is not CSV-safe",
                row.run_id
            )));
        }
        let m = &row.metrics;
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            row.run_id, row.seed, m.accuracy, m.f1, m.auc, m.recall
        )
        .expect("writing to a String");
    }
    Ok(out)
}
