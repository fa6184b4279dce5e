//! Binary container for named tensors (model checkpoints and processed-data
//! arrays). Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "UNIGRF01"
//! count   u64      number of records
//! record: name_len u32, name bytes (UTF-8),
//!         rank u32, extents rank x u64,
//!         payload product(extents) x f64
//! ```
//!
//! Payloads are always f64 on disk; narrower runtimes convert at the edges.

use crate::TensorError;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// A named tensor as stored in the container.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        NamedTensor {
            name: name.into(),
            shape,
            data,
        }
    }
}

const MAGIC: &[u8; 8] = b"UNIGRF01";

/// Writes all tensors to `path`, replacing any existing file.
pub fn write_tensors(path: &Path, tensors: &[NamedTensor]) -> Result<(), TensorError> {
    for t in tensors {
        let expect: usize = t.shape.iter().product();
        if expect != t.data.len() {
            return Err(TensorError::Container(format!(
                "`{}`: shape {:?} implies {} elements, buffer has {}",
                t.name,
                t.shape,
                expect,
                t.data.len()
            )));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for t in tensors {
        let name = t.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &e in &t.shape {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    r: BufReader<&'a File>,
}

impl Cursor<'_> {
    fn u32(&mut self, what: &str) -> Result<u32, TensorError> {
        let mut b = [0u8; 4];
        self.r
            .read_exact(&mut b)
            .map_err(|_| TensorError::Container(format!("truncated reading {what}")))?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self, what: &str) -> Result<u64, TensorError> {
        let mut b = [0u8; 8];
        self.r
            .read_exact(&mut b)
            .map_err(|_| TensorError::Container(format!("truncated reading {what}")))?;
        Ok(u64::from_le_bytes(b))
    }
}

/// Reads a container written by [`write_tensors`]. Any structural defect
/// (bad magic, truncation, invalid UTF-8, absurd extents) is an error.
pub fn read_tensors(path: &Path) -> Result<Vec<NamedTensor>, TensorError> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut cur = Cursor {
        r: BufReader::new(&file),
    };

    let mut magic = [0u8; 8];
    cur.r
        .read_exact(&mut magic)
        .map_err(|_| TensorError::Container("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(TensorError::Container(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }

    let count = cur.u64("record count")?;
    let mut out = Vec::new();
    for rec in 0..count {
        let name_len = cur.u32("name length")? as usize;
        if name_len as u64 > file_len {
            return Err(TensorError::Container(format!(
                "record {rec}: name length {name_len} exceeds file size"
            )));
        }
        let mut name_buf = vec![0u8; name_len];
        cur.r
            .read_exact(&mut name_buf)
            .map_err(|_| TensorError::Container(format!("record {rec}: truncated name")))?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| TensorError::Container(format!("record {rec}: name is not UTF-8")))?;

        let rank = cur.u32("rank")? as usize;
        if rank > 8 {
            return Err(TensorError::Container(format!(
                "`{name}`: rank {rank} is not plausible"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut elems: u64 = 1;
        for _ in 0..rank {
            let e = cur.u64("extent")?;
            elems = elems.checked_mul(e).ok_or_else(|| {
                TensorError::Container(format!("`{name}`: extent product overflows"))
            })?;
            shape.push(e as usize);
        }
        if elems.checked_mul(8).is_none_or(|bytes| bytes > file_len) {
            return Err(TensorError::Container(format!(
                "`{name}`: payload of {elems} elements exceeds file size"
            )));
        }
        let mut data = vec![0.0f64; elems as usize];
        for v in data.iter_mut() {
            let mut b = [0u8; 8];
            cur.r
                .read_exact(&mut b)
                .map_err(|_| TensorError::Container(format!("`{name}`: truncated payload")))?;
            *v = f64::from_le_bytes(b);
        }
        out.push(NamedTensor { name, shape, data });
    }
    Ok(out)
}
