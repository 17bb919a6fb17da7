//! Checkpoint container:
//!
//! ```text
//! magic    8 bytes  "NLCKPT01"
//! header   u64 LE byte length, then UTF-8 JSON (model configuration)
//! count    u64 LE number of tensors
//! tensor   u32 LE name length, UTF-8 name,
//!          u32 LE rank, rank × u64 LE dims,
//!          product(dims) × f64 LE values, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Parameterized;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"NLCKPT01";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar, M: Parameterized<T>>(header: impl Into<String>, model: &M) -> Self {
        let tensors = model
            .params()
            .into_iter()
            .map(|(info, data)| NamedTensor {
                name: info.name,
                shape: info.shape,
                data: data.iter().map(|x| x.to_f64_lossy()).collect(),
            })
            .collect();
        Checkpoint {
            header: header.into(),
            tensors,
        }
    }

    /// Copies the stored values into `model`, whose tensor names and shapes
    /// must match exactly.
    pub fn load_into<T: Scalar, M: Parameterized<T>>(&self, model: &mut M) -> Result<()> {
        let infos: Vec<_> = model.params().into_iter().map(|(i, _)| i).collect();
        if infos.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                infos.len()
            )));
        }
        for (info, t) in infos.iter().zip(&self.tensors) {
            if info.name != t.name || info.shape != t.shape {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                    t.name, t.shape, info.name, info.shape
                )));
            }
        }
        for (dst, t) in model.params_mut().into_iter().zip(&self.tensors) {
            for (d, &v) in dst.iter_mut().zip(&t.data) {
                *d = T::lit(v);
            }
        }
        Ok(())
    }
}

pub fn save_checkpoint<T: Scalar, M: Parameterized<T>>(
    path: impl AsRef<Path>,
    header: &str,
    model: &M,
) -> Result<()> {
    let path = path.as_ref();
    let ck = Checkpoint::from_model(header, model);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_all(&mut w, &ck).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_all(w: &mut impl Write, ck: &Checkpoint) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(ck.header.len() as u64).to_le_bytes())?;
    w.write_all(ck.header.as_bytes())?;
    w.write_all(&(ck.tensors.len() as u64).to_le_bytes())?;
    for t in &ck.tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in &t.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: msg.to_string(),
    };
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let header_len = read_u64(&mut r).map_err(io)? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header).map_err(io)?;
    let header = String::from_utf8(header).map_err(|_| bad("header is not UTF-8"))?;
    let count = read_u64(&mut r).map_err(io)? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = read_u32(&mut r).map_err(io)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = read_u32(&mut r).map_err(io)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(io)?;
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf).map_err(io)?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.push(NamedTensor { name, shape, data });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(bad("trailing bytes after last tensor"));
    }
    Ok(Checkpoint { header, tensors })
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
