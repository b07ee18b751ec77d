//! Versioned binary parameter files.
//!
//! Layout (little endian): magic `HYPROWN\0`, `u32` version, `u8` model,
//! `u32` latent dimension, `u8` kind, `u8` flavor, `u32` tensor count, then
//! per tensor a `u32` rank, `u32` extents and `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::distributions::{Flavor, Kind};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HYPROWN\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelType {
    Vae,
    Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelType,
    pub dim: usize,
    pub kind: Kind,
    pub flavor: Flavor,
    pub tensors: Vec<Tensor>,
}

fn kind_code(k: Kind) -> u8 {
    match k {
        Kind::Euclidean => 0,
        Kind::Hwn => 1,
        Kind::Rown => 2,
    }
}

fn flavor_code(f: Flavor) -> u8 {
    match f {
        Flavor::Isotropic => 0,
        Flavor::Diagonal => 1,
        Flavor::Full => 2,
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Parse { line: 0, msg: format!("checkpoint: {}", msg.into()) }
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[match self.model {
            ModelType::Vae => 1,
            ModelType::Embedding => 2,
        }])?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&[kind_code(self.kind), flavor_code(self.flavor)])?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic header"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let model = match read_u8(&mut r)? {
            1 => ModelType::Vae,
            2 => ModelType::Embedding,
            m => return Err(bad(format!("unknown model type {m}"))),
        };
        let dim = read_u32(&mut r)? as usize;
        let kind = match read_u8(&mut r)? {
            0 => Kind::Euclidean,
            1 => Kind::Hwn,
            2 => Kind::Rown,
            k => return Err(bad(format!("unknown kind {k}"))),
        };
        let flavor = match read_u8(&mut r)? {
            0 => Flavor::Isotropic,
            1 => Flavor::Diagonal,
            2 => Flavor::Full,
            f => return Err(bad(format!("unknown flavor {f}"))),
        };
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = read_u32(&mut r)? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf).map_err(|_| bad("truncated tensor data"))?;
            let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self { model, dim, kind, flavor, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
    Ok(b[0])
}
