//! Binary checkpoint container.
//!
//! ```text
//! magic    8 bytes  "QNTCKPT\0"
//! version  u32
//! config   u32 length + UTF-8 text (free-form, usually TOML)
//! step     u64
//! count    u32
//! count × { u32 name length, name, u32 rows, u32 cols, rows·cols f64 }
//! ```
//! All integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::matrix::DenseMatrix;
use super::{NnError, ParamBank};

pub const MAGIC: &[u8; 8] = b"QNTCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub step: u64,
    pub matrices: ParamBank,
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_bytes(w, ckpt.config.as_bytes())?;
    w.write_all(&ckpt.step.to_le_bytes())?;
    w.write_all(&len_u32(ckpt.matrices.len())?.to_le_bytes())?;
    for (name, m) in &ckpt.matrices {
        write_bytes(w, name.as_bytes())?;
        w.write_all(&len_u32(m.rows())?.to_le_bytes())?;
        w.write_all(&len_u32(m.cols())?.to_le_bytes())?;
        for x in m.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint, NnError> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let config = String::from_utf8(read_bytes(r)?).map_err(|_| NnError::Checkpoint("config is not UTF-8".into()))?;
    let mut step = [0u8; 8];
    read_exact(r, &mut step)?;
    let count = read_u32(r)?;
    let mut matrices = ParamBank::new();
    for _ in 0..count {
        let name = String::from_utf8(read_bytes(r)?).map_err(|_| NnError::Checkpoint("name is not UTF-8".into()))?;
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| NnError::Checkpoint("matrix too large".into()))?;
        let mut raw = Vec::new();
        r.by_ref().take(n as u64 * 8).read_to_end(&mut raw)?;
        if raw.len() != n * 8 {
            return Err(NnError::Checkpoint(format!("truncated matrix `{name}`")));
        }
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if matrices.insert(name.clone(), DenseMatrix::from_vec(rows, cols, data)).is_some() {
            return Err(NnError::Checkpoint(format!("duplicate matrix `{name}`")));
        }
    }
    Ok(Checkpoint { config, step: u64::from_le_bytes(step), matrices })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), NnError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut f, ckpt)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    read_checkpoint(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}

fn len_u32(n: usize) -> Result<u32, NnError> {
    u32::try_from(n).map_err(|_| NnError::Checkpoint(format!("length {n} exceeds u32")))
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> Result<(), NnError> {
    w.write_all(&len_u32(b.len())?.to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), NnError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => NnError::Checkpoint("unexpected end of file".into()),
        _ => NnError::Io(e),
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>, NnError> {
    let n = read_u32(r)? as usize;
    let mut raw = Vec::new();
    r.by_ref().take(n as u64).read_to_end(&mut raw)?;
    if raw.len() != n {
        return Err(NnError::Checkpoint("unexpected end of file".into()));
    }
    Ok(raw)
}
