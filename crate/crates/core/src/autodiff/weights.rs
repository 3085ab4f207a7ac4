//! SGW1 weights container.
//!
//! Layout (little-endian): magic `SGW1`, `u32` parameter count, then per
//! parameter `u16` name length, UTF-8 name, `u8` rank, `u32` dims, `f64` data.

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SGW1";

pub fn write_weights<W: Write>(mut w: W, entries: &[(String, Tensor)]) -> Result<()> {
    let io = |e| Error::io("writing weights", e);
    w.write_all(MAGIC).map_err(io)?;
    let count = u32::try_from(entries.len()).map_err(|_| Error::Weights("too many parameters".into()))?;
    w.write_all(&count.to_le_bytes()).map_err(io)?;
    for (name, t) in entries {
        let nb = name.as_bytes();
        let len = u16::try_from(nb.len()).map_err(|_| Error::Weights(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes()).map_err(io)?;
        w.write_all(nb).map_err(io)?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Weights(format!("rank too large: {name}")))?;
        w.write_all(&[rank]).map_err(io)?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Weights(format!("dimension too large: {name}")))?;
            w.write_all(&d.to_le_bytes()).map_err(io)?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_weights<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    fn take<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        r.read_exact(&mut buf)
            .map_err(|e| Error::Weights(format!("truncated file ({e})")))?;
        Ok(buf)
    }
    if &take::<_, 4>(&mut r)? != MAGIC {
        return Err(Error::Weights("bad magic, expected SGW1".into()));
    }
    let count = u32::from_le_bytes(take(&mut r)?);
    let mut out = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let len = u16::from_le_bytes(take(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Weights(format!("truncated name ({e})")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Weights("name is not UTF-8".into()))?;
        let rank = take::<_, 1>(&mut r)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut r)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(take(&mut r)?));
        }
        let t = Tensor::new(&shape, data).map_err(|e| Error::Weights(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io("reading weights", e))? != 0 {
        return Err(Error::Weights("trailing bytes after last parameter".into()));
    }
    Ok(out)
}

pub fn save_weights(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    write_weights(&mut buf, entries)?;
    std::fs::write(path, buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_weights(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    read_weights(bytes.as_slice())
}
