//! Binary checkpoint format for named tensors.
//!
//! Layout: magic `CLRC`, format version (u32 LE), then one record per tensor:
//! name length (u32 LE), UTF-8 name, rank (u32 LE), dims (u64 LE each),
//! values (f64 LE each), repeated until end of file. Values are always
//! stored as f64; converting f32 values up and back is lossless.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::params::ParamStore;
use super::real::Real;
use super::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CLRC";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads version {VERSION})")]
    VersionMismatch { found: u32 },
    #[error("truncated checkpoint while reading {context}")]
    Truncated { context: &'static str },
    #[error("checkpoint contains invalid data: {0}")]
    Corrupt(String),
}

/// Write all tensors of `store` to `path`. The file is written to a sibling
/// temp path and renamed into place so a crash cannot leave a partial file.
pub fn save<F: Real>(path: &Path, store: &ParamStore<F>) -> Result<(), CheckpointError> {
    let tmp = temp_sibling(path);
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for (name, tensor) in store.iter() {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
            for &d in tensor.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in tensor.data() {
                w.write_all(&x.to_f64().to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a checkpoint back into a fresh store.
pub fn load<F: Real>(path: &Path) -> Result<ParamStore<F>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version });
    }
    let mut store = ParamStore::new();
    loop {
        let mut len_buf = [0u8; 4];
        match r.read(&mut len_buf)? {
            0 => break, // clean end of file
            4 => {}
            n => {
                // partial read at a record boundary: pull the rest or fail
                let mut rest = vec![0u8; 4 - n];
                read_exact(&mut r, &mut rest, "record header")?;
                len_buf[n..].copy_from_slice(&rest);
            }
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, "tensor name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| CheckpointError::Corrupt(format!("tensor name not UTF-8: {e}")))?;
        let rank = read_u32(&mut r, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut dim = [0u8; 8];
            read_exact(&mut r, &mut dim, "dims")?;
            shape.push(u64::from_le_bytes(dim) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut val = [0u8; 8];
            read_exact(&mut r, &mut val, "values")?;
            data.push(F::from_f64(f64::from_le_bytes(val)));
        }
        let tensor = Tensor::from_vec(&shape, data)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        store
            .insert(&name, tensor)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    }
    Ok(store)
}

fn temp_sibling(path: &Path) -> std::path::PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".to_string());
    name.push_str(".tmp");
    path.with_file_name(name)
}

fn read_exact<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    context: &'static str,
) -> Result<(), CheckpointError> {
    r.read_exact(buf)
        .map_err(|_| CheckpointError::Truncated { context })
}

fn read_u32<R: Read>(r: &mut R, context: &'static str) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, context)?;
    Ok(u32::from_le_bytes(buf))
}
