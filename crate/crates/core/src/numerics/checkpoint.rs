//! Checkpoint container: `DQA-CKPT v1`.
//!
//! Layout: the ASCII header line, then one record per tensor —
//! name length (u32 LE), name bytes (UTF-8), rank (u32 LE), dims (u32 LE
//! each), payload (f64 LE, row-major). Records run until end of file.
//! Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::{ParamSet, Tensor};
use super::NumericsError;

const HEADER: &[u8] = b"DQA-CKPT v1\n";

pub fn write_checkpoint(path: &Path, params: &ParamSet) -> Result<(), NumericsError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(HEADER)?;
    for p in params.iter() {
        let t = p.tensor.borrow();
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = t.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>, NumericsError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 12];
    r.read_exact(&mut header)
        .map_err(|_| NumericsError::Checkpoint("file too short for header".into()))?;
    if header != *HEADER {
        return Err(NumericsError::Checkpoint(format!(
            "bad header {:?}",
            String::from_utf8_lossy(&header)
        )));
    }
    let mut out = Vec::new();
    loop {
        let mut len4 = [0u8; 4];
        match r.read_exact(&mut len4) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len4) as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| NumericsError::Checkpoint("tensor name is not UTF-8".into()))?;
        r.read_exact(&mut len4)?;
        let rank = u32::from_le_bytes(len4) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut len4)?;
            shape.push(u32::from_le_bytes(len4) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut f8 = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut f8)?;
            data.push(f64::from_le_bytes(f8));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Copies checkpoint records into an existing parameter set. Every record
/// must match a registered parameter in name and shape, and every parameter
/// must be covered.
pub fn load_into(params: &ParamSet, records: Vec<(String, Tensor)>) -> Result<(), NumericsError> {
    if records.len() != params.len() {
        return Err(NumericsError::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            records.len(),
            params.len()
        )));
    }
    for (name, tensor) in records {
        let handle = params.get(&name).ok_or_else(|| {
            NumericsError::Checkpoint(format!("unexpected tensor {name:?} in checkpoint"))
        })?;
        let mut t = handle.borrow_mut();
        if t.shape() != tensor.shape() {
            return Err(NumericsError::Checkpoint(format!(
                "shape mismatch for {name:?}: checkpoint {:?}, model {:?}",
                tensor.shape(),
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(tensor.data());
    }
    Ok(())
}
