//! Checkpoint format: a flat sequence of named arrays. Per entry, in
//! little-endian order: u32 name byte length, the UTF-8 name, u32 rank,
//! u32 per dimension, then the row-major values as 32-bit floats.
//! Entries appear in parameter-definition order; a JSON sidecar next to
//! the file carries the run configuration and seed.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real};

pub fn save<F: Real>(store: &ParamStore<F>, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(p.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(p.cols as u32).to_le_bytes());
        for v in p.data.iter() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub struct CheckpointEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn load(path: &Path) -> Result<Vec<CheckpointEntry>> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let mut entries = Vec::new();

    let take = |pos: &mut usize, n: usize| -> Result<std::ops::Range<usize>> {
        if *pos + n > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint {} at byte {}",
                path.display(),
                *pos
            )));
        }
        let r = *pos..*pos + n;
        *pos += n;
        Ok(r)
    };
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        let r = take(pos, 4)?;
        Ok(u32::from_le_bytes(bytes[r].try_into().unwrap()))
    };

    while pos < bytes.len() {
        let name_len = read_u32(&mut pos)? as usize;
        let name_range = take(&mut pos, name_len)?;
        let name = std::str::from_utf8(&bytes[name_range])
            .map_err(|_| Error::Checkpoint(format!("non-UTF-8 name in {}", path.display())))?
            .to_string();
        let rank = read_u32(&mut pos)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut pos)? as usize);
        }
        let count: usize = dims.iter().product();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let r = take(&mut pos, 4)?;
            values.push(f32::from_le_bytes(bytes[r].try_into().unwrap()));
        }
        entries.push(CheckpointEntry { name, dims, values });
    }
    Ok(entries)
}

/// Copies checkpoint values into an already-shaped parameter store.
/// Every parameter must be present with a matching shape.
pub fn apply<F: Real>(store: &mut ParamStore<F>, entries: &[CheckpointEntry]) -> Result<()> {
    use std::collections::HashMap;
    let by_name: HashMap<&str, &CheckpointEntry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    for id in 0..store.len() {
        let (name, rows, cols) = {
            let p = store.get(id);
            (p.name.clone(), p.rows, p.cols)
        };
        let entry = by_name.get(name.as_str()).ok_or_else(|| {
            Error::Checkpoint(format!("parameter {name:?} missing from checkpoint"))
        })?;
        if entry.dims != vec![rows, cols] {
            return Err(Error::Checkpoint(format!(
                "parameter {name:?}: checkpoint shape {:?} does not match configured {:?}",
                entry.dims,
                [rows, cols]
            )));
        }
        let data: Vec<F> = entry.values.iter().map(|&v| F::from_f64(v as f64)).collect();
        store.set_data(id, data);
    }
    if entries.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} arrays but the configuration defines {}",
            entries.len(),
            store.len()
        )));
    }
    Ok(())
}
