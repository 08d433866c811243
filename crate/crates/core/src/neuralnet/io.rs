//! Parameter files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic "MISRPRM\0" | version | tensor count
//! per tensor: name length | name bytes | 4 dimensions
//! values: every tensor's f32 values (little-endian) in table order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::network::{Architecture, NetworkParams};
use super::NnError;

pub const MAGIC: &[u8; 8] = b"MISRPRM\0";
pub const VERSION: u32 = 1;

pub fn write_params(params: &NetworkParams<f32>) -> Vec<u8> {
    let tensors = params.tensors();
    let mut out = Vec::with_capacity(64 + 4 * params.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, _) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
    }
    for (_, _, values) in &tensors {
        for v in *values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(NnError::Format(format!("truncated while reading {what}")));
        };
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32, NnError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("four bytes")))
    }
}

/// Parses a parameter file for `arch`. The shape table must match the
/// architecture exactly.
pub fn read_params(bytes: &[u8], arch: Architecture) -> Result<NetworkParams<f32>, NnError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(NnError::Format("not a parameter file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(NnError::Format(format!(
            "unsupported format version {version}, expected {VERSION}"
        )));
    }
    let mut params = NetworkParams::<f32>::zeros(arch);
    let expected: Vec<(&str, [usize; 4])> =
        params.tensors().iter().map(|(n, s, _)| (*n, *s)).collect();
    let count = r.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(NnError::Shape(format!(
            "file has {count} tensors, the network has {}",
            expected.len()
        )));
    }
    for (want_name, want_shape) in &expected {
        let len = r.u32("name length")? as usize;
        let name = r.take(len, "tensor name")?;
        let name = std::str::from_utf8(name)
            .map_err(|_| NnError::Format("tensor name is not UTF-8".into()))?;
        if name != *want_name {
            return Err(NnError::Shape(format!("expected tensor {want_name}, found {name}")));
        }
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32("tensor shape")? as usize;
        }
        if shape != *want_shape {
            return Err(NnError::Shape(format!(
                "{name} has shape {shape:?} in the file, the network needs {want_shape:?}"
            )));
        }
    }
    for buf in params.tensors_mut() {
        for v in buf.iter_mut() {
            let b = r.take(4, "parameter values")?;
            *v = f32::from_le_bytes(b.try_into().expect("four bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(NnError::Format(format!(
            "{} trailing bytes after the parameter values",
            bytes.len() - r.pos
        )));
    }
    Ok(params)
}

pub fn save_params(path: impl AsRef<Path>, params: &NetworkParams<f32>) -> Result<(), NnError> {
    let mut file = fs::File::create(path)?;
    file.write_all(&write_params(params))?;
    file.sync_all()?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<NetworkParams<f32>, NnError> {
    read_params(&fs::read(path)?, Architecture::MISR)
}
