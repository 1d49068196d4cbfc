//! Binary checkpoint: `DNAC` magic, format version, model config, shape
//! manifest, then little-endian `f64` weights in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::model::{ModelConfig, ModelError, ModelParameters, NamedTensor};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"DNAC";
const VERSION: u32 = 1;

pub fn write_checkpoint<S: Scalar, W: Write>(
    params: &ModelParameters<S>,
    mut w: W,
) -> Result<(), ModelError> {
    let c = params.config();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [
        c.vocab_size,
        c.d_model,
        c.n_layers,
        c.n_heads,
        c.max_seq_len,
    ] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&c.init_seed.to_le_bytes())?;
    w.write_all(&(params.tensors().len() as u32).to_le_bytes())?;
    for t in params.tensors() {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for t in params.tensors() {
        for &x in &t.values {
            w.write_all(&x.to_f64_lossless().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_usize(r: &mut impl Read) -> Result<usize, ModelError> {
    usize::try_from(read_u64(r)?).map_err(|_| ModelError::Checkpoint("dimension overflow".into()))
}

pub fn read_checkpoint<S: Scalar, R: Read>(mut r: R) -> Result<ModelParameters<S>, ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let config = ModelConfig {
        vocab_size: read_usize(&mut r)?,
        d_model: read_usize(&mut r)?,
        n_layers: read_usize(&mut r)?,
        n_heads: read_usize(&mut r)?,
        max_seq_len: read_usize(&mut r)?,
        init_seed: read_u64(&mut r)?,
    };
    config.validate()?;
    let expected = config.manifest();
    let count = read_u32(&mut r)? as usize;
    if count != expected.len() {
        return Err(ModelError::Checkpoint(format!(
            "manifest lists {count} tensors, config implies {}",
            expected.len()
        )));
    }
    let mut manifest = Vec::with_capacity(count);
    for (name, shape) in &expected {
        let len = read_u32(&mut r)? as usize;
        if len > 256 {
            return Err(ModelError::Checkpoint("tensor name too long".into()));
        }
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let got_name = String::from_utf8(buf)
            .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let dims = (0..rank)
            .map(|_| read_usize(&mut r))
            .collect::<Result<Vec<_>, _>>()?;
        if &got_name != name || &dims != shape {
            return Err(ModelError::Checkpoint(format!(
                "manifest entry {got_name} {dims:?} does not match expected {name} {shape:?}"
            )));
        }
        manifest.push((got_name, dims));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in manifest {
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            values.push(S::lit(f64::from_le_bytes(b)));
        }
        tensors.push(NamedTensor {
            name,
            shape,
            values,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ModelError::Checkpoint(
            "trailing bytes after weights".into(),
        ));
    }
    Ok(ModelParameters { config, tensors })
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint<S: Scalar>(
    params: &ModelParameters<S>,
    path: &Path,
) -> Result<(), ModelError> {
    let mut bytes = Vec::new();
    write_checkpoint(params, &mut bytes)?;
    crate::io_util::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<ModelParameters<S>, ModelError> {
    let bytes = fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}
