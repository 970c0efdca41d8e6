//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "CPCFLCKP"
//! version    u32       1
//! arch_len   u32       byte length of the JSON-encoded ArchConfig
//! arch       arch_len bytes
//! count      u32       number of tensors
//! repeated count times:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (u64 each)
//!   data     product(dims) x f64
//! ```
//!
//! Tensors appear in [`ModelParams::named_state`] order; loading rebuilds
//! the layer structure from the architecture and checks every name and
//! shape.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_exact_vec, read_u32, read_u64};
use crate::nn::model::{build_model, ArchConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CPCFLCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &ModelParams, mut w: W) -> Result<()> {
    let arch = serde_json::to_vec(&model.arch)?;
    let state = model.named_state();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(arch.len() as u32).to_le_bytes())?;
    w.write_all(&arch)?;
    w.write_all(&(state.len() as u32).to_le_bytes())?;
    for (name, t) in state {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint shorter than its header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let arch_len = read_u32(&mut r)? as usize;
    let arch: ArchConfig = serde_json::from_slice(&read_exact_vec(&mut r, arch_len)?)?;
    let mut model = build_model(&arch, 0)?;
    let count = read_u32(&mut r)? as usize;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_state()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if count != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, architecture needs {}",
            expected.len()
        )));
    }
    let mut slots = model.state_mut();
    for ((name, shape), slot) in expected.iter().zip(slots.iter_mut()) {
        let name_len = read_u32(&mut r)? as usize;
        let got = String::from_utf8(read_exact_vec(&mut r, name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        if &got != name {
            return Err(Error::Format(format!("expected tensor {name}, found {got}")));
        }
        let ndim = read_u32(&mut r)? as usize;
        let dims = (0..ndim)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(Error::dim(format!("checkpoint tensor {name}"), format!("{shape:?}"), format!("{dims:?}")));
        }
        let bytes = read_exact_vec(&mut r, slot.len() * 8)?;
        for (v, chunk) in slot.data_mut().iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    drop(slots);
    Ok(model)
}

pub fn save_checkpoint(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    if let Some(dir) = path.as_ref().parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let bytes = fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{PretrainMethod, ProjectionConfig};

    #[test]
    fn round_trip_is_bitwise() {
        let mut arch = ArchConfig::new(6, 3);
        arch.encoder_widths = vec![5];
        arch.representation_dim = 4;
        arch.projection = Some(ProjectionConfig {
            method: PretrainMethod::Byol,
            projector_dim: 8,
            predictor_hidden: Some(2),
        });
        let m = build_model(&arch, 77).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let m = build_model(&ArchConfig::new(3, 2), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Format(_))));
        let cut = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(cut), Err(Error::Truncated { .. })));
    }
}
