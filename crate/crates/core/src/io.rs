//! Little helpers for the binary container formats.

use std::io::Read;

use crate::error::{Error, Result};

pub(crate) fn read_exact_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(n.min(1 << 24));
    let got = r.take(n as u64).read_to_end(&mut buf)?;
    if got != n {
        return Err(Error::Truncated { expected: n, found: got });
    }
    Ok(buf)
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let b = read_exact_vec(r, 4)?;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let b = read_exact_vec(r, 8)?;
    Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
}
