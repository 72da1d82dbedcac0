//! Flat binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            4 bytes  "NKCP"
//! version          u32
//! layer_count      u32
//! repeat until EOF:
//!   name_len       u32
//!   name           name_len bytes, UTF-8
//!   rank           u32
//!   dims           rank * u32
//!   payload        product(dims) * f64, little-endian
//! ```

use std::io::{Read, Write};

use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NKCP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedParam {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Self {
        NamedParam {
            name: name.into(),
            dims,
            data,
        }
    }
}

pub fn write_checkpoint(
    out: &mut impl Write,
    layer_count: u32,
    params: &[NamedParam],
) -> Result<()> {
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&layer_count.to_le_bytes())?;
    for p in params {
        let expected: usize = p.dims.iter().product();
        if expected != p.data.len() {
            return Err(Error::Checkpoint(format!(
                "parameter {} claims {:?} = {expected} values but has {}",
                p.name,
                p.dims,
                p.data.len()
            )));
        }
        let name = p.name.as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(p.dims.len() as u32).to_le_bytes())?;
        for &d in &p.dims {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &p.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Reads a checkpoint back; returns the layer count and the parameters
/// in file order.
pub fn read_checkpoint(input: &mut impl Read) -> Result<(u32, Vec<NamedParam>)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let layer_count = read_u32(input)?;
    let mut params = Vec::new();
    loop {
        let mut len_buf = [0u8; 4];
        match input.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Checkpoint(format!("parameter name is not UTF-8: {e}")))?;
        let rank = read_u32(input)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(input)? as usize);
        }
        let count: usize = dims.iter().product();
        let mut data = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            input.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        params.push(NamedParam { name, dims, data });
    }
    Ok((layer_count, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let params = vec![
            NamedParam::new("cell.update.w", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            NamedParam::new("readout.bias", vec![2], vec![-0.5, 0.25]),
        ];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, 2, &params).unwrap();
        let (layers, back) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(layers, 2);
        assert_eq!(back, params);
    }

    #[test]
    fn header_layout_is_stable() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, 3, &[]).unwrap();
        assert_eq!(&buf[..4], b"NKCP");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), CHECKPOINT_VERSION);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, 1, &[]).unwrap();
        buf[0] = b'X';
        assert!(read_checkpoint(&mut buf.as_slice()).is_err());

        let mut buf = Vec::new();
        write_checkpoint(&mut buf, 1, &[]).unwrap();
        buf[4] = 99;
        assert!(read_checkpoint(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn rejects_dim_payload_mismatch() {
        let bad = NamedParam::new("w", vec![2, 2], vec![1.0]);
        let mut buf = Vec::new();
        assert!(write_checkpoint(&mut buf, 1, &[bad]).is_err());
    }
}
