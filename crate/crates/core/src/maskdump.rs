//! Binary dump of a [`SubnetMask`] for offline churn analysis.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic       4 bytes   "BDMK"
//! version     u32       1
//! step        u64
//! tensors     u32
//! per tensor:
//!   name_len  u32, name (UTF-8, name_len bytes)
//!   rank      u32, dims (rank × u64)
//!   bits      ceil(numel / 8) bytes; element i is bit (i % 8) of byte i / 8
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::select::SubnetMask;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"BDMK";
const VERSION: u32 = 1;

pub fn write_mask<W: Write>(out: &mut W, step: u64, mask: &SubnetMask) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&step.to_le_bytes())?;
    let params = mask.as_params();
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut packed = vec![0u8; t.len().div_ceil(8)];
        for (i, &v) in t.data().iter().enumerate() {
            if v == 1.0 {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        out.write_all(&packed)?;
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::invalid(format!("truncated mask dump: {e}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

/// Returns the recorded step and the mask.
pub fn read_mask<R: Read>(input: &mut R) -> Result<(u64, SubnetMask)> {
    if &read_array::<4>(input)? != MAGIC {
        return Err(Error::invalid("not a mask dump (bad magic)"));
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(Error::invalid(format!("unsupported mask dump version {version}")));
    }
    let step = read_u64(input)?;
    let count = read_u32(input)?;
    let mut layout = ParamSet::new();
    let mut bits = Vec::new();
    for _ in 0..count {
        let name_len = read_u32(input)? as usize;
        let mut name = vec![0u8; name_len];
        input
            .read_exact(&mut name)
            .map_err(|e| Error::invalid(format!("truncated mask dump: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::invalid("tensor name is not UTF-8"))?;
        let rank = read_u32(input)?;
        let shape = (0..rank)
            .map(|_| read_u64(input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let t = Tensor::zeros(&shape)?;
        let mut packed = vec![0u8; t.len().div_ceil(8)];
        input
            .read_exact(&mut packed)
            .map_err(|e| Error::invalid(format!("truncated mask dump: {e}")))?;
        bits.extend((0..t.len()).map(|i| packed[i / 8] >> (i % 8) & 1 == 1));
        layout.push(name, t)?;
    }
    Ok((step, SubnetMask::from_bits(&layout, &bits)?))
}
