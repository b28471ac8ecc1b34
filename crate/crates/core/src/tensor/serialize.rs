//! Binary layout for spherical tensors.
//!
//! ```text
//! "SPHT" | u32 version | u32 n_irreps | n × (u32 l, u32 mult) | u64 rows | rows × width × f64
//! ```
//! All integers and floats are little-endian; data is row-major.

use std::io::{Read, Write};

use super::{IrrepsSpec, SphericalTensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPHT";
pub const VERSION: u32 = 1;

pub fn write_tensor<W: Write>(w: &mut W, t: &SphericalTensor<f64>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_header(w, t.spec(), t.rows())?;
    write_f64s(w, t.data())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<SphericalTensor<f64>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data("not a spherical tensor stream".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported tensor version {version}")));
    }
    let (spec, rows) = read_header(r)?;
    let data = read_f64s(r, rows * spec.width())?;
    SphericalTensor::from_data(spec, rows, data)
}

pub fn to_bytes(t: &SphericalTensor<f64>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(32 + 8 * t.data().len());
    write_tensor(&mut buf, t).expect("writing to memory");
    buf
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<SphericalTensor<f64>> {
    read_tensor(&mut bytes)
}

pub(crate) fn write_header<W: Write>(w: &mut W, spec: &IrrepsSpec, rows: usize) -> Result<()> {
    w.write_all(&(spec.irreps().len() as u32).to_le_bytes())?;
    for &(l, m) in spec.irreps() {
        w.write_all(&(l as u32).to_le_bytes())?;
        w.write_all(&(m as u32).to_le_bytes())?;
    }
    w.write_all(&(rows as u64).to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_header<R: Read>(r: &mut R) -> Result<(IrrepsSpec, usize)> {
    let n = read_u32(r)? as usize;
    if n > 64 {
        return Err(Error::Data(format!("implausible irreps count {n}")));
    }
    let mut irreps = Vec::with_capacity(n);
    for _ in 0..n {
        irreps.push((read_u32(r)? as usize, read_u32(r)? as usize));
    }
    let spec = IrrepsSpec::new(irreps).map_err(|e| Error::Data(e.to_string()))?;
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let rows = u64::from_le_bytes(b) as usize;
    if rows.checked_mul(spec.width()).map_or(true, |n| n > (1 << 32)) {
        return Err(Error::Data(format!("implausible row count {rows}")));
    }
    Ok((spec, rows))
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * data.len());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let spec = IrrepsSpec::new(vec![(0, 2), (1, 1)]).unwrap();
        let t = SphericalTensor::from_data(spec, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let b = to_bytes(&t);
        assert_eq!(&b[0..4], b"SPHT");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[28..36].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(b[36..44].try_into().unwrap()), 1.0);
        assert_eq!(b.len(), 36 + 5 * 8);
    }

    #[test]
    fn corrupt_streams_are_data_errors() {
        assert!(matches!(from_bytes(b"XXXX"), Err(Error::Data(_))));
        let spec = IrrepsSpec::uniform(1, 1);
        let b = to_bytes(&SphericalTensor::zeros(spec, 3));
        assert!(from_bytes(&b[..b.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(lmax in 0usize..4, mult in 1usize..4, rows in 0usize..5, seed in any::<u64>()) {
            let spec = IrrepsSpec::uniform(lmax, mult);
            let n = rows * spec.width();
            let data: Vec<f64> = (0..n).map(|i| ((seed as f64) * 1e-3 + i as f64).sin()).collect();
            let t = SphericalTensor::from_data(spec, rows, data).unwrap();
            prop_assert_eq!(from_bytes(&to_bytes(&t)).unwrap(), t);
        }
    }
}
