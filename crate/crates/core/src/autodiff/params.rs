use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;

use crate::tensor::serialize::{read_f64s, read_header, read_u32, write_f64s, write_header};
use crate::tensor::IrrepsSpec;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"EQCK";
const VERSION: u32 = 1;

/// A named dense parameter matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Parameters keyed by stage path, e.g. `enc.l0.b1.ffn.w1`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    blocks: BTreeMap<String, ParamBlock>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::Contract(format!("parameter {name}: {} values for shape {rows}x{cols}", data.len())));
        }
        if self.blocks.contains_key(&name) {
            return Err(Error::Contract(format!("parameter {name} defined twice")));
        }
        self.blocks.insert(name, ParamBlock { rows, cols, data });
        Ok(())
    }

    /// Uniform in `[-scale, scale]`.
    pub fn insert_uniform<R: Rng + ?Sized>(&mut self, name: impl Into<String>, rows: usize, cols: usize, scale: f64, rng: &mut R) -> Result<()> {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        self.insert(name, rows, cols, data)
    }

    pub fn insert_const(&mut self, name: impl Into<String>, rows: usize, cols: usize, value: f64) -> Result<()> {
        self.insert(name, rows, cols, vec![value; rows * cols])
    }

    pub fn get(&self, name: &str) -> Result<&ParamBlock> {
        self.blocks.get(name).ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamBlock> {
        self.blocks.get_mut(name).ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.blocks.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamBlock)> {
        self.blocks.iter()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks.values().map(|b| b.data.len()).sum()
    }

    /// Names under a stage path prefix.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a String> + 'a {
        self.blocks.keys().filter(move |k| k.starts_with(prefix))
    }

    /// Checkpoint stream: `"EQCK" | u32 version | u32 count`, then per block
    /// `u32 name_len | name | u32 n_irreps (=1) | u32 0 | u32 cols | u64 rows | f64 data`.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.blocks.len() as u32).to_le_bytes())?;
        for (name, b) in &self.blocks {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            write_header(w, &IrrepsSpec::scalars(b.cols), b.rows)?;
            write_f64s(w, &b.data)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Data("not a checkpoint stream".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            if len > 4096 {
                return Err(Error::Data(format!("implausible parameter name length {len}")));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Data("parameter name is not UTF-8".into()))?;
            let (spec, rows) = read_header(r)?;
            if spec.lmax() != 0 {
                return Err(Error::Data(format!("parameter {name} is not a scalar block")));
            }
            let cols = spec.width();
            let data = read_f64s(r, rows * cols)?;
            store.insert(name, rows, cols, data).map_err(|e| Error::Data(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.insert_uniform("enc.l0.w", 3, 4, 0.5, &mut rng).unwrap();
        s.insert_const("head.b", 1, 2, 1.0).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], b"EQCK");
        assert_eq!(ParamStore::from_bytes(&bytes).unwrap(), s);
        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn rejects_bad_blocks() {
        let mut s = ParamStore::new();
        assert!(s.insert("a", 2, 2, vec![0.0; 3]).is_err());
        s.insert("a", 1, 1, vec![0.0]).unwrap();
        assert!(s.insert("a", 1, 1, vec![0.0]).is_err());
        assert!(s.get("b").is_err());
    }
}
