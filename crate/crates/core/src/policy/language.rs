use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::contract;
use crate::{Error, Result};

/// Frozen instruction encoder: a fixed table of mutually orthogonal rows.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    ids: Vec<String>,
    d_k: usize,
    table: Vec<f64>,
}

pub const DEFAULT_D_K: usize = 64;
const TABLE_SEED: u64 = 0x1a_6e_75;

impl Vocabulary {
    /// Rows have norm `√d_k`.
    pub fn new(ids: Vec<String>, d_k: usize) -> Result<Self> {
        contract!(!ids.is_empty() && ids.len() <= d_k, "vocabulary of {} ids needs 1..={d_k} entries", ids.len());
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        contract!(sorted.len() == ids.len(), "vocabulary ids must be unique");
        let mut rng = ChaCha8Rng::seed_from_u64(TABLE_SEED);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(ids.len());
        while rows.len() < ids.len() {
            let mut v: Vec<f64> = (0..d_k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for r in &rows {
                let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(x, y)| *x -= d * y);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                rows.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        let s = (d_k as f64).sqrt();
        let table = rows.into_iter().flatten().map(|x| x * s).collect();
        Ok(Self { ids, d_k, table })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn d_k(&self) -> usize {
        self.d_k
    }

    pub fn index(&self, id: &str) -> Result<usize> {
        self.ids.iter().position(|s| s == id).ok_or_else(|| Error::Vocabulary(id.to_string()))
    }

    pub fn embed(&self, id: &str) -> Result<Vec<f64>> {
        let i = self.index(id)?;
        Ok(self.table[i * self.d_k..(i + 1) * self.d_k].to_vec())
    }
}
