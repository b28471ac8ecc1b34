//! Real Wigner D-matrices.
//!
//! Blocks are built by degree recursion from the `l = 1` block (Ivanic and
//! Ruedenberg's recurrence for real harmonics). They satisfy
//! `Y_l(R u) = D^l(R) · Y_l(u)` in the convention of [`super::harmonics`].

use super::rotation::Rotation;
use super::MAX_DEGREE;
use crate::{Error, Result};

/// Orthogonal `(2l+1)×(2l+1)` block, row-major, rows and columns indexed by
/// order `m = -l..=l`.
#[derive(Clone, Debug, PartialEq)]
pub struct WignerBlock {
    l: usize,
    data: Vec<f64>,
}

impl WignerBlock {
    pub fn identity(l: usize) -> Self {
        let d = 2 * l + 1;
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        Self { l, data }
    }

    pub fn degree(&self) -> usize {
        self.l
    }

    pub fn dim(&self) -> usize {
        2 * self.l + 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Entry at orders `(m, n)`, each in `-l..=l`.
    #[inline]
    pub fn get(&self, m: i64, n: i64) -> f64 {
        let l = self.l as i64;
        let d = self.dim();
        self.data[(m + l) as usize * d + (n + l) as usize]
    }

    #[inline]
    fn set(&mut self, m: i64, n: i64, v: f64) {
        let l = self.l as i64;
        let d = self.dim();
        self.data[(m + l) as usize * d + (n + l) as usize] = v;
    }

    /// `out = D · v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let row = &self.data[i * d..(i + 1) * d];
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    pub fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply(v, &mut out);
        out
    }

    pub fn matmul(&self, other: &WignerBlock) -> WignerBlock {
        assert_eq!(self.l, other.l);
        let d = self.dim();
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                for j in 0..d {
                    data[i * d + j] += a * other.data[k * d + j];
                }
            }
        }
        WignerBlock { l: self.l, data }
    }

    pub fn transpose(&self) -> WignerBlock {
        let d = self.dim();
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                data[j * d + i] = self.data[i * d + j];
            }
        }
        WignerBlock { l: self.l, data }
    }

    /// Largest entry of `DᵀD − I` in absolute value.
    pub fn orthogonality_error(&self) -> f64 {
        let p = self.transpose().matmul(self);
        let d = self.dim();
        (0..d * d)
            .map(|k| (p.data[k] - if k / d == k % d { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &WignerBlock) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Wigner block of degree `l` for rotation `r`.
pub fn wigner_d(l: usize, r: &Rotation) -> Result<WignerBlock> {
    if l > MAX_DEGREE {
        return Err(Error::Capability(format!("Wigner degree {l} exceeds supported maximum {MAX_DEGREE}")));
    }
    let mut blocks = wigner_blocks(l, r);
    Ok(blocks.pop().expect("at least degree 0"))
}

/// All blocks `D^0 … D^lmax` for `r`.
///
/// Panics if `lmax > MAX_DEGREE`; use [`wigner_d`] for checked access.
pub fn wigner_blocks(lmax: usize, r: &Rotation) -> Vec<WignerBlock> {
    assert!(lmax <= MAX_DEGREE, "degree {lmax} exceeds {MAX_DEGREE}");
    let mut out = Vec::with_capacity(lmax + 1);
    out.push(WignerBlock::identity(0));
    if lmax == 0 {
        return out;
    }
    let m = r.matrix();
    // real l=1 basis is ordered (y, z, x)
    let perm = [1usize, 2, 0];
    let mut d1 = WignerBlock::identity(1);
    for (i, &pi) in perm.iter().enumerate() {
        for (j, &pj) in perm.iter().enumerate() {
            d1.data[i * 3 + j] = m[pi][pj];
        }
    }
    out.push(d1);
    for l in 2..=lmax {
        let next = next_degree(&out[1], &out[l - 1], l);
        out.push(next);
    }
    out
}

fn next_degree(r1: &WignerBlock, prev: &WignerBlock, l: usize) -> WignerBlock {
    let li = l as i64;
    let mut out = WignerBlock { l, data: vec![0.0; (2 * l + 1) * (2 * l + 1)] };
    for m in -li..=li {
        for n in -li..=li {
            let (u, v, w) = uvw_coeffs(m, n, li);
            let mut val = 0.0;
            if u != 0.0 {
                val += u * p_term(0, m, n, li, r1, prev);
            }
            if v != 0.0 {
                val += v * v_term(m, n, li, r1, prev);
            }
            if w != 0.0 {
                val += w * w_term(m, n, li, r1, prev);
            }
            out.set(m, n, val);
        }
    }
    out
}

fn uvw_coeffs(m: i64, n: i64, l: i64) -> (f64, f64, f64) {
    let d = if m == 0 { 1.0 } else { 0.0 };
    let denom = if n.abs() == l { (2 * l * (2 * l - 1)) as f64 } else { ((l + n) * (l - n)) as f64 };
    let am = m.abs();
    let u = (((l + m) * (l - m)) as f64 / denom).sqrt();
    let v = 0.5 * ((1.0 + d) * ((l + am - 1) * (l + am)) as f64 / denom).sqrt() * (1.0 - 2.0 * d);
    let w = -0.5 * (((l - am - 1) * (l - am)) as f64 / denom).max(0.0).sqrt() * (1.0 - d);
    (u, v, w)
}

fn p_term(i: i64, a: i64, b: i64, l: i64, r1: &WignerBlock, prev: &WignerBlock) -> f64 {
    if b == l {
        r1.get(i, 1) * prev.get(a, l - 1) - r1.get(i, -1) * prev.get(a, -l + 1)
    } else if b == -l {
        r1.get(i, 1) * prev.get(a, -l + 1) + r1.get(i, -1) * prev.get(a, l - 1)
    } else {
        r1.get(i, 0) * prev.get(a, b)
    }
}

fn v_term(m: i64, n: i64, l: i64, r1: &WignerBlock, prev: &WignerBlock) -> f64 {
    if m == 0 {
        p_term(1, 1, n, l, r1, prev) + p_term(-1, -1, n, l, r1, prev)
    } else if m > 0 {
        let d: f64 = if m == 1 { 1.0 } else { 0.0 };
        p_term(1, m - 1, n, l, r1, prev) * (1.0 + d).sqrt() - p_term(-1, -m + 1, n, l, r1, prev) * (1.0 - d)
    } else {
        let d: f64 = if m == -1 { 1.0 } else { 0.0 };
        p_term(1, m + 1, n, l, r1, prev) * (1.0 - d) + p_term(-1, -m - 1, n, l, r1, prev) * (1.0 + d).sqrt()
    }
}

fn w_term(m: i64, n: i64, l: i64, r1: &WignerBlock, prev: &WignerBlock) -> f64 {
    if m > 0 {
        p_term(1, m + 1, n, l, r1, prev) + p_term(-1, -m - 1, n, l, r1, prev)
    } else {
        p_term(1, m - 1, n, l, r1, prev) - p_term(-1, -m + 1, n, l, r1, prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::harmonics::real_sph_harmonics;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dir(rng: &mut impl Rng) -> [f64; 3] {
        let r = Rotation::random(rng);
        r.apply([0.0, 0.0, 1.0])
    }

    #[test]
    fn degree_zero_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = wigner_d(0, &Rotation::random(&mut rng)).unwrap();
        assert_eq!(d.as_slice(), &[1.0]);
    }

    #[test]
    fn degree_one_about_z_is_rotation_matrix_in_yzx_order() {
        let theta = 0.4f64;
        let d = wigner_d(1, &Rotation::rot_z(theta)).unwrap();
        let (s, c) = theta.sin_cos();
        // (y, z, x) rows: y' = s x + c y, z' = z, x' = c x - s y
        let expect = [c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c];
        for (a, b) in d.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn intertwining_identity_all_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let r = Rotation::random(&mut rng);
            let u = random_dir(&mut rng);
            let ru = r.apply(u);
            for (l, d) in wigner_blocks(MAX_DEGREE, &r).iter().enumerate() {
                let lhs = real_sph_harmonics(l, ru).unwrap();
                let rhs = d.apply_vec(&real_sph_harmonics(l, u).unwrap());
                let err = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-9, "l={l} err={err}");
            }
        }
    }

    #[test]
    fn orthogonal_and_homomorphic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let a = Rotation::random(&mut rng);
            let b = Rotation::random(&mut rng);
            let da = wigner_blocks(MAX_DEGREE, &a);
            let db = wigner_blocks(MAX_DEGREE, &b);
            let dab = wigner_blocks(MAX_DEGREE, &a.compose(&b));
            for l in 0..=MAX_DEGREE {
                assert!(da[l].orthogonality_error() < 1e-10);
                assert!(dab[l].max_abs_diff(&da[l].matmul(&db[l])) < 1e-9);
            }
        }
    }

    #[test]
    fn inverse_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let r = Rotation::random(&mut rng);
        let d = wigner_d(3, &r).unwrap();
        let di = wigner_d(3, &r.inverse()).unwrap();
        assert!(d.transpose().max_abs_diff(&di) < 1e-10);
    }

    #[test]
    fn rejects_unsupported_degree() {
        assert!(matches!(wigner_d(MAX_DEGREE + 1, &Rotation::identity()), Err(Error::Capability(_))));
    }
}
