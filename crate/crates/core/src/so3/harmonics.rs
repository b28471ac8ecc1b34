//! Real orthonormal spherical harmonics.
//!
//! Convention: order index runs `m = -l..=l`, stored at offset `m + l`.
//! For `m > 0` the harmonic carries `cos(mφ)`, for `m < 0` it carries
//! `sin(|m|φ)`, and no Condon–Shortley phase is applied. With this choice
//! the degree-1 block is `√(3/4π) · (y, z, x)`.

use super::rotation::Vec3;
use super::MAX_DEGREE;
use crate::{Error, Result};

const UNIT_TOL: f64 = 1e-9;

/// Number of coefficients for all degrees `0..=lmax`.
pub const fn num_coeffs(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 1)
}

/// `[Y_l^{-l}(u), …, Y_l^{l}(u)]` for a unit direction `u`.
pub fn real_sph_harmonics(l: usize, u: Vec3) -> Result<Vec<f64>> {
    if l > MAX_DEGREE {
        return Err(Error::Capability(format!("degree {l} exceeds supported maximum {MAX_DEGREE}")));
    }
    let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::Domain(format!("direction has norm {n}, expected 1")));
    }
    let mut all = vec![0.0; num_coeffs(l)];
    sph_harmonics_upto(l, u, &mut all);
    Ok(all[l * l..].to_vec())
}

/// Fills `out[l² + m + l] = Y_l^m(u)` for every `l ≤ lmax`.
///
/// `u` is assumed to be unit length; no check is made. Degrees above zero
/// are evaluated through homogeneous polynomials in `(x, y, z)`.
pub fn sph_harmonics_upto(lmax: usize, u: Vec3, out: &mut [f64]) {
    debug_assert!(out.len() >= num_coeffs(lmax));
    let [x, y, z] = u;
    // Q[l][m] with P_l^m(z) = sin^m(θ) Q_l^m(z), no Condon–Shortley phase
    let mut q = [[0.0f64; MAX_DEGREE + 1]; MAX_DEGREE + 1];
    for m in 0..=lmax {
        q[m][m] = double_factorial(2 * m as i64 - 1);
        if m < lmax {
            q[m + 1][m] = z * (2 * m + 1) as f64 * q[m][m];
        }
        for l in (m + 2)..=lmax {
            q[l][m] = ((2 * l - 1) as f64 * z * q[l - 1][m] - (l + m - 1) as f64 * q[l - 2][m]) / (l - m) as f64;
        }
    }
    // (x + iy)^m = C_m + i S_m
    let mut cs = [(1.0f64, 0.0f64); MAX_DEGREE + 1];
    for m in 1..=lmax {
        let (c, s) = cs[m - 1];
        cs[m] = (x * c - y * s, x * s + y * c);
    }
    let four_pi = 4.0 * std::f64::consts::PI;
    for l in 0..=lmax {
        let base = l * l + l;
        let k0 = ((2 * l + 1) as f64 / four_pi).sqrt();
        out[base] = k0 * q[l][0];
        for m in 1..=l {
            let k = k0 * (factorial_ratio(l - m, l + m) * 2.0).sqrt() * q[l][m];
            out[base + m] = k * cs[m].0;
            out[base - m] = k * cs[m].1;
        }
    }
}

fn double_factorial(n: i64) -> f64 {
    let mut acc = 1.0;
    let mut k = n;
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

/// `a! / b!` for `a ≤ b`.
fn factorial_ratio(a: usize, b: usize) -> f64 {
    let mut acc = 1.0;
    for k in (a + 1)..=b {
        acc /= k as f64;
    }
    acc
}
