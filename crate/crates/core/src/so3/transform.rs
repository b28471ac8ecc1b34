//! Spherical and SO(3) Fourier transforms by direct evaluation.

use super::grid::S2Grid;
use super::harmonics::{num_coeffs, sph_harmonics_upto};
use super::rotation::Rotation;
use super::wigner::wigner_blocks;
use super::MAX_DEGREE;
use crate::{Error, Result};

/// Inverse spherical transform: `f(u) = Σ_l Σ_m c_l^m Y_l^m(u)` at each grid node.
///
/// `coeffs[l]` holds the `2l+1` coefficients of degree `l`.
pub fn s2_synthesize(coeffs: &[Vec<f64>], grid: &S2Grid) -> Vec<f64> {
    let lmax = coeffs.len().saturating_sub(1);
    let mut buf = vec![0.0; num_coeffs(lmax)];
    grid.directions()
        .iter()
        .map(|u| {
            sph_harmonics_upto(lmax, *u, &mut buf);
            coeffs.iter().flatten().zip(&buf).map(|(c, y)| c * y).sum()
        })
        .collect()
}

/// Forward transform `c_l^m = Σ_i w_i f(u_i) Y_l^m(u_i)`.
///
/// The grid must integrate degree `2·lmax` exactly.
pub fn s2_analyze(values: &[f64], grid: &S2Grid, lmax: usize) -> Result<Vec<Vec<f64>>> {
    if lmax > MAX_DEGREE {
        return Err(Error::Capability(format!("degree {lmax} exceeds supported maximum {MAX_DEGREE}")));
    }
    if grid.exact_degree() < 2 * lmax {
        return Err(Error::Capability(format!(
            "grid exact to degree {} cannot resolve L_max = {lmax}",
            grid.exact_degree()
        )));
    }
    if values.len() != grid.len() {
        return Err(Error::Contract(format!("{} values for a grid of {} nodes", values.len(), grid.len())));
    }
    let mut acc = vec![0.0; num_coeffs(lmax)];
    let mut buf = vec![0.0; num_coeffs(lmax)];
    for ((u, w), f) in grid.directions().iter().zip(grid.weights()).zip(values) {
        sph_harmonics_upto(lmax, *u, &mut buf);
        for (a, y) in acc.iter_mut().zip(&buf) {
            *a += w * f * y;
        }
    }
    Ok((0..=lmax).map(|l| acc[l * l..(l + 1) * (l + 1)].to_vec()).collect())
}

/// `f(g) = Σ_l tr(D^l(g)ᵀ F_l)` with `F_l` row-major `(2l+1)×(2l+1)`.
///
/// No `(2l+1)/8π²` weight is applied.
pub fn so3_synthesize(fl: &[Vec<f64>], g: &Rotation) -> f64 {
    let lmax = fl.len().saturating_sub(1);
    let blocks = wigner_blocks(lmax, g);
    fl.iter().zip(&blocks).map(|(f, d)| d.as_slice().iter().zip(f).map(|(a, b)| a * b).sum::<f64>()).sum()
}

/// Per-degree outer product `φ_l ψ_lᵀ`, the Fourier form of spherical correlation.
pub fn outer_per_degree(phi: &[Vec<f64>], psi: &[Vec<f64>]) -> Vec<Vec<f64>> {
    phi.iter()
        .zip(psi)
        .map(|(a, b)| {
            let mut out = Vec::with_capacity(a.len() * b.len());
            for x in a {
                out.extend(b.iter().map(|y| x * y));
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::wigner::wigner_d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_coeffs(rng: &mut impl Rng, lmax: usize) -> Vec<Vec<f64>> {
        (0..=lmax).map(|l| (0..2 * l + 1).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn constant_function_analysis() {
        let grid = S2Grid::gauss_legendre(8);
        let c = s2_analyze(&vec![1.0; grid.len()], &grid, 4).unwrap();
        assert!((c[0][0] - 2.0 * std::f64::consts::PI.sqrt()).abs() < 1e-8);
        for l in 1..=4 {
            assert!(c[l].iter().all(|v| v.abs() < 1e-8));
        }
    }

    #[test]
    fn constant_mode_synthesis() {
        let grid = S2Grid::gauss_legendre(6);
        let vals = s2_synthesize(&[vec![2.0 * std::f64::consts::PI.sqrt()]], &grid);
        assert!(vals.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_harmonic_analysis() {
        let grid = S2Grid::gauss_legendre(6);
        let mut coeffs = vec![vec![0.0], vec![0.0; 3], vec![0.0; 5]];
        coeffs[2][3] = 1.0; // Y_2^1
        let vals = s2_synthesize(&coeffs, &grid);
        let c = s2_analyze(&vals, &grid, 3).unwrap();
        for (l, block) in c.iter().enumerate() {
            for (i, v) in block.iter().enumerate() {
                let e = if l == 2 && i == 3 { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn round_trip_band_limited() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lmax = 5;
        let grid = S2Grid::gauss_legendre(2 * lmax);
        let c = random_coeffs(&mut rng, lmax);
        let back = s2_analyze(&s2_synthesize(&c, &grid), &grid, lmax).unwrap();
        let num: f64 = c.iter().flatten().zip(back.iter().flatten()).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = c.iter().flatten().map(|a| a * a).sum();
        assert!((num / den).sqrt() < 1e-8);
    }

    #[test]
    fn insufficient_grid_is_capability_error() {
        let grid = S2Grid::gauss_legendre(3);
        assert!(matches!(s2_analyze(&vec![0.0; grid.len()], &grid, 2), Err(Error::Capability(_))));
    }

    #[test]
    fn rotated_coefficients_synthesize_rotated_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lmax = 3;
        let c = random_coeffs(&mut rng, lmax);
        let r = Rotation::random(&mut rng);
        let rc: Vec<Vec<f64>> = c.iter().enumerate().map(|(l, v)| wigner_d(l, &r).unwrap().apply_vec(v)).collect();
        let grid = S2Grid::gauss_legendre(4);
        let lhs = s2_synthesize(&rc, &grid);
        let inv = r.inverse();
        let moved: Vec<_> = grid.directions().iter().map(|u| inv.apply(*u)).collect();
        let probe = S2Grid::gauss_legendre(4);
        let _ = probe;
        let mut buf = vec![0.0; num_coeffs(lmax)];
        for (i, u) in moved.iter().enumerate() {
            sph_harmonics_upto(lmax, *u, &mut buf);
            let rhs: f64 = c.iter().flatten().zip(&buf).map(|(a, b)| a * b).sum();
            assert!((lhs[i] - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn so3_degree_zero_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = vec![vec![1.7]];
        for _ in 0..10 {
            assert!((so3_synthesize(&f, &Rotation::random(&mut rng)) - 1.7).abs() < 1e-15);
        }
    }

    /// Fourier-domain correlation against direct quadrature of ∫ φ(u) ψ(g⁻¹u) du.
    #[test]
    fn fourier_convolution_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lmax = 3;
        let grid = S2Grid::gauss_legendre(2 * lmax);
        let mut buf = vec![0.0; num_coeffs(lmax)];
        for _ in 0..20 {
            let phi = random_coeffs(&mut rng, lmax);
            let psi = random_coeffs(&mut rng, lmax);
            let g = Rotation::random(&mut rng);
            let fourier = so3_synthesize(&outer_per_degree(&phi, &psi), &g);
            let phi_vals = s2_synthesize(&phi, &grid);
            let ginv = g.inverse();
            let quad: f64 = grid
                .directions()
                .iter()
                .zip(grid.weights())
                .zip(&phi_vals)
                .map(|((u, w), fv)| {
                    sph_harmonics_upto(lmax, ginv.apply(*u), &mut buf);
                    let pv: f64 = psi.iter().flatten().zip(&buf).map(|(a, b)| a * b).sum();
                    w * fv * pv
                })
                .sum();
            assert!((fourier - quad).abs() / quad.abs().max(1e-3) < 1e-6, "{fourier} vs {quad}");
        }
    }

    #[test]
    fn left_translation_by_coefficient_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lmax = 3;
        let f: Vec<Vec<f64>> = (0..=lmax).map(|l| (0..(2 * l + 1) * (2 * l + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let r = Rotation::random(&mut rng);
        let rf: Vec<Vec<f64>> = f
            .iter()
            .enumerate()
            .map(|(l, m)| {
                let d = wigner_d(l, &r).unwrap();
                let n = 2 * l + 1;
                let mut out = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = (0..n).map(|k| d.get(i as i64 - l as i64, k as i64 - l as i64) * m[k * n + j]).sum();
                    }
                }
                out
            })
            .collect();
        for _ in 0..20 {
            let g = Rotation::random(&mut rng);
            let lhs = so3_synthesize(&rf, &g);
            let rhs = so3_synthesize(&f, &r.inverse().compose(&g));
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
