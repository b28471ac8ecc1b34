//! Quadrature grids on S² and candidate grids on SO(3).

use std::f64::consts::PI;

use rand::Rng;

use super::rotation::{Rotation, Vec3};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Product quadrature on the sphere: Gauss–Legendre in `cos θ`, uniform in φ.
#[derive(Clone, Debug)]
pub struct S2Grid {
    dirs: Vec<Vec3>,
    weights: Vec<f64>,
    exact_degree: usize,
}

impl S2Grid {
    /// Grid integrating every polynomial of total degree `≤ degree` exactly.
    pub fn gauss_legendre(degree: usize) -> Self {
        let n_theta = degree / 2 + 1;
        let n_phi = degree + 1;
        let (zs, ws) = gauss_legendre(n_theta);
        let mut dirs = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        let dphi = 2.0 * PI / n_phi as f64;
        for (z, w) in zs.iter().zip(&ws) {
            let s = (1.0 - z * z).max(0.0).sqrt();
            for j in 0..n_phi {
                let phi = (j as f64 + 0.5) * dphi;
                dirs.push([s * phi.cos(), s * phi.sin(), *z]);
                weights.push(w * dphi);
            }
        }
        Self { dirs, weights, exact_degree: degree }
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.dirs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    /// Largest polynomial degree integrated exactly.
    pub fn exact_degree(&self) -> usize {
        self.exact_degree
    }
}

/// Candidate rotations for the rotational action.
#[derive(Clone, Debug)]
pub struct SO3Grid {
    rotations: Vec<Rotation>,
    resolution: f64,
}

impl SO3Grid {
    /// Equiangular ZYZ Euler grid with midpoint samples in β.
    ///
    /// The nominal resolution is the covering radius estimated from random
    /// probes (see [`SO3Grid::estimate_covering_radius`]).
    pub fn equiangular(n_alpha: usize, n_beta: usize, n_gamma: usize) -> Self {
        let mut rotations = Vec::with_capacity(n_alpha * n_beta * n_gamma);
        for i in 0..n_alpha {
            let alpha = 2.0 * PI * i as f64 / n_alpha as f64;
            for j in 0..n_beta {
                let beta = PI * (j as f64 + 0.5) / n_beta as f64;
                for k in 0..n_gamma {
                    let gamma = 2.0 * PI * k as f64 / n_gamma as f64;
                    rotations.push(Rotation::from_euler_zyz(alpha, beta, gamma));
                }
            }
        }
        let mut grid = Self { rotations, resolution: 0.0 };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0x5eed);
        grid.resolution = grid.estimate_covering_radius(&mut rng, 4000);
        grid
    }

    /// Default 4608-element grid (24 × 8 × 24).
    pub fn default_grid() -> Self {
        Self::equiangular(24, 8, 24)
    }

    /// Grid used with features band-limited at `lmax`. Degrees up to 3 share
    /// the default grid.
    pub fn for_lmax(lmax: usize) -> Self {
        if lmax <= 3 {
            Self::default_grid()
        } else {
            let n = 8 * lmax;
            Self::equiangular(n, n.div_ceil(3), n)
        }
    }

    pub fn from_rotations(rotations: Vec<Rotation>, resolution: f64) -> Self {
        Self { rotations, resolution }
    }

    pub fn rotations(&self) -> &[Rotation] {
        &self.rotations
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    /// Nominal geodesic resolution δ in radians.
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Index of the grid element geodesically closest to `r`.
    pub fn nearest(&self, r: &Rotation) -> (usize, f64) {
        let q = r.quaternion();
        let mut best = (0, -1.0);
        for (i, g) in self.rotations.iter().enumerate() {
            let p = g.quaternion();
            let d = (q[0] * p[0] + q[1] * p[1] + q[2] * p[2] + q[3] * p[3]).abs();
            if d > best.1 {
                best = (i, d);
            }
        }
        (best.0, 2.0 * best.1.min(1.0).acos())
    }

    /// The grid carried by a left rotation: `{ r · g }`.
    pub fn rotated(&self, r: &Rotation) -> SO3Grid {
        SO3Grid { rotations: self.rotations.iter().map(|g| r.compose(g)).collect(), resolution: self.resolution }
    }

    /// Largest nearest-element distance over `probes` uniform random rotations.
    pub fn estimate_covering_radius<R: Rng + ?Sized>(&self, rng: &mut R, probes: usize) -> f64 {
        (0..probes).map(|_| self.nearest(&Rotation::random(rng)).1).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        for k in 0..12 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn s2_weights_sum_to_four_pi() {
        for deg in [0, 1, 4, 6, 16] {
            let g = S2Grid::gauss_legendre(deg);
            let s: f64 = g.weights().iter().sum();
            assert!((s - 4.0 * PI).abs() < 1e-8);
            assert!(g.weights().iter().all(|w| *w > 0.0));
            for d in g.directions() {
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn default_so3_grid_size_and_coverage() {
        let g = SO3Grid::default_grid();
        assert_eq!(g.len(), 4608);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cover = g.estimate_covering_radius(&mut rng, 3000);
        assert!(cover <= g.resolution() + 0.02, "{cover} vs {}", g.resolution());
        assert!(g.resolution() < 15f64.to_radians(), "resolution {} deg", g.resolution().to_degrees());
    }

    #[test]
    fn nearest_finds_exact_member() {
        let g = SO3Grid::equiangular(6, 3, 6);
        let (i, d) = g.nearest(&g.rotations()[17]);
        assert_eq!(i, 17);
        assert!(d < 1e-7);
    }
}
