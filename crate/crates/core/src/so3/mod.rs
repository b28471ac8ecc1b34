//! Rotations, real spherical harmonics, Wigner D-matrices and the
//! S²/SO(3) Fourier transforms used by every equivariant layer.

pub mod grid;
pub mod harmonics;
pub mod rotation;
pub mod transform;
pub mod wigner;

/// Highest degree supported by the harmonic and Wigner kernels.
pub const MAX_DEGREE: usize = 8;

/// Default band limit for hidden features.
pub const DEFAULT_LMAX: usize = 3;

pub use grid::{S2Grid, SO3Grid};
pub use harmonics::{num_coeffs, real_sph_harmonics, sph_harmonics_upto};
pub use rotation::{add, dist, dot, mat_vec, norm, scale, sub, Mat3, RigidTransform, Rotation, Vec3};
pub use transform::{outer_per_degree, s2_analyze, s2_synthesize, so3_synthesize};
pub use wigner::{wigner_blocks, wigner_d, WignerBlock};

/// Maps a Cartesian vector to the `(y, z, x)` ordering of degree-1 coefficients.
pub fn vector_to_l1(v: Vec3) -> [f64; 3] {
    [v[1], v[2], v[0]]
}

/// Inverse of [`vector_to_l1`].
pub fn l1_to_vector(c: &[f64]) -> Vec3 {
    [c[2], c[0], c[1]]
}
